#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pidcon/dataset.hpp"
#include "pidcon/evaluation.hpp"
#include "pidcon/models.hpp"
#include "pidcon/physics.hpp"
#include "pidcon/training.hpp"

namespace pidcon {

using json = nlohmann::json;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
inline void write_atomic(const std::filesystem::path& path, std::string_view bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path() && !fs::exists(path.parent_path())) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move " + tmp.string() + " to " + path.string());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct RunConfig {
  ProblemSpec physics = ProblemSpec::darcy();
  DatasetSpec data = DatasetSpec::darcy_defaults();
  std::string model_kind = "dcon";
  DconConfig dcon;
  DeepOnetConfig deeponet;
  TrainConfig train;
  std::vector<double> grid_lr{std::begin(TrainConfig::kLrGrid), std::end(TrainConfig::kLrGrid)};
  std::vector<double> grid_ratio{std::begin(TrainConfig::kRatioGrid), std::end(TrainConfig::kRatioGrid)};
  std::size_t grid_epochs = 20;
  double oracle_h = 0.0;
  std::uint64_t seed = 0;
  std::size_t n = 50;
  std::vector<std::size_t> ablate_layers{1, 2, 3, 4};

  Problem problem() const { return Problem::make(physics, data); }

  /// Grid spacing for the oracle: configured, or 1/64 of the domain scale.
  double oracle_spacing(const Problem& p) const { return oracle_h > 0.0 ? oracle_h : p.geometry.scale() / 64.0; }
};

namespace detail {

inline void reject_unknown(const json& block, std::string_view where, std::initializer_list<std::string_view> keys) {
  if (!block.is_object()) throw ValidationError(std::string(where) + ": expected an object");
  for (const auto& [k, v] : block.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw ValidationError(std::string(where) + ": unknown key '" + k + "'");
    }
  }
}

template <class T>
void read_opt(const json& block, const char* key, T& out, std::string_view where) {
  if (!block.contains(key)) return;
  try {
    out = block.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string(where) + "." + key + ": " + e.what());
  }
}

inline std::string tag_key(BoundaryTag t) { return std::string(tag_name(t)); }

}  // namespace detail

inline json problem_to_json(const RunConfig& c) {
  json counts = json::object();
  for (const auto& [t, r] : c.data.counts) counts[detail::tag_key(t)] = {r.lo, r.hi};
  return {{"kind", std::string(kind_name(c.physics.kind))},
          {"geometry", c.data.geometry},
          {"geometry_params", c.data.geometry_params},
          {"material", {{"f", c.physics.material.f}, {"E", c.physics.material.E}, {"mu", c.physics.material.mu}}},
          {"weights", c.physics.weights},
          {"gp",
           {{"mean", c.data.gp.mean},
            {"length_scale", c.data.gp.length_scale},
            {"axis", std::string(axis_name(c.data.gp.axis))},
            {"jitter", c.data.gp.jitter}}},
          {"counts", counts},
          {"boundary", c.data.zero_boundary ? "zero" : "gp"},
          {"profile_knots", c.data.profile_knots}};
}

inline json model_to_json(const RunConfig& c) {
  if (c.model_kind == "dcon") {
    return {{"kind", "dcon"},
            {"q", c.dcon.q},
            {"layers", c.dcon.layers},
            {"branch_depth", c.dcon.branch_depth},
            {"outputs", c.dcon.outputs},
            {"value_channels", c.dcon.value_channels},
            {"side_channels", c.dcon.side_channels}};
  }
  return {{"kind", "deeponet"},
          {"q", c.deeponet.q},
          {"depth", c.deeponet.depth},
          {"m_fixed", c.deeponet.m_fixed},
          {"value_channels", c.deeponet.value_channels},
          {"outputs", c.deeponet.outputs}};
}

inline json train_to_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  return {{"lr", t.lr},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"eps", t.eps},
          {"batch_size", t.batch_size},
          {"epochs", t.epochs},
          {"sample_ratio", t.sample_ratio},
          {"pool_size", t.pool_size},
          {"split", {t.split_train, t.split_val, t.split_test}},
          {"mode", std::string(mode_name(t.mode))},
          {"val_every", t.val_every},
          {"check_finite", t.check_finite},
          {"grid_lr", c.grid_lr},
          {"grid_ratio", c.grid_ratio},
          {"grid_epochs", c.grid_epochs},
          {"ablate_layers", c.ablate_layers}};
}

inline json config_to_json(const RunConfig& c) {
  return {{"problem", problem_to_json(c)},
          {"model", model_to_json(c)},
          {"train", train_to_json(c)},
          {"oracle", {{"h", c.oracle_h}}},
          {"io", {{"seed", c.seed}, {"n", c.n}}}};
}

/// Fills model channel counts from the problem and, for a fixed-size
/// DeepONet branch, m_fixed from the fixed boundary counts.
inline void derive_model_shape(RunConfig& c) {
  c.dcon.outputs = c.physics.outputs();
  c.dcon.value_channels = c.physics.value_channels();
  c.dcon.side_channels = c.physics.side_channels();
  c.deeponet.outputs = c.physics.outputs();
  c.deeponet.value_channels = c.physics.value_channels();
  if (c.deeponet.m_fixed == 0) {
    std::size_t m = 0;
    const auto tags = c.physics.kind == ProblemKind::Darcy ? std::vector{BoundaryTag::Outer}
                                                           : std::vector{BoundaryTag::Left, BoundaryTag::Right};
    for (BoundaryTag t : tags) {
      const auto it = c.data.counts.find(t);
      if (it == c.data.counts.end() || it->second.lo != it->second.hi) {
        m = 0;
        break;
      }
      m += it->second.lo;
    }
    c.deeponet.m_fixed = m;
  }
}

/// Parses a run configuration; missing keys keep their documented defaults
/// and unknown keys are rejected.
inline RunConfig config_from_json(const json& j) {
  using detail::read_opt;
  detail::reject_unknown(j, "config", {"problem", "model", "train", "oracle", "io"});
  RunConfig c;
  if (j.contains("problem")) {
    const json& p = j["problem"];
    detail::reject_unknown(p, "problem",
                           {"kind", "geometry", "geometry_params", "material", "weights", "gp", "counts", "boundary",
                            "profile_knots"});
    std::string kind = "darcy";
    read_opt(p, "kind", kind, "problem");
    c.physics.kind = parse_kind(kind);
    if (c.physics.kind == ProblemKind::Plate) {
      c.physics = ProblemSpec::plate();
      c.data = DatasetSpec::plate_defaults();
    }
    read_opt(p, "geometry", c.data.geometry, "problem");
    read_opt(p, "geometry_params", c.data.geometry_params, "problem");
    if (p.contains("material")) {
      const json& m = p["material"];
      detail::reject_unknown(m, "problem.material", {"f", "E", "mu"});
      read_opt(m, "f", c.physics.material.f, "problem.material");
      read_opt(m, "E", c.physics.material.E, "problem.material");
      read_opt(m, "mu", c.physics.material.mu, "problem.material");
    }
    if (p.contains("weights")) {
      const json& w = p["weights"];
      detail::reject_unknown(w, "problem.weights", {"pde", "hole", "outer", "left", "right", "topbot"});
      for (const auto& [k, v] : w.items()) c.physics.weights[k] = v.get<double>();
    }
    if (p.contains("gp")) {
      const json& g = p["gp"];
      detail::reject_unknown(g, "problem.gp", {"mean", "length_scale", "axis", "jitter"});
      read_opt(g, "mean", c.data.gp.mean, "problem.gp");
      read_opt(g, "length_scale", c.data.gp.length_scale, "problem.gp");
      read_opt(g, "jitter", c.data.gp.jitter, "problem.gp");
      if (g.contains("axis")) c.data.gp.axis = parse_axis(g["axis"].get<std::string>());
    }
    if (p.contains("counts")) {
      const json& cs = p["counts"];
      if (!cs.is_object()) throw ValidationError("problem.counts: expected an object");
      c.data.counts.clear();
      for (const auto& [k, v] : cs.items()) {
        const BoundaryTag t = parse_tag(k);
        if (v.is_number_unsigned()) {
          c.data.counts[t] = {v.get<std::size_t>(), v.get<std::size_t>()};
        } else if (v.is_array() && v.size() == 2) {
          c.data.counts[t] = {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
        } else {
          throw ValidationError("problem.counts." + k + ": expected a count or [lo, hi]");
        }
      }
    }
    if (p.contains("boundary")) {
      const std::string b = p["boundary"].get<std::string>();
      if (b != "gp" && b != "zero") throw ValidationError("problem.boundary: expected 'gp' or 'zero'");
      c.data.zero_boundary = b == "zero";
    }
    read_opt(p, "profile_knots", c.data.profile_knots, "problem");
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    detail::reject_unknown(m, "model",
                           {"kind", "q", "layers", "branch_depth", "depth", "m_fixed", "outputs", "value_channels",
                            "side_channels"});
    read_opt(m, "kind", c.model_kind, "model");
    if (c.model_kind != "dcon" && c.model_kind != "deeponet") {
      throw ValidationError("model.kind: expected 'dcon' or 'deeponet', got '" + c.model_kind + "'");
    }
    read_opt(m, "q", c.dcon.q, "model");
    c.deeponet.q = c.dcon.q;
    read_opt(m, "layers", c.dcon.layers, "model");
    read_opt(m, "branch_depth", c.dcon.branch_depth, "model");
    read_opt(m, "depth", c.deeponet.depth, "model");
    c.deeponet.m_fixed = 0;
    read_opt(m, "m_fixed", c.deeponet.m_fixed, "model");
  } else {
    c.deeponet.m_fixed = 0;
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    detail::reject_unknown(t, "train",
                           {"lr", "beta1", "beta2", "eps", "batch_size", "epochs", "sample_ratio", "pool_size",
                            "split", "mode", "val_every", "check_finite", "grid_lr", "grid_ratio", "grid_epochs",
                            "ablate_layers"});
    read_opt(t, "lr", c.train.lr, "train");
    read_opt(t, "beta1", c.train.beta1, "train");
    read_opt(t, "beta2", c.train.beta2, "train");
    read_opt(t, "eps", c.train.eps, "train");
    read_opt(t, "batch_size", c.train.batch_size, "train");
    read_opt(t, "epochs", c.train.epochs, "train");
    read_opt(t, "sample_ratio", c.train.sample_ratio, "train");
    read_opt(t, "pool_size", c.train.pool_size, "train");
    if (t.contains("split")) {
      const auto s = t["split"].get<std::vector<double>>();
      if (s.size() != 3) throw ValidationError("train.split: expected [train, val, test]");
      c.train.split_train = s[0];
      c.train.split_val = s[1];
      c.train.split_test = s[2];
    }
    if (t.contains("mode")) c.train.mode = parse_mode(t["mode"].get<std::string>());
    read_opt(t, "val_every", c.train.val_every, "train");
    read_opt(t, "check_finite", c.train.check_finite, "train");
    read_opt(t, "grid_lr", c.grid_lr, "train");
    read_opt(t, "grid_ratio", c.grid_ratio, "train");
    read_opt(t, "grid_epochs", c.grid_epochs, "train");
    read_opt(t, "ablate_layers", c.ablate_layers, "train");
  }
  if (j.contains("oracle")) {
    detail::reject_unknown(j["oracle"], "oracle", {"h"});
    read_opt(j["oracle"], "h", c.oracle_h, "oracle");
  }
  if (j.contains("io")) {
    detail::reject_unknown(j["io"], "io", {"seed", "n"});
    read_opt(j["io"], "seed", c.seed, "io");
    read_opt(j["io"], "n", c.n, "io");
  }
  derive_model_shape(c);
  c.train.seed = c.seed;
  c.physics.validate();
  c.train.validate();
  if (c.model_kind == "dcon") c.dcon.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

inline std::unique_ptr<OperatorModel> make_model(const RunConfig& c) {
  if (c.model_kind == "dcon") return std::make_unique<DconModel>(c.dcon);
  if (c.deeponet.m_fixed == 0) {
    throw ValidationError("deeponet needs a fixed number of branch points: set model.m_fixed or fixed counts");
  }
  return std::make_unique<DeepOnetModel>(c.deeponet);
}

// ---------------------------------------------------------------------------
// Realization and reference files: a JSON header line, then one record per line
// ---------------------------------------------------------------------------

inline constexpr int kDataVersion = 1;

namespace detail {

inline json header_line(std::string_view format, json extra) {
  json h = {{"format", format}, {"version", kDataVersion}};
  h.update(extra);
  return h;
}

inline std::vector<json> read_lines(const std::filesystem::path& path, std::string_view format) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<json> out;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw ValidationError(path.string() + ": empty file");
  const json& h = out.front();
  if (h.value("format", "") != format) {
    throw ValidationError(path.string() + ":1: expected format '" + std::string(format) + "'");
  }
  if (h.value("version", 0) != kDataVersion) {
    throw ValidationError(path.string() + ":1: unsupported version " + h.value("version", json()).dump());
  }
  return out;
}

}  // namespace detail

inline json realization_to_json(const Realization& r) {
  json sets = json::array();
  for (const auto& s : r.sets) {
    sets.push_back({{"tag", detail::tag_key(s.tag)},
                    {"points", tensor_rows(s.points)},
                    {"channels", s.values.cols()},
                    {"values", tensor_rows(s.values)}});
  }
  json profiles = json::array();
  for (const auto& p : r.profiles) {
    profiles.push_back({{"name", p.name},
                        {"gp",
                         {{"mean", p.spec.mean},
                          {"length_scale", p.spec.length_scale},
                          {"axis", std::string(axis_name(p.spec.axis))},
                          {"jitter", p.spec.jitter}}},
                        {"knots", p.knots},
                        {"values", p.values}});
  }
  return {{"id", r.id}, {"seed", r.seed}, {"sets", sets}, {"profiles", profiles}};
}

inline Realization realization_from_json(const json& j) {
  Realization r;
  r.id = j.at("id").get<std::uint64_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& s : j.at("sets")) {
    BoundarySet b;
    b.tag = parse_tag(s.at("tag").get<std::string>());
    b.points = tensor_from_rows(s.at("points"), 2);
    const std::size_t channels = s.value("channels", std::size_t{0});
    b.values = channels == 0 ? Tensor(Shape{b.points.rows(), 0}) : tensor_from_rows(s.at("values"), channels);
    if (b.points.cols() != 2 || b.values.rows() != b.points.rows()) {
      throw ValidationError("realization " + std::to_string(r.id) + ": " + detail::tag_key(b.tag) +
                            " points and values differ in length");
    }
    r.sets.push_back(std::move(b));
  }
  for (const auto& p : j.at("profiles")) {
    GpProfile g;
    g.name = p.at("name").get<std::string>();
    const json& s = p.at("gp");
    g.spec = GPSpec{s.at("mean").get<double>(), s.at("length_scale").get<double>(),
                    parse_axis(s.at("axis").get<std::string>()), s.at("jitter").get<double>()};
    g.knots = p.at("knots").get<std::vector<double>>();
    g.values = p.at("values").get<std::vector<double>>();
    if (g.knots.size() != g.values.size() || g.knots.empty()) {
      throw ValidationError("realization " + std::to_string(r.id) + ": malformed profile " + g.name);
    }
    r.profiles.push_back(std::move(g));
  }
  return r;
}

inline std::string realizations_to_string(const std::vector<Realization>& rs, const json& problem,
                                          std::uint64_t seed) {
  std::string s = detail::header_line("pidcon-realizations", {{"count", rs.size()}, {"seed", seed}, {"problem", problem}})
                      .dump();
  s += "\n";
  for (const auto& r : rs) s += realization_to_json(r).dump() + "\n";
  return s;
}

inline void save_realizations(const std::filesystem::path& path, const std::vector<Realization>& rs,
                              const json& problem, std::uint64_t seed) {
  write_atomic(path, realizations_to_string(rs, problem, seed));
}

struct RealizationFile {
  json header;
  std::vector<Realization> realizations;
};

inline RealizationFile load_realizations(const std::filesystem::path& path) {
  auto lines = detail::read_lines(path, "pidcon-realizations");
  RealizationFile f{lines.front(), {}};
  for (std::size_t i = 1; i < lines.size(); ++i) {
    try {
      f.realizations.push_back(realization_from_json(lines[i]));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  if (f.header.contains("count") && f.header["count"].get<std::size_t>() != f.realizations.size()) {
    throw ValidationError(path.string() + ": header announces " + f.header["count"].dump() + " records, found " +
                          std::to_string(f.realizations.size()));
  }
  return f;
}

/// Node coordinates are stored once in the header when every field shares them.
inline std::string references_to_string(const std::vector<ReferenceField>& refs) {
  bool shared = !refs.empty();
  for (const auto& r : refs) shared = shared && r.nodes == refs.front().nodes;
  json extra = {{"count", refs.size()}};
  if (shared) extra["nodes"] = tensor_rows(refs.front().nodes);
  std::string s = detail::header_line("pidcon-references", extra).dump() + "\n";
  for (const auto& r : refs) {
    json rec = {{"id", r.id}, {"provenance", r.provenance}, {"values", tensor_rows(r.values)}};
    if (!shared) rec["nodes"] = tensor_rows(r.nodes);
    s += rec.dump() + "\n";
  }
  return s;
}

inline void save_references(const std::filesystem::path& path, const std::vector<ReferenceField>& refs) {
  write_atomic(path, references_to_string(refs));
}

inline std::vector<ReferenceField> load_references(const std::filesystem::path& path) {
  const auto lines = detail::read_lines(path, "pidcon-references");
  const json& h = lines.front();
  Tensor shared;
  if (h.contains("nodes")) shared = tensor_from_rows(h["nodes"], 2);
  std::vector<ReferenceField> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const json& rec = lines[i];
    try {
      ReferenceField f;
      f.id = rec.at("id").get<std::uint64_t>();
      f.provenance = rec.value("provenance", "external-file");
      f.nodes = rec.contains("nodes") ? tensor_from_rows(rec["nodes"], 2) : shared;
      f.values = tensor_from_rows(rec.at("values"));
      if (f.nodes.rows() != f.values.rows() || f.nodes.cols() != 2 || f.nodes.size() == 0) {
        throw ValidationError("nodes and values differ in length");
      }
      out.push_back(std::move(f));
    } catch (const std::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: "PDCN" | u32 version | u32 len | JSON | u32 count | tensors | u32 crc32
// Each tensor: u32 name length, name, u32 rank, u64 dims, then value, m and v
// as little-endian f64.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  json config;
  TrainState state;
  ParamStore store;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { buf_.append(s); }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view s) : s_(s) {}
  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > s_.size()) throw ValidationError("checkpoint: truncated file");
  }
  std::string_view s_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::string_view s) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

}  // namespace detail

inline std::string checkpoint_to_bytes(const Checkpoint& c) {
  detail::ByteWriter w;
  w.bytes("PDCN");
  w.u32(kCheckpointVersion);
  json head = {{"config", c.config},
               {"state",
                {{"step", c.state.step},
                 {"epoch", c.state.epoch},
                 {"best_epoch", c.state.best_epoch},
                 {"best_val", std::isfinite(c.state.best_val) ? json(c.state.best_val) : json(nullptr)}}}};
  const std::string hs = head.dump();
  w.u32(static_cast<std::uint32_t>(hs.size()));
  w.bytes(hs);
  w.u32(static_cast<std::uint32_t>(c.store.size()));
  for (const auto& e : c.store.entries()) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name);
    w.u32(static_cast<std::uint32_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) w.u64(d);
    for (const Tensor* t : {&e.value, &e.m, &e.v})
      for (double x : t->data()) w.f64(x);
  }
  std::string out = w.str();
  detail::ByteWriter tail;
  tail.u32(detail::crc32_of(out));
  return out + tail.str();
}

inline Checkpoint checkpoint_from_bytes(std::string_view bytes) {
  if (bytes.size() < 16 || bytes.substr(0, 4) != "PDCN") throw ValidationError("checkpoint: bad magic");
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  detail::ByteReader crc(bytes.substr(bytes.size() - 4));
  if (crc.u32() != detail::crc32_of(body)) throw ValidationError("checkpoint: checksum mismatch");
  detail::ByteReader r(body);
  r.bytes(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
  const json head = json::parse(r.bytes(r.u32()));
  Checkpoint c;
  c.config = head.at("config");
  const json& s = head.at("state");
  c.state.step = s.at("step").get<std::uint64_t>();
  c.state.epoch = s.at("epoch").get<std::size_t>();
  c.state.best_epoch = s.at("best_epoch").get<std::size_t>();
  c.state.best_val = s.at("best_val").is_null() ? std::numeric_limits<double>::infinity() : s["best_val"].get<double>();
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name(r.bytes(r.u32()));
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u64();
    Tensor value(shape), m(shape), v(shape);
    for (Tensor* t : {&value, &m, &v})
      for (double& x : t->data()) x = r.f64();
    c.store.add(name, std::move(value));
    auto& e = c.store.at(name);
    e.m = std::move(m);
    e.v = std::move(v);
  }
  if (!r.done()) throw ValidationError("checkpoint: trailing bytes");
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_atomic(path, checkpoint_to_bytes(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_bytes(read_file(path));
}

/// Copies values and moments into `store`, which must hold the same names
/// and shapes (i.e. the same architecture).
inline void restore_params(ParamStore& store, const ParamStore& saved) {
  if (store.size() != saved.size()) {
    throw ValidationError("checkpoint: " + std::to_string(saved.size()) + " tensors, model expects " +
                          std::to_string(store.size()));
  }
  for (auto& e : store.entries()) {
    if (!saved.contains(e.name)) throw ValidationError("checkpoint: missing parameter '" + e.name + "'");
    const auto& s = saved.at(e.name);
    if (s.value.shape() != e.value.shape()) {
      throw ValidationError("checkpoint: parameter '" + e.name + "' has shape " + shape_str(s.value.shape()) +
                            ", model expects " + shape_str(e.value.shape()));
    }
    e.value = s.value;
    e.m = s.m;
    e.v = s.v;
  }
}

// ---------------------------------------------------------------------------
// Training report files
// ---------------------------------------------------------------------------

/// epoch,loss,<terms...>,<val metric> rows; wall-clock lives in timing_csv so
/// this file is reproducible byte for byte.
inline std::string train_report_csv(const TrainReport& r) {
  std::set<std::string> names;
  for (const auto& e : r.epochs)
    for (const auto& [k, v] : e.terms) names.insert(k);
  std::string s = "epoch,loss";
  for (const auto& n : names) s += "," + n;
  s += "," + r.val_metric_name + "\n";
  for (const auto& e : r.epochs) {
    s += std::to_string(e.epoch) + "," + fmt_double(e.loss);
    for (const auto& n : names) {
      const auto it = e.terms.find(n);
      s += "," + (it == e.terms.end() ? std::string() : fmt_double(it->second));
    }
    s += "," + (e.val_metric ? fmt_double(*e.val_metric) : std::string()) + "\n";
  }
  return s;
}

inline std::string timing_csv(const TrainReport& r) {
  std::string s = "epoch,seconds\n";
  for (const auto& e : r.epochs) s += std::to_string(e.epoch) + "," + fmt_double(e.seconds) + "\n";
  return s;
}

}  // namespace pidcon
