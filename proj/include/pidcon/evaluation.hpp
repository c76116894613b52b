#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pidcon/dataset.hpp"
#include "pidcon/models.hpp"
#include "pidcon/oracle.hpp"
#include "pidcon/physics.hpp"

namespace pidcon {

struct EvalReport {
  std::vector<std::uint64_t> ids;
  std::vector<double> errors;
  double mean = 0.0;
  double std = 0.0;
  double bin_width = 0.01;
  std::vector<std::size_t> histogram;
  std::uint64_t best_id = 0;
  std::uint64_t worst_id = 0;
  Tensor mae_nodes;
  Tensor mae;

  bool operator==(const EvalReport&) const = default;
};

/// Mean and population standard deviation.
inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double s = 0.0;
  for (double x : xs) s += x;
  const double m = s / static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  return {m, std::sqrt(v / static_cast<double>(xs.size()))};
}

/// Counts per bin [k w, (k + 1) w); the last bin holds the maximum.
inline std::vector<std::size_t> histogram(const std::vector<double>& xs, double width) {
  if (xs.empty()) return {};
  const double top = *std::max_element(xs.begin(), xs.end());
  const std::size_t bins = static_cast<std::size_t>(std::floor(top / width + 1e-9)) + 1;
  std::vector<std::size_t> counts(bins, 0);
  for (double x : xs) {
    const auto k = static_cast<std::size_t>(std::max(0.0, std::floor(x / width + 1e-9)));
    ++counts[std::min(k, bins - 1)];
  }
  return counts;
}

/// Fills the summary statistics of a report from its ids and errors.
inline void summarize(EvalReport& r) {
  std::tie(r.mean, r.std) = mean_std(r.errors);
  r.histogram = histogram(r.errors, r.bin_width);
  if (r.errors.empty()) return;
  const auto lo = std::min_element(r.errors.begin(), r.errors.end());
  const auto hi = std::max_element(r.errors.begin(), r.errors.end());
  r.best_id = r.ids[static_cast<std::size_t>(lo - r.errors.begin())];
  r.worst_id = r.ids[static_cast<std::size_t>(hi - r.errors.begin())];
}

/// "2.50% ± 1.11%"
inline std::string format_mean_std(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f%% ± %.2f%%", 100.0 * mean, 100.0 * std);
  return buf;
}

inline const ReferenceField& find_reference(const std::vector<ReferenceField>& refs, std::uint64_t id) {
  for (const auto& f : refs)
    if (f.id == id) return f;
  throw ValidationError("no reference field for realization " + std::to_string(id));
}

/// Relative L2 error of the model on every realization against its reference.
/// When all references share one node set, also records the per-node mean
/// absolute error (averaged over realizations).
inline EvalReport evaluate(const OperatorModel& model, ParamStore& store, const Problem& problem,
                           const std::vector<Realization>& rs, const std::vector<ReferenceField>& refs) {
  EvalReport rep;
  bool shared = !rs.empty();
  const ReferenceField* first = nullptr;
  for (const auto& r : rs) {
    const ReferenceField& ref = find_reference(refs, r.id);
    if (ref.values.cols() != model.outputs()) {
      throw ShapeError("reference for realization " + std::to_string(r.id) + " has " +
                       std::to_string(ref.values.cols()) + " channels, model has " + std::to_string(model.outputs()));
    }
    const auto inputs = branch_inputs(problem.physics.kind, r, problem.map);
    const Tensor pred = model.predict(store, inputs, problem.map.to_normalized(ref.nodes));
    rep.ids.push_back(r.id);
    rep.errors.push_back(rel_l2(pred, ref.values));
    if (!first) {
      first = &ref;
      rep.mae_nodes = ref.nodes;
      rep.mae = Tensor(ref.values.shape());
    } else if (!(ref.nodes == first->nodes)) {
      shared = false;
    }
    if (shared) {
      for (std::size_t i = 0; i < pred.size(); ++i) rep.mae[i] += std::abs(pred[i] - ref.values[i]);
    }
  }
  if (shared) {
    for (double& v : rep.mae.data()) v /= static_cast<double>(rs.size());
  } else {
    rep.mae_nodes = Tensor();
    rep.mae = Tensor();
  }
  summarize(rep);
  return rep;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline constexpr int kReportVersion = 1;

inline nlohmann::json tensor_rows(const Tensor& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < t.rows() && t.size() > 0; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < t.cols(); ++j) row.push_back(t(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Tensor tensor_from_rows(const nlohmann::json& rows, std::size_t cols_if_empty = 0) {
  if (!rows.is_array()) throw ValidationError("expected an array of rows");
  if (rows.empty()) return cols_if_empty ? Tensor(Shape{0, cols_if_empty}) : Tensor();
  const std::size_t n = rows.size(), c = rows[0].size();
  Tensor t(Shape{n, c});
  for (std::size_t i = 0; i < n; ++i) {
    if (!rows[i].is_array() || rows[i].size() != c) throw ValidationError("ragged row " + std::to_string(i));
    for (std::size_t j = 0; j < c; ++j) t(i, j) = rows[i][j].get<double>();
  }
  return t;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["format"] = "pidcon-eval";
  j["version"] = kReportVersion;
  j["ids"] = r.ids;
  j["errors"] = r.errors;
  j["mean"] = r.mean;
  j["std"] = r.std;
  j["bin_width"] = r.bin_width;
  j["histogram"] = r.histogram;
  j["best_id"] = r.best_id;
  j["worst_id"] = r.worst_id;
  j["mae_nodes"] = tensor_rows(r.mae_nodes);
  j["mae"] = tensor_rows(r.mae);
  j["summary"] = format_mean_std(r.mean, r.std);
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "pidcon-eval") throw ValidationError("not an evaluation report");
  if (j.value("version", 0) != kReportVersion) {
    throw ValidationError("unsupported evaluation report version " + j.value("version", nlohmann::json()).dump());
  }
  EvalReport r;
  r.ids = j.at("ids").get<std::vector<std::uint64_t>>();
  r.errors = j.at("errors").get<std::vector<double>>();
  r.mean = j.at("mean").get<double>();
  r.std = j.at("std").get<double>();
  r.bin_width = j.at("bin_width").get<double>();
  r.histogram = j.at("histogram").get<std::vector<std::size_t>>();
  r.best_id = j.at("best_id").get<std::uint64_t>();
  r.worst_id = j.at("worst_id").get<std::uint64_t>();
  r.mae_nodes = tensor_from_rows(j.at("mae_nodes"));
  r.mae = tensor_from_rows(j.at("mae"));
  return r;
}

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// id,rel_l2 rows.
inline std::string errors_csv(const EvalReport& r) {
  std::string s = "id,rel_l2\n";
  for (std::size_t i = 0; i < r.ids.size(); ++i) s += std::to_string(r.ids[i]) + "," + fmt_double(r.errors[i]) + "\n";
  return s;
}

/// bin_lo_pct,bin_hi_pct,count rows.
inline std::string histogram_csv(const EvalReport& r) {
  std::string s = "bin_lo_pct,bin_hi_pct,count\n";
  for (std::size_t k = 0; k < r.histogram.size(); ++k) {
    s += fmt_double(100.0 * r.bin_width * static_cast<double>(k)) + "," +
         fmt_double(100.0 * r.bin_width * static_cast<double>(k + 1)) + "," + std::to_string(r.histogram[k]) + "\n";
  }
  return s;
}

/// x,y,mae[,mae_1] rows for external plotting.
inline std::string mae_csv(const EvalReport& r) {
  std::string s = r.mae.cols() > 1 ? "x,y,mae_u,mae_v\n" : "x,y,mae\n";
  for (std::size_t i = 0; i < r.mae_nodes.rows() && r.mae.size() > 0; ++i) {
    s += fmt_double(r.mae_nodes(i, 0)) + "," + fmt_double(r.mae_nodes(i, 1));
    for (std::size_t c = 0; c < r.mae.cols(); ++c) s += "," + fmt_double(r.mae(i, c));
    s += "\n";
  }
  return s;
}

}  // namespace pidcon
