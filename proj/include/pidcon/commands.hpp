#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pidcon/io.hpp"
#include "pidcon/oracle.hpp"
#include "pidcon/training.hpp"

namespace pidcon {

/// Options shared by the command-line verbs.
struct CommandOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<TrainMode> mode;
  std::optional<std::size_t> n;
  std::filesystem::path out;
  std::filesystem::path data;
  std::filesystem::path references;
  std::filesystem::path checkpoint;
  std::filesystem::path resume;
  std::string split = "test";
  std::vector<std::size_t> layers;
  bool quiet = false;
  std::ostream* log = nullptr;
};

namespace detail {

inline void say(const CommandOptions& o, const std::string& line) {
  if (!o.quiet && o.log) *o.log << line << '\n' << std::flush;
}

inline void require(const std::filesystem::path& p, const char* flag) {
  if (p.empty()) throw ValidationError(std::string("missing required option ") + flag);
}

inline std::vector<ReferenceField> refs_for(const std::vector<ReferenceField>& all, const std::vector<Realization>& rs) {
  std::vector<ReferenceField> out;
  for (const auto& r : rs) out.push_back(find_reference(all, r.id));
  return out;
}

}  // namespace detail

/// Config file (or defaults) with command-line overrides applied.
inline RunConfig resolve_config(const CommandOptions& o) {
  RunConfig c = o.config ? load_config(*o.config) : config_from_json(json::object());
  if (o.seed) {
    c.seed = *o.seed;
    c.train.seed = *o.seed;
  }
  if (o.mode) c.train.mode = *o.mode;
  if (o.n) c.n = *o.n;
  return c;
}

inline RealizationFile load_matching_data(const RunConfig& c, const std::filesystem::path& path) {
  RealizationFile f = load_realizations(path);
  if (f.header.contains("problem") && f.header["problem"] != problem_to_json(c)) {
    throw ValidationError(path.string() + ": generated for a different problem block than the current config");
  }
  return f;
}

// ---------------------------------------------------------------------------

inline std::vector<Realization> cmd_generate(const CommandOptions& o) {
  detail::require(o.out, "--out");
  const RunConfig c = resolve_config(o);
  const Problem p = c.problem();
  auto rs = generate_realizations(p, c.n, c.seed);
  save_realizations(o.out, rs, problem_to_json(c), c.seed);
  detail::say(o, "wrote " + std::to_string(rs.size()) + " realizations to " + o.out.string());
  return rs;
}

inline std::vector<ReferenceField> cmd_oracle(const CommandOptions& o) {
  detail::require(o.data, "--data");
  detail::require(o.out, "--out");
  const RunConfig c = resolve_config(o);
  const Problem p = c.problem();
  const auto data = load_matching_data(c, o.data);
  auto refs = darcy_references(p, data.realizations, c.oracle_spacing(p));
  save_references(o.out, refs);
  detail::say(o, "wrote " + std::to_string(refs.size()) + " reference fields (" +
                     std::to_string(refs.empty() ? 0 : refs.front().nodes.rows()) + " nodes) to " + o.out.string());
  return refs;
}

struct TrainOutcome {
  TrainReport report;
  TrainState state;
  std::optional<EvalReport> test;
};

namespace detail {

inline TrainOutcome train_run(const RunConfig& c, const CommandOptions& o, const std::filesystem::path& out_dir) {
  const Problem p = c.problem();
  const auto data = load_matching_data(c, o.data);
  const SplitSets sets = split_realizations(data.realizations, c.train);
  std::vector<ReferenceField> refs;
  if (!o.references.empty()) refs = load_references(o.references);
  if (c.train.mode == TrainMode::Data && refs.empty()) {
    throw ValidationError("data mode needs reference fields (--references)");
  }
  TrainData td{sets.train, sets.val, {}, {}};
  if (!refs.empty()) td.val_refs = refs_for(refs, sets.val);
  if (c.train.mode == TrainMode::Data) td.train_refs = refs_for(refs, sets.train);

  const auto model = make_model(c);
  ParamStore store;
  model->init(store, derive_seed(c.seed, {0x1417}));
  TrainState state;
  const json echo = config_to_json(c);
  if (!o.resume.empty()) {
    const Checkpoint ck = load_checkpoint(o.resume);
    if (ck.config.at("model") != echo.at("model")) {
      throw ValidationError("resume: checkpoint architecture " + ck.config.at("model").dump() +
                            " does not match config " + echo.at("model").dump());
    }
    restore_params(store, ck.store);
    state = ck.state;
    say(o, "resuming at epoch " + std::to_string(state.epoch) + ", step " + std::to_string(state.step));
  }

  if (o.resume.empty()) std::filesystem::remove(out_dir / "best.ckpt");
  const Trainer trainer(*model, p, c.train);
  TrainHooks hooks;
  hooks.on_best = [&](const TrainState& s) { save_checkpoint(out_dir / "best.ckpt", {echo, s, store}); };
  hooks.on_epoch = [&](const EpochRecord& e, const TrainState&) {
    std::string line = "epoch " + std::to_string(e.epoch) + " loss " + fmt_double(e.loss);
    if (e.val_metric) line += " val " + fmt_double(*e.val_metric);
    say(o, line);
  };
  TrainOutcome out;
  out.report = trainer.run(store, state, td, hooks);
  out.state = state;
  save_checkpoint(out_dir / "final.ckpt", {echo, state, store});
  if (!std::filesystem::exists(out_dir / "best.ckpt")) save_checkpoint(out_dir / "best.ckpt", {echo, state, store});
  write_atomic(out_dir / "report.csv", train_report_csv(out.report));
  write_atomic(out_dir / "timing.csv", timing_csv(out.report));

  json summary = {{"format", "pidcon-train-summary"},
                  {"version", kReportVersion},
                  {"config", echo},
                  {"epochs_run", out.report.epochs.size()},
                  {"global_step", state.step},
                  {"final_loss", out.report.epochs.empty() ? 0.0 : out.report.epochs.back().loss},
                  {"val_metric", out.report.val_metric_name},
                  {"best_epoch", state.best_epoch},
                  {"best_val", std::isfinite(state.best_val) ? json(state.best_val) : json(nullptr)},
                  {"split", {{"train", sets.train.size()}, {"val", sets.val.size()}, {"test", sets.test.size()}}}};
  if (!refs.empty() && !sets.test.empty()) {
    out.test = evaluate(*model, store, p, sets.test, refs_for(refs, sets.test));
    summary["test"] = {{"mean", out.test->mean}, {"std", out.test->std},
                       {"summary", format_mean_std(out.test->mean, out.test->std)}};
    say(o, "test rel-L2 " + format_mean_std(out.test->mean, out.test->std));
  }
  write_atomic(out_dir / "summary.json", summary.dump(2) + "\n");
  return out;
}

}  // namespace detail

inline TrainOutcome cmd_train(const CommandOptions& o) {
  detail::require(o.data, "--data");
  detail::require(o.out, "--out");
  return detail::train_run(resolve_config(o), o, o.out);
}

inline EvalReport cmd_evaluate(const CommandOptions& o) {
  detail::require(o.checkpoint, "--checkpoint");
  detail::require(o.data, "--data");
  detail::require(o.references, "--references");
  detail::require(o.out, "--out");
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  RunConfig c = o.config ? resolve_config(o) : config_from_json(ck.config);
  if (o.config && ck.config.at("model") != model_to_json(c)) {
    throw ValidationError("evaluate: checkpoint architecture " + ck.config.at("model").dump() +
                          " does not match config " + model_to_json(c).dump());
  }
  const Problem p = c.problem();
  const auto data = load_matching_data(c, o.data);
  std::vector<Realization> rs;
  if (o.split == "all") {
    rs = data.realizations;
  } else {
    const SplitSets s = split_realizations(data.realizations, c.train);
    if (o.split == "train") rs = s.train;
    else if (o.split == "val") rs = s.val;
    else if (o.split == "test") rs = s.test;
    else throw ValidationError("--split must be one of all, train, val, test");
  }
  const auto model = make_model(c);
  ParamStore store;
  model->init(store, 0);
  restore_params(store, ck.store);
  const EvalReport rep = evaluate(*model, store, p, rs, load_references(o.references));
  write_atomic(o.out / "eval.json", report_to_json(rep).dump(2) + "\n");
  write_atomic(o.out / "errors.csv", errors_csv(rep));
  write_atomic(o.out / "histogram.csv", histogram_csv(rep));
  write_atomic(o.out / "mae.csv", mae_csv(rep));
  if (!o.quiet && o.log) *o.log << format_mean_std(rep.mean, rep.std) << '\n';
  return rep;
}

inline GridResult cmd_gridsearch(const CommandOptions& o) {
  detail::require(o.data, "--data");
  detail::require(o.out, "--out");
  const RunConfig c = resolve_config(o);
  const Problem p = c.problem();
  const auto data = load_matching_data(c, o.data);
  const SplitSets sets = split_realizations(data.realizations, c.train);
  TrainData td{sets.train, sets.val, {}, {}};
  if (!o.references.empty()) {
    const auto refs = load_references(o.references);
    td.val_refs = detail::refs_for(refs, sets.val);
    if (c.train.mode == TrainMode::Data) td.train_refs = detail::refs_for(refs, sets.train);
  } else if (c.train.mode == TrainMode::Data) {
    throw ValidationError("data mode needs reference fields (--references)");
  }
  const auto model = make_model(c);
  const GridResult g =
      grid_search(*model, p, c.train, td, c.grid_lr, c.grid_ratio, c.grid_epochs, derive_seed(c.seed, {0x1417}));
  std::string csv = "lr,sample_ratio,val_metric,best_epoch\n";
  for (const auto& cell : g.cells) {
    csv += fmt_double(cell.lr) + "," + fmt_double(cell.sample_ratio) + "," + fmt_double(cell.val_metric) + "," +
           std::to_string(cell.best_epoch) + "\n";
  }
  write_atomic(o.out / "grid.csv", csv);
  const GridCell& best = g.cells[g.best];
  write_atomic(o.out / "best.json",
               json{{"lr", best.lr}, {"sample_ratio", best.sample_ratio}, {"val_metric", best.val_metric}}.dump(2) +
                   "\n");
  detail::say(o, "best cell: lr " + fmt_double(best.lr) + ", ratio " + fmt_double(best.sample_ratio));
  return g;
}

struct AblationRow {
  std::size_t layers = 0;
  double mean = 0.0;
  double std = 0.0;
  std::size_t parameters = 0;
};

/// Trains one DCON per operator-layer count and evaluates it on the test split.
inline std::vector<AblationRow> cmd_ablate(const CommandOptions& o) {
  detail::require(o.data, "--data");
  detail::require(o.references, "--references");
  detail::require(o.out, "--out");
  RunConfig c = resolve_config(o);
  if (c.model_kind != "dcon") throw ValidationError("ablate: only the dcon model has operator layers");
  std::vector<std::size_t> layers = o.layers.empty() ? c.ablate_layers : o.layers;
  if (layers.empty()) throw ValidationError("ablate: empty layer list");
  std::sort(layers.begin(), layers.end());
  std::vector<AblationRow> rows;
  std::string csv = "layers,mean_rel_l2,std_rel_l2,summary,parameters\n";
  for (std::size_t L : layers) {
    c.dcon.layers = L;
    const TrainOutcome t = detail::train_run(c, o, o.out / ("L" + std::to_string(L)));
    if (!t.test) throw ValidationError("ablate: no test realizations to evaluate");
    ParamStore tmp;
    DconModel(c.dcon).init(tmp, 0);
    rows.push_back({L, t.test->mean, t.test->std, tmp.parameter_count()});
    csv += std::to_string(L) + "," + fmt_double(t.test->mean) + "," + fmt_double(t.test->std) + "," +
           format_mean_std(t.test->mean, t.test->std) + "," + std::to_string(tmp.parameter_count()) + "\n";
    detail::say(o, "L=" + std::to_string(L) + ": " + format_mean_std(t.test->mean, t.test->std));
  }
  write_atomic(o.out / "ablation.csv", csv);
  return rows;
}

}  // namespace pidcon
