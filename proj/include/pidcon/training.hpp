#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pidcon/dataset.hpp"
#include "pidcon/evaluation.hpp"
#include "pidcon/models.hpp"
#include "pidcon/physics.hpp"
#include "pidcon/random.hpp"

namespace pidcon {

enum class TrainMode { Physics, Data };

inline std::string_view mode_name(TrainMode m) { return m == TrainMode::Physics ? "physics" : "data"; }
inline TrainMode parse_mode(std::string_view s) {
  if (s == "physics") return TrainMode::Physics;
  if (s == "data") return TrainMode::Data;
  throw ValidationError("unknown training mode '" + std::string(s) + "' (expected physics or data)");
}

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 20;
  std::size_t epochs = 200;
  double sample_ratio = 0.1;
  std::size_t pool_size = 5000;
  double split_train = 0.7;
  double split_val = 0.1;
  double split_test = 0.2;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::Physics;
  std::size_t val_every = 10;
  bool check_finite = false;

  static constexpr double kLrGrid[] = {0.001, 0.0005, 0.0002, 0.0001};
  static constexpr double kRatioGrid[] = {0.3, 0.2, 0.1, 0.05};

  std::size_t collocation_count() const {
    return static_cast<std::size_t>(std::ceil(sample_ratio * static_cast<double>(pool_size) - 1e-9));
  }

  void validate() const {
    if (!(lr > 0.0)) throw ValidationError("train: lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ValidationError("train: betas in [0, 1)");
    if (!(eps > 0.0)) throw ValidationError("train: eps must be positive");
    if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
    if (!(sample_ratio > 0.0 && sample_ratio <= 1.0)) throw ValidationError("train: sample_ratio must lie in (0, 1]");
    if (pool_size < 1) throw ValidationError("train: pool_size must be >= 1");
    if (val_every < 1) throw ValidationError("train: val_every must be >= 1");
    const double s = split_train + split_val + split_test;
    if (std::abs(s - 1.0) > 1e-9 || split_train <= 0.0 || split_val < 0.0 || split_test < 0.0) {
      throw ValidationError("train: split fractions must be non-negative and sum to 1");
    }
  }
};

/// Bias-corrected Adam update of every parameter from its gradient slot; `t`
/// is the global 1-based step index.
inline void adam_step(ParamStore& store, double lr, double beta1, double beta2, double eps, std::uint64_t t) {
  if (t < 1) throw ValidationError("adam_step: step index starts at 1");
  for (const auto& e : store.entries()) {
    if (!e.grad.all_finite()) throw NumericalError("adam_step: non-finite gradient for '" + e.name + "'");
  }
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (auto& e : store.entries()) {
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = e.grad[i];
      e.m[i] = beta1 * e.m[i] + (1.0 - beta1) * g;
      e.v[i] = beta2 * e.v[i] + (1.0 - beta2) * g * g;
      const double mhat = e.m[i] / c1;
      const double vhat = e.v[i] / c2;
      e.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Deterministic shuffle of 0..n-1 cut into floor(n f_train), floor(n f_val)
/// and the remainder.
inline Split split_indices(std::size_t n, double f_train, double f_val, std::uint64_t seed) {
  if (n < 10) throw ValidationError("split: need at least 10 realizations, got " + std::to_string(n));
  CounterRng rng(derive_seed(seed, {0x5917}));
  const auto perm = rng.permutation(n);
  const auto nt = static_cast<std::size_t>(std::floor(static_cast<double>(n) * f_train + 1e-9));
  const auto nv = static_cast<std::size_t>(std::floor(static_cast<double>(n) * f_val + 1e-9));
  Split s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<long>(nt));
  s.val.assign(perm.begin() + static_cast<long>(nt), perm.begin() + static_cast<long>(nt + nv));
  s.test.assign(perm.begin() + static_cast<long>(nt + nv), perm.end());
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

template <class T>
std::vector<T> pick(const std::vector<T>& items, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(items.at(i));
  return out;
}

struct SplitSets {
  std::vector<Realization> train, val, test;
};

inline SplitSets split_realizations(const std::vector<Realization>& all, const TrainConfig& cfg) {
  const Split s = split_indices(all.size(), cfg.split_train, cfg.split_val, cfg.seed);
  return {pick(all, s.train), pick(all, s.val), pick(all, s.test)};
}

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  std::map<std::string, double> terms;
  std::optional<double> val_metric;
  double seconds = 0.0;
};

struct TrainReport {
  std::string val_metric_name = "val_rel_l2";
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
};

/// Resumable optimizer state; Adam moments live in the ParamStore.
struct TrainState {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  std::size_t best_epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
};

/// Inputs of a training run. References are consulted for validation and, in
/// data mode, for the loss itself; the physics loss path never receives them.
struct TrainData {
  std::vector<Realization> train;
  std::vector<Realization> val;
  std::vector<ReferenceField> val_refs;
  std::vector<ReferenceField> train_refs;
};

struct TrainHooks {
  std::function<void(const EpochRecord&, const TrainState&)> on_epoch;
  std::function<void(const TrainState&)> on_best;
};

namespace detail {

inline Tensor pick_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  Tensor out(Shape{rows.size(), t.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < t.cols(); ++c) out(i, c) = t(rows[i], c);
  return out;
}

enum TrainStream : std::uint64_t { kPool = 11, kEpochPoints = 12, kOrder = 13, kNodes = 14 };

}  // namespace detail

/// Mini-batch Adam over the training realizations. Each epoch draws a fresh
/// collocation subset of the interior pool and a fresh batch order; each
/// batch takes one optimizer step on the mean loss of its realizations.
class Trainer {
 public:
  Trainer(const OperatorModel& model, const Problem& problem, TrainConfig cfg)
      : model_(model), problem_(problem), cfg_(cfg) {
    cfg_.validate();
    pool_ = sample_interior(problem_.geometry, cfg_.pool_size, derive_seed(cfg_.seed, {detail::kPool})).coords;
  }

  const TrainConfig& config() const { return cfg_; }
  const Tensor& pool() const { return pool_; }

  /// Collocation points (physical units) used in `epoch`.
  Tensor collocation(std::size_t epoch) const {
    CounterRng rng(derive_seed(cfg_.seed, {detail::kEpochPoints, epoch}));
    auto perm = rng.permutation(pool_.rows());
    perm.resize(std::min(cfg_.collocation_count(), pool_.rows()));
    return detail::pick_rows(pool_, perm);
  }

  /// Physics loss of one realization on the given collocation points.
  LossBreakdown physics(Tape& tape, ParamStore& store, const Realization& r, const Tensor& interior) const {
    return physics_loss(tape, store, model_, problem_.physics, problem_.map, r, interior);
  }

  /// Runs epochs state.epoch .. cfg.epochs - 1, updating `store` and `state`.
  TrainReport run(ParamStore& store, TrainState& state, const TrainData& data, const TrainHooks& hooks = {}) const {
    if (data.train.empty()) throw ValidationError("train: empty training set");
    if (cfg_.mode == TrainMode::Data) {
      for (const auto& r : data.train) (void)find_reference(data.train_refs, r.id);
    }
    const bool val_by_reference = !data.val.empty() && !data.val_refs.empty();
    TrainReport rep;
    rep.val_metric_name = val_by_reference ? "val_rel_l2" : "val_physics_loss";
    rep.best_epoch = state.best_epoch;
    rep.best_val = state.best_val;
    for (; state.epoch < cfg_.epochs; ++state.epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      EpochRecord rec = train_epoch(store, state, data);
      const bool last = state.epoch + 1 == cfg_.epochs;
      if (!data.val.empty() && ((state.epoch + 1) % cfg_.val_every == 0 || last)) {
        rec.val_metric = val_by_reference ? validation_error(store, data) : validation_loss(store, data);
        if (*rec.val_metric < state.best_val) {
          state.best_val = *rec.val_metric;
          state.best_epoch = state.epoch;
          rep.best_val = state.best_val;
          rep.best_epoch = state.best_epoch;
          if (hooks.on_best) {
            TrainState snapshot = state;
            ++snapshot.epoch;
            hooks.on_best(snapshot);
          }
        }
      }
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rep.epochs.push_back(rec);
      if (hooks.on_epoch) {
        TrainState snapshot = state;
        ++snapshot.epoch;
        hooks.on_epoch(rec, snapshot);
      }
    }
    return rep;
  }

  double validation_error(ParamStore& store, const TrainData& data) const {
    return evaluate(model_, store, problem_, data.val, data.val_refs).mean;
  }

  /// Mean physics loss on the validation realizations with a fixed
  /// collocation subset (used when no references are available).
  double validation_loss(ParamStore& store, const TrainData& data) const {
    const Tensor pts = collocation(std::numeric_limits<std::size_t>::max());
    double s = 0.0;
    for (const auto& r : data.val) {
      Tape tape;
      s += physics(tape, store, r, pts).total_value;
    }
    return s / static_cast<double>(data.val.size());
  }

 private:
  EpochRecord train_epoch(ParamStore& store, TrainState& state, const TrainData& data) const {
    EpochRecord rec;
    rec.epoch = state.epoch;
    const Tensor interior = collocation(state.epoch);
    CounterRng rng(derive_seed(cfg_.seed, {detail::kOrder, state.epoch}));
    const auto order = rng.permutation(data.train.size());
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
      std::vector<std::size_t> batch(order.begin() + static_cast<long>(start),
                                     order.begin() + static_cast<long>(std::min(order.size(), start + cfg_.batch_size)));
      std::sort(batch.begin(), batch.end(),
                [&](std::size_t a, std::size_t b) { return data.train[a].id < data.train[b].id; });
      store.zero_grad();
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (std::size_t k : batch) {
        const Realization& r = data.train[k];
        Tape tape(cfg_.check_finite);
        Var total;
        if (cfg_.mode == TrainMode::Physics) {
          LossBreakdown lb = physics(tape, store, r, interior);
          for (const auto& [name, v] : lb.terms) rec.terms[name] += v;
          total = lb.total;
        } else {
          total = supervised(tape, store, r, find_reference(data.train_refs, r.id), state.epoch);
          rec.terms["data"] += total.value().item();
        }
        loss_sum += total.value().item();
        tape.backward(scale(total, inv));
      }
      adam_step(store, cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps, ++state.step);
    }
    const double n = static_cast<double>(data.train.size());
    rec.loss = loss_sum / n;
    for (auto& [name, v] : rec.terms) v /= n;
    return rec;
  }

  Var supervised(Tape& tape, ParamStore& store, const Realization& r, const ReferenceField& ref,
                 std::size_t epoch) const {
    const std::size_t n = ref.nodes.rows();
    const std::size_t k = std::min(n, cfg_.collocation_count());
    CounterRng rng(derive_seed(cfg_.seed, {detail::kNodes, epoch, r.id}));
    auto rows = rng.permutation(n);
    rows.resize(k);
    const ReferenceField sub{ref.id, detail::pick_rows(ref.nodes, rows), detail::pick_rows(ref.values, rows),
                             ref.provenance};
    return data_loss(tape, store, model_, problem_.physics, problem_.map, r, sub);
  }

  const OperatorModel& model_;
  const Problem& problem_;
  TrainConfig cfg_;
  Tensor pool_;
};

struct GridCell {
  double lr = 0.0;
  double sample_ratio = 0.0;
  double val_metric = 0.0;
  std::size_t best_epoch = 0;
};

struct GridResult {
  std::vector<GridCell> cells;
  std::size_t best = 0;
};

/// Trains a fresh model (same initialization seed) for every (lr, ratio) cell
/// for `budget_epochs` and selects the lowest validation metric; ties keep
/// the earlier cell.
inline GridResult grid_search(const OperatorModel& model, const Problem& problem, const TrainConfig& base,
                              const TrainData& data, const std::vector<double>& lrs,
                              const std::vector<double>& ratios, std::size_t budget_epochs,
                              std::uint64_t init_seed) {
  if (lrs.empty() || ratios.empty()) throw ValidationError("grid_search: empty grid");
  if (data.val.empty()) throw ValidationError("grid_search: needs a validation split");
  GridResult res;
  for (double lr : lrs) {
    for (double ratio : ratios) {
      TrainConfig cfg = base;
      cfg.lr = lr;
      cfg.sample_ratio = ratio;
      cfg.epochs = budget_epochs;
      cfg.val_every = std::min(cfg.val_every, budget_epochs);
      ParamStore store;
      model.init(store, init_seed);
      TrainState state;
      const Trainer trainer(model, problem, cfg);
      const TrainReport rep = trainer.run(store, state, data);
      res.cells.push_back({lr, ratio, rep.best_val, rep.best_epoch});
      if (rep.best_val < res.cells[res.best].val_metric) res.best = res.cells.size() - 1;
    }
  }
  return res;
}

}  // namespace pidcon
