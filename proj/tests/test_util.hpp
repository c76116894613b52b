#pragma once

#include <cmath>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "pidcon/pidcon.hpp"

namespace pidcon::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  CounterRng rng(seed);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// ||a - b|| / ||b||, or ||a - b|| when b vanishes.
inline double rel_diff(const Tensor& a, const Tensor& b) {
  double d = 0.0, r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    r += b[i] * b[i];
  }
  return r > 0.0 ? std::sqrt(d / r) : std::sqrt(d);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Central-difference value, gradient and Hessian of output channel `k` of
/// a plain forward pass, at each row of `coords` (normalized units).
struct FdJet {
  Tensor val, dx, dy, dxx, dyy, dxy;
};

template <class F>
FdJet fd_jet(F&& f, const Tensor& coords, double h) {
  const std::size_t n = coords.rows();
  FdJet r{Tensor(Shape{n, 1}), Tensor(Shape{n, 1}), Tensor(Shape{n, 1}),
          Tensor(Shape{n, 1}), Tensor(Shape{n, 1}), Tensor(Shape{n, 1})};
  auto shifted = [&](double ox, double oy) {
    Tensor c = coords;
    for (std::size_t i = 0; i < n; ++i) {
      c(i, 0) += ox;
      c(i, 1) += oy;
    }
    return f(c);
  };
  const Tensor f0 = f(coords);
  const Tensor xp = shifted(h, 0), xm = shifted(-h, 0), yp = shifted(0, h), ym = shifted(0, -h);
  const Tensor pp = shifted(h, h), pm = shifted(h, -h), mp = shifted(-h, h), mm = shifted(-h, -h);
  for (std::size_t i = 0; i < n; ++i) {
    r.val[i] = f0[i];
    r.dx[i] = (xp[i] - xm[i]) / (2 * h);
    r.dy[i] = (yp[i] - ym[i]) / (2 * h);
    r.dxx[i] = (xp[i] - 2 * f0[i] + xm[i]) / (h * h);
    r.dyy[i] = (yp[i] - 2 * f0[i] + ym[i]) / (h * h);
    r.dxy[i] = (pp[i] - pm[i] - mp[i] + mm[i]) / (4 * h * h);
  }
  return r;
}

/// fd_jet of output `k` of `model` for a fixed branch input.
inline FdJet model_fd_jet(const OperatorModel& model, ParamStore& store, std::span<const BranchInput> inputs,
                          const Tensor& coords, double h, std::size_t k = 0) {
  auto f = [&](const Tensor& c) {
    Tape tape;
    const Var b = model.embed(tape, store, inputs);
    return Tensor(model.forward(tape, store, b, c)[k].value());
  };
  return fd_jet(f, coords, h);
}

/// Largest normwise relative error over the six jet components.
inline double jet_fd_error(const Jet2& j, const FdJet& fd) {
  const Tensor* ref[] = {&fd.val, &fd.dx, &fd.dy, &fd.dxx, &fd.dyy, &fd.dxy};
  const JetPart parts[] = {JetPart::Val, JetPart::Dx, JetPart::Dy, JetPart::Dxx, JetPart::Dyy, JetPart::Dxy};
  double worst = 0.0;
  for (int p = 0; p < 6; ++p) worst = std::max(worst, rel_diff(j.component(parts[p]), *ref[p]));
  return worst;
}

/// Fresh scratch directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("pidcon_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace pidcon::testing
