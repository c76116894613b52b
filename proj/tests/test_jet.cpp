#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace pidcon;
using namespace pidcon::testing;

namespace {

Jet2 constant_jet(Tape& t, const Tensor& val, const Tensor& dxx) {
  Jet2 j;
  j.val = t.constant(val);
  j.dxx = t.constant(dxx);
  return j;
}

// Random two-layer tanh stack: 2 -> 6 -> 4, summed.
struct SmallNet {
  Tensor W1 = random_tensor({2, 6}, 11), B1 = random_tensor({1, 6}, 12);
  Tensor W2 = random_tensor({6, 4}, 13), B2 = random_tensor({1, 4}, 14);
  Tensor b = random_tensor({1, 4}, 15);

  Jet2 jet(Tape& t, const Jet2& x) const {
    Jet2 h = jet_tanh(jet_affine(t.constant(W1), t.constant(B1), x));
    h = jet_tanh(jet_affine(t.constant(W2), t.constant(B2), h));
    return jet_reduce_sum(jet_hadamard_const(t.constant(b), h));
  }
  Tensor plain(const Tensor& coords) const {
    Tape t;
    return jet(t, jet_seed(t, coords, 0)).val.value();
  }
};

}  // namespace

TEST(JetSeed, Origin) {
  Tape t;
  const Jet2 j = jet_seed(t, Tensor::matrix({{0, 0}}));
  EXPECT_EQ(j.component(JetPart::Val), Tensor::matrix({{0, 0}}));
  EXPECT_EQ(j.component(JetPart::Dx), Tensor::matrix({{1, 0}}));
  EXPECT_EQ(j.component(JetPart::Dy), Tensor::matrix({{0, 1}}));
  for (JetPart p : {JetPart::Dxx, JetPart::Dyy, JetPart::Dxy}) {
    EXPECT_FALSE(j.part(p).valid());
    EXPECT_EQ(j.component(p), Tensor(Shape{1, 2}));
  }
}

TEST(JetSeed, ShiftedPoint) {
  Tape t;
  const Jet2 j = jet_seed(t, Tensor::matrix({{1, -2}}));
  EXPECT_EQ(j.component(JetPart::Val), Tensor::matrix({{1, -2}}));
  EXPECT_EQ(j.component(JetPart::Dx), Tensor::matrix({{1, 0}}));
  EXPECT_EQ(j.component(JetPart::Dy), Tensor::matrix({{0, 1}}));
}

TEST(JetSeed, RejectsBadCoordinates) {
  Tape t;
  EXPECT_THROW(jet_seed(t, Tensor(Shape{3, 3})), ShapeError);
  EXPECT_THROW(jet_seed(t, Tensor::matrix({{std::nan(""), 0.0}})), ValidationError);
}

TEST(JetAffine, IdentityLayerLeavesJetUnchanged) {
  Tape t;
  const Jet2 j = jet_tanh(jet_seed(t, Tensor::matrix({{0.3, -0.4}, {0.1, 0.9}})));
  const Jet2 k = jet_affine(t.constant(Tensor::identity(2)), t.constant(Tensor(Shape{1, 2})), j);
  for (JetPart p : {JetPart::Val, JetPart::Dx, JetPart::Dy, JetPart::Dxx, JetPart::Dyy, JetPart::Dxy})
    EXPECT_EQ(k.component(p), j.component(p));
}

TEST(JetAffine, ZeroWeightsLeaveOnlyBias) {
  Tape t;
  const Jet2 j = jet_tanh(jet_seed(t, Tensor::matrix({{0.3, -0.4}})));
  const Tensor B = Tensor::matrix({{0.5, -1.5, 2.0}});
  const Jet2 k = jet_affine(t.constant(Tensor(Shape{2, 3})), t.constant(B), j);
  EXPECT_EQ(k.component(JetPart::Val), B);
  for (JetPart p : {JetPart::Dx, JetPart::Dy, JetPart::Dxx, JetPart::Dyy, JetPart::Dxy})
    EXPECT_EQ(k.component(p), Tensor(Shape{1, 3}));
}

TEST(JetAffine, Scaling) {
  Tape t;
  const Jet2 j = jet_seed(t, Tensor::matrix({{3, 4}}));
  const Jet2 k = jet_affine(t.constant(Tensor::matrix({{2, 0}, {0, 2}})), t.constant(Tensor(Shape{1, 2})), j);
  EXPECT_EQ(k.component(JetPart::Val), Tensor::matrix({{6, 8}}));
  EXPECT_EQ(k.component(JetPart::Dx), Tensor::matrix({{2, 0}}));
  EXPECT_EQ(k.component(JetPart::Dy), Tensor::matrix({{0, 2}}));
}

TEST(JetAffine, PolynomialLayersHaveNoCurvature) {
  Tape t;
  const Tensor W1 = random_tensor({2, 5}, 3), W2 = random_tensor({5, 3}, 4);
  Jet2 j = jet_seed(t, random_tensor({8, 2}, 5));
  j = jet_affine(t.constant(W1), t.constant(random_tensor({1, 5}, 6)), j);
  j = jet_affine(t.constant(W2), t.constant(random_tensor({1, 3}, 7)), j);
  for (JetPart p : {JetPart::Dxx, JetPart::Dyy, JetPart::Dxy}) EXPECT_EQ(j.component(p), Tensor(Shape{8, 3}));
  const Tensor W = kernels::matmul(W1, W2);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_NEAR(j.component(JetPart::Dx)(i, c), W(0, c), 1e-14);
      EXPECT_NEAR(j.component(JetPart::Dy)(i, c), W(1, c), 1e-14);
    }
}

TEST(JetAffine, DownstreamDxxMatchesFd) {
  SmallNet net;
  const Tensor x = random_tensor({10, 2}, 21);
  Tape t;
  const Jet2 j = net.jet(t, jet_seed(t, x));
  const FdJet fd = fd_jet([&](const Tensor& c) { return net.plain(c); }, x, 1e-4);
  EXPECT_LT(rel_diff(j.component(JetPart::Dxx), fd.dxx), 1e-5);
  EXPECT_LT(rel_diff(j.component(JetPart::Dyy), fd.dyy), 1e-5);
  EXPECT_LT(jet_fd_error(j, fd), 1e-5);
}

TEST(JetTanh, ZeroValuePassesDerivatives) {
  Tape t;
  const Jet2 j = jet_seed(t, Tensor::matrix({{0, 0}}));
  const Jet2 k = jet_tanh(j);
  EXPECT_EQ(k.component(JetPart::Val), Tensor::matrix({{0, 0}}));
  EXPECT_EQ(k.component(JetPart::Dx), j.component(JetPart::Dx));
  EXPECT_EQ(k.component(JetPart::Dy), j.component(JetPart::Dy));
  for (JetPart p : {JetPart::Dxx, JetPart::Dyy, JetPart::Dxy}) EXPECT_EQ(k.component(p), Tensor(Shape{1, 2}));
}

TEST(JetTanh, ConstantJetStaysConstant) {
  Tape t;
  Jet2 j;
  j.val = t.constant(Tensor::matrix({{0.4, -2.0}}));
  const Jet2 k = jet_tanh(j);
  EXPECT_NEAR(k.component(JetPart::Val)[0], std::tanh(0.4), 1e-16);
  for (JetPart p : {JetPart::Dx, JetPart::Dy, JetPart::Dxx, JetPart::Dyy, JetPart::Dxy})
    EXPECT_EQ(k.component(p), Tensor(Shape{1, 2}));
}

TEST(JetTanh, NestedScalarChainMatchesFd) {
  auto chain = [](Tape& t, const Jet2& x) {
    const Jet2 u = jet_affine(t.constant(Tensor::matrix({{1}, {0}})), t.constant(Tensor(Shape{1, 1})), x);
    return jet_tanh(jet_tanh(u));
  };
  const Tensor x = Tensor::matrix({{0.7, 0.0}});
  Tape t;
  const Jet2 j = chain(t, jet_seed(t, x));
  const FdJet fd = fd_jet(
      [&](const Tensor& c) {
        Tape s;
        return Tensor(chain(s, jet_seed(s, c, 0)).val.value());
      },
      x, 1e-4);
  EXPECT_LT(std::abs(j.component(JetPart::Dxx)[0] - fd.dxx[0]) / std::abs(fd.dxx[0]), 1e-5);
  // Closed form: u = tanh(tanh(x)); u'' = s2' (1-t^2)^2 + s1' (-2 t (1-t^2)).
  const double th = std::tanh(0.7), s = std::tanh(th);
  const double t1 = 1 - th * th, s1 = 1 - s * s;
  const double exact = -2 * s * s1 * t1 * t1 + s1 * (-2 * th * t1);
  EXPECT_NEAR(j.component(JetPart::Dxx)[0], exact, 1e-14);
}

TEST(JetHadamard, OnesIsIdentityAndZeroIsZero) {
  Tape t;
  const Jet2 j = jet_tanh(jet_seed(t, random_tensor({4, 2}, 31)));
  const Jet2 one = jet_hadamard_const(t.constant(Tensor::ones(Shape{1, 2})), j);
  const Jet2 zero = jet_hadamard_const(t.constant(Tensor(Shape{1, 2})), j);
  for (JetPart p : {JetPart::Val, JetPart::Dx, JetPart::Dy, JetPart::Dxx, JetPart::Dyy, JetPart::Dxy}) {
    EXPECT_EQ(one.component(p), j.component(p));
    const Tensor z = zero.component(p);
    for (double v : z.data()) EXPECT_EQ(std::abs(v), 0.0);
  }
}

TEST(JetHadamard, DownstreamDyyMatchesFd) {
  SmallNet net;
  net.b = random_tensor({1, 4}, 99, -3, 3);
  const Tensor x = random_tensor({10, 2}, 41);
  Tape t;
  const Jet2 j = net.jet(t, jet_seed(t, x));
  const FdJet fd = fd_jet([&](const Tensor& c) { return net.plain(c); }, x, 1e-4);
  EXPECT_LT(rel_diff(j.component(JetPart::Dyy), fd.dyy), 1e-5);
}

TEST(JetReduceSum, SingleFeatureIsIdentity) {
  Tape t;
  const Jet2 j = jet_tanh(jet_affine(t.constant(Tensor::matrix({{0.5}, {-1.0}})), t.constant(Tensor(Shape{1, 1})),
                                     jet_seed(t, random_tensor({5, 2}, 51))));
  const Jet2 k = jet_reduce_sum(j);
  for (JetPart p : {JetPart::Val, JetPart::Dx, JetPart::Dy, JetPart::Dxx, JetPart::Dyy, JetPart::Dxy})
    EXPECT_EQ(k.component(p), j.component(p));
}

TEST(JetReduceSum, Linearity) {
  Tape t;
  const Jet2 k = jet_reduce_sum(constant_jet(t, Tensor::matrix({{1, 2, 3}}), Tensor::matrix({{0.1, 0.2, 0.3}})));
  EXPECT_EQ(k.component(JetPart::Val)[0], 6.0);
  EXPECT_NEAR(k.component(JetPart::Dxx)[0], 0.6, 1e-15);
}

TEST(JetModel, GradientAndHessianMatchFd) {
  DconConfig cfg;
  cfg.q = 16;
  cfg.layers = 3;
  DconModel model(cfg);
  ParamStore store;
  model.init(store, 3);
  const std::vector<BranchInput> in = {{random_tensor({30, 2}, 61), random_tensor({30, 1}, 62)}};
  const Tensor x = random_tensor({10, 2}, 63);
  Tape t;
  const Var b = model.embed(t, store, in);
  const Jet2 j = model.forward_jet(t, store, b, jet_seed(t, x))[0];
  EXPECT_LT(jet_fd_error(j, model_fd_jet(model, store, in, x, 1e-4)), 1e-5);
}

TEST(JetModel, CrossDerivativeIsSymmetric) {
  DconConfig cfg;
  cfg.q = 24;
  DconModel model(cfg);
  ParamStore store;
  model.init(store, 5);
  const std::vector<BranchInput> in = {{random_tensor({40, 2}, 71), random_tensor({40, 1}, 72)}};
  const Tensor x = random_tensor({20, 2}, 73);
  Tape t;
  const Var b = model.embed(t, store, in);
  const Jet2 xy = model.forward_jet(t, store, b, jet_seed(t, x))[0];
  Jet2 swapped = jet_seed(t, x);
  std::swap(swapped.dx, swapped.dy);
  const Jet2 yx = model.forward_jet(t, store, b, swapped)[0];
  EXPECT_LT(max_abs_diff(xy.component(JetPart::Dxy), yx.component(JetPart::Dxy)), 1e-12);
  EXPECT_EQ(xy.component(JetPart::Dxx), yx.component(JetPart::Dyy));
}

TEST(JetModel, ScaledSeedGivesPhysicalDerivatives) {
  SmallNet net;
  const Tensor x = random_tensor({6, 2}, 81);
  Tape t;
  const Jet2 unit = net.jet(t, jet_seed(t, x));
  const Jet2 scaled = net.jet(t, jet_seed(t, x, 2, true, 2.0, 0.5));
  const auto scaled_by = [](const Tensor& a, double s) {
    Tensor r = a;
    for (double& v : r.data()) v *= s;
    return r;
  };
  EXPECT_LT(rel_diff(scaled.component(JetPart::Dx), scaled_by(unit.component(JetPart::Dx), 2.0)), 1e-15);
  EXPECT_LT(rel_diff(scaled.component(JetPart::Dyy), scaled_by(unit.component(JetPart::Dyy), 0.25)), 1e-15);
  EXPECT_LT(rel_diff(scaled.component(JetPart::Dxy), unit.component(JetPart::Dxy)), 1e-15);
}

TEST(JetModel, OrderAndCrossCapComponents) {
  SmallNet net;
  const Tensor x = random_tensor({3, 2}, 85);
  Tape t;
  const Jet2 o1 = net.jet(t, jet_seed(t, x, 1));
  EXPECT_TRUE(o1.dx.valid());
  EXPECT_FALSE(o1.dxx.valid());
  const Jet2 nc = net.jet(t, jet_seed(t, x, 2, false));
  EXPECT_TRUE(nc.dxx.valid());
  EXPECT_FALSE(nc.dxy.valid());
  const Jet2 full = net.jet(t, jet_seed(t, x));
  EXPECT_EQ(nc.component(JetPart::Dxx), full.component(JetPart::Dxx));
  EXPECT_EQ(o1.component(JetPart::Dx), full.component(JetPart::Dx));
}

TEST(JetTape, ParameterGradientOfLaplacianLossMatchesFd) {
  DconConfig cfg;
  cfg.q = 6;
  cfg.layers = 2;
  cfg.branch_depth = 2;
  DconModel model(cfg);
  ParamStore store;
  model.init(store, 9);
  const std::vector<BranchInput> in = {{random_tensor({7, 2}, 91), random_tensor({7, 1}, 92)}};
  const Tensor x = random_tensor({5, 2}, 93);
  auto loss = [&](Tape& t, ParamStore& st) {
    const Var b = model.embed(t, st, in);
    const Jet2 j = model.forward_jet(t, st, b, jet_seed(t, x, 2, false))[0];
    return mean(square(scale(add(j.dxx, j.dyy), 1.0, 10.0)));
  };
  EXPECT_LT(fd_gradient_check(loss, store, 1e-5), 1e-5);
}

TEST(JetTape, CompositionMatchesSequentialPropagation) {
  const Tensor W1 = random_tensor({2, 5}, 101), B1 = random_tensor({1, 5}, 102);
  const Tensor W2 = random_tensor({5, 3}, 103), B2 = random_tensor({1, 3}, 104);
  const Tensor x = random_tensor({7, 2}, 105);
  Tape t;
  const Jet2 both =
      jet_tanh(jet_affine(t.constant(W2), t.constant(B2), jet_tanh(jet_affine(t.constant(W1), t.constant(B1),
                                                                                jet_seed(t, x)))));
  Tape a;
  const Jet2 first = jet_tanh(jet_affine(a.constant(W1), a.constant(B1), jet_seed(a, x)));
  Tape b;
  Jet2 carried;
  carried.val = b.constant(first.val.value());
  carried.dx = b.constant(first.dx.value());
  carried.dy = b.constant(first.dy.value());
  carried.dxx = b.constant(first.dxx.value());
  carried.dyy = b.constant(first.dyy.value());
  carried.dxy = b.constant(first.dxy.value());
  const Jet2 second = jet_tanh(jet_affine(b.constant(W2), b.constant(B2), carried));
  for (JetPart p : {JetPart::Val, JetPart::Dx, JetPart::Dy, JetPart::Dxx, JetPart::Dyy, JetPart::Dxy})
    EXPECT_EQ(both.component(p), second.component(p));
}

TEST(JetTape, BatchRowsMatchSinglePoints) {
  SmallNet net;
  const Tensor x = random_tensor({9, 2}, 111);
  Tape t;
  const Jet2 batch = net.jet(t, jet_seed(t, x));
  for (std::size_t i = 0; i < 9; ++i) {
    Tape s;
    const Jet2 one = net.jet(s, jet_seed(s, Tensor::matrix({{x(i, 0), x(i, 1)}})));
    for (JetPart p : {JetPart::Val, JetPart::Dx, JetPart::Dy, JetPart::Dxx, JetPart::Dyy, JetPart::Dxy})
      EXPECT_EQ(one.component(p)[0], batch.component(p)[i]);
  }
}
