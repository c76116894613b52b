#include <functional>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace pidcon;
using pidcon::testing::random_tensor;

namespace {

// Seeds a one-parameter store and runs `fn` over it.
struct Single {
  ParamStore store;
  explicit Single(Tensor x) { store.add("x", std::move(x)); }
};

}  // namespace

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), ShapeError);
}

TEST(Tape, AddOfIdentities) {
  Tape t;
  Var a = t.constant(Tensor::identity(2));
  Var b = t.constant(Tensor::identity(2));
  Var c = add(a, b);
  EXPECT_EQ(c.value(), Tensor::matrix({{2, 0}, {0, 2}}));
  EXPECT_LT(a.id(), c.id());
  EXPECT_LT(b.id(), c.id());
}

TEST(Tape, TanhOfZero) {
  Tape t;
  EXPECT_EQ(tanh(t.constant(Tensor(Shape{3}))).value(), Tensor(Shape{3}));
}

TEST(Tape, MaxpoolColumnwise) {
  Tape t;
  Var p = maxpool(t.constant(Tensor::matrix({{1, 5}, {3, 2}})), 0);
  EXPECT_EQ(p.value(), Tensor::matrix({{3, 5}}));
}

TEST(Tape, ShapeErrorNamesOpAndShapes) {
  Tape t;
  Var a = t.constant(Tensor(Shape{2, 3}));
  Var b = t.constant(Tensor(Shape{2, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
  }
  EXPECT_THROW(add(a, t.constant(Tensor(Shape{3, 2}))), ShapeError);
  EXPECT_THROW(slice(a, 1, 2, 5), ShapeError);
  EXPECT_THROW(concat({a, t.constant(Tensor(Shape{3, 3}))}, 1), ShapeError);
}

TEST(Tape, RejectsUnknownInputNode) {
  Tape t;
  EXPECT_THROW(t.record(Primitive::Tanh, {7}, Tensor(Shape{1})), ValidationError);
}

TEST(Tape, EagerFiniteCheck) {
  Tape t(true);
  Var a = t.constant(Tensor::matrix({{1e200, 1.0}}));
  EXPECT_THROW(square(a), NumericalError);
  Tape lax;
  EXPECT_NO_THROW(square(lax.constant(Tensor::matrix({{1e200, 1.0}}))));
}

TEST(ParamStore, UniqueNamesAndMatchingShapes) {
  ParamStore s;
  s.add("w", Tensor(Shape{3, 2}, 1.0));
  EXPECT_THROW(s.add("w", Tensor(Shape{1})), ValidationError);
  const auto& e = s.at("w");
  EXPECT_EQ(e.grad.shape(), e.value.shape());
  EXPECT_EQ(e.m.shape(), e.value.shape());
  EXPECT_EQ(e.v.shape(), e.value.shape());
  EXPECT_THROW(s.at("missing"), ValidationError);
}

TEST(Backward, LinearGradientIsInput) {
  ParamStore s;
  s.add("W", Tensor(Shape{3, 2}, 0.5));
  Tape t;
  Var x = t.constant(Tensor::matrix({{1.0, -2.0, 4.0}}));
  t.backward(sum(matmul(x, t.param(s, "W"))));
  EXPECT_EQ(s.at("W").grad, Tensor::matrix({{1, 1}, {-2, -2}, {4, 4}}));
}

TEST(Backward, Quadratic) {
  ParamStore s;
  s.add("W", Tensor::vector({1.0, 2.0}));
  Tape t;
  t.backward(sum(square(t.param(s, "W"))));
  EXPECT_EQ(s.at("W").grad, Tensor::vector({2.0, 4.0}));
}

TEST(Backward, RequiresScalarLoss) {
  ParamStore s;
  s.add("W", Tensor::vector({1.0, 2.0}));
  Tape t;
  EXPECT_THROW(t.backward(square(t.param(s, "W"))), ShapeError);
}

TEST(Backward, TwoLayerTanhMatchesFd) {
  ParamStore s;
  s.add("W1", random_tensor({3, 5}, 1));
  s.add("b1", random_tensor({1, 5}, 2));
  s.add("W2", random_tensor({5, 2}, 3));
  s.add("b2", random_tensor({1, 2}, 4));
  const Tensor x = random_tensor({7, 3}, 5, -2, 2);
  auto loss = [&](Tape& t, ParamStore& st) {
    Var h = tanh(add(matmul(t.constant(x), t.param(st, "W1")), t.param(st, "b1")));
    Var o = tanh(add(matmul(h, t.param(st, "W2")), t.param(st, "b2")));
    return mean(square(o));
  };
  EXPECT_LT(fd_gradient_check(loss, s, 1e-5), 1e-6);
}

TEST(Backward, GradientsAccumulateAcrossCalls) {
  ParamStore s;
  s.add("W", Tensor::vector({1.0, 2.0}));
  for (int k = 0; k < 2; ++k) {
    Tape t;
    t.backward(sum(square(t.param(s, "W"))));
  }
  EXPECT_EQ(s.at("W").grad, Tensor::vector({4.0, 8.0}));
  s.zero_grad();
  EXPECT_EQ(s.at("W").grad, Tensor::vector({0.0, 0.0}));
}

TEST(Backward, SharedParamNodeIsReused) {
  ParamStore s;
  s.add("W", Tensor::vector({3.0}));
  Tape t;
  Var a = t.param(s, "W");
  Var b = t.param(s, "W");
  EXPECT_EQ(a.id(), b.id());
  t.backward(sum(hadamard(a, b)));
  EXPECT_EQ(s.at("W").grad, Tensor::vector({6.0}));
}

TEST(Maxpool, BackwardRoutesToArgmax) {
  ParamStore s;
  s.add("x", Tensor::matrix({{1, 5}, {3, 2}}));
  Tape t;
  t.backward(sum(maxpool(t.param(s, "x"), 0)));
  EXPECT_EQ(s.at("x").grad, Tensor::matrix({{0, 1}, {1, 0}}));
}

TEST(Maxpool, TieGoesToLowestIndex) {
  ParamStore s;
  s.add("x", Tensor::matrix({{2}, {2}}));
  Tape t;
  t.backward(sum(maxpool(t.param(s, "x"), 0)));
  EXPECT_EQ(s.at("x").grad, Tensor::matrix({{1}, {0}}));

  ParamStore r;
  r.add("x", Tensor::matrix({{4, 4, 1}}));
  Tape t2;
  t2.backward(sum(maxpool(t2.param(r, "x"), 1)));
  EXPECT_EQ(r.at("x").grad, Tensor::matrix({{1, 0, 0}}));
}

TEST(Maxpool, PooledSumMatchesFd) {
  Single one(random_tensor({9, 6}, 17));
  const Tensor w = random_tensor({1, 6}, 18);
  auto loss = [&](Tape& t, ParamStore& st) { return sum(hadamard(maxpool(t.param(st, "x"), 0), t.constant(w))); };
  EXPECT_LT(fd_gradient_check(loss, one.store, 1e-5), 1e-6);
}

TEST(Maxpool, RowPermutationInvariantAndMassConserving) {
  const Tensor x = random_tensor({12, 5}, 23);
  CounterRng rng(99);
  const auto perm = rng.permutation(12);
  Tensor px(x.shape());
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 5; ++j) px(i, j) = x(perm[i], j);
  Tape t;
  const Tensor plain = maxpool(t.constant(x), 0).value();
  EXPECT_EQ(plain, maxpool(t.constant(px), 0).value());

  ParamStore s;
  s.add("x", x);
  const Tensor up = Tensor::matrix({{0.5, -1.0, 2.0, 3.0, 0.25}});
  Tape t2;
  t2.backward(sum(hadamard(maxpool(t2.param(s, "x"), 0), t2.constant(up))));
  const Tensor& g = s.at("x").grad;
  for (std::size_t j = 0; j < 5; ++j) {
    double mass = 0.0;
    for (std::size_t i = 0; i < 12; ++i) mass += g(i, j);
    EXPECT_EQ(mass, up[j]);
  }
}

TEST(FdCheck, ConstantFunctionHasZeroError) {
  Single one(Tensor::vector({1.0, -3.0}));
  auto loss = [](Tape& t, ParamStore&) { return t.constant(Tensor::scalar(4.0)); };
  EXPECT_EQ(fd_gradient_check(loss, one.store, 1e-5), 0.0);
}

TEST(FdCheck, SquaredNorm) {
  Single one(random_tensor({4, 4}, 31));
  auto loss = [](Tape& t, ParamStore& st) { return sum(square(t.param(st, "x"))); };
  EXPECT_LT(fd_gradient_check(loss, one.store, 1e-5), 1e-9);
}

TEST(FdCheck, RejectsNonPositiveStep) {
  Single one(Tensor::vector({1.0}));
  auto loss = [](Tape& t, ParamStore& st) { return sum(t.param(st, "x")); };
  EXPECT_THROW(fd_gradient_check(loss, one.store, 0.0), ValidationError);
}

// ---------------------------------------------------------------------------
// Every primitive against central differences on random shapes.

struct PrimitiveCase {
  const char* name;
  std::function<Var(Tape&, ParamStore&, std::size_t, std::size_t)> build;
};

class PrimitiveFd : public ::testing::TestWithParam<PrimitiveCase> {};

TEST_P(PrimitiveFd, MatchesCentralDifferences) {
  const auto& pc = GetParam();
  CounterRng rng(derive_seed(5, {std::hash<std::string>{}(pc.name)}));
  for (int trial = 0; trial < 3; ++trial) {
    const std::size_t r = trial == 2 ? 64 : rng.uniform_int(1, 16);
    const std::size_t c = trial == 2 ? 64 : rng.uniform_int(1, 16);
    ParamStore s;
    s.add("a", random_tensor({r, c}, rng.next_u64()));
    s.add("b", random_tensor({r, c}, rng.next_u64()));
    s.add("k", random_tensor({c, c}, rng.next_u64()));
    s.add("row", random_tensor({1, c}, rng.next_u64()));
    const std::uint64_t wseed = rng.next_u64();
    auto loss = [&](Tape& t, ParamStore& st) {
      Var out = pc.build(t, st, r, c);
      // A fixed random weighting keeps every output entry's adjoint distinct.
      Var w = t.constant(random_tensor(out.shape(), wseed, 0.5, 1.5));
      return sum(hadamard(out, w));
    };
    EXPECT_LT(fd_gradient_check(loss, s, 1e-5), 1e-6) << pc.name << " " << r << "x" << c;
  }
}

INSTANTIATE_TEST_SUITE_P(
    AllPrimitives, PrimitiveFd,
    ::testing::Values(
        PrimitiveCase{"matmul", [](Tape& t, ParamStore& s, auto, auto) { return matmul(t.param(s, "a"), t.param(s, "k")); }},
        PrimitiveCase{"add", [](Tape& t, ParamStore& s, auto, auto) { return add(t.param(s, "a"), t.param(s, "b")); }},
        PrimitiveCase{"add_row", [](Tape& t, ParamStore& s, auto, auto) { return add(t.param(s, "a"), t.param(s, "row")); }},
        PrimitiveCase{"sub", [](Tape& t, ParamStore& s, auto, auto) { return sub(t.param(s, "a"), t.param(s, "b")); }},
        PrimitiveCase{"hadamard",
                      [](Tape& t, ParamStore& s, auto, auto) { return hadamard(t.param(s, "a"), t.param(s, "b")); }},
        PrimitiveCase{"hadamard_row",
                      [](Tape& t, ParamStore& s, auto, auto) { return hadamard(t.param(s, "a"), t.param(s, "row")); }},
        PrimitiveCase{"tanh", [](Tape& t, ParamStore& s, auto, auto) { return tanh(t.param(s, "a")); }},
        PrimitiveCase{"maxpool0", [](Tape& t, ParamStore& s, auto, auto) { return maxpool(t.param(s, "a"), 0); }},
        PrimitiveCase{"maxpool1", [](Tape& t, ParamStore& s, auto, auto) { return maxpool(t.param(s, "a"), 1); }},
        PrimitiveCase{"sum_all", [](Tape& t, ParamStore& s, auto, auto) { return sum(t.param(s, "a")); }},
        PrimitiveCase{"sum0", [](Tape& t, ParamStore& s, auto, auto) { return sum(t.param(s, "a"), 0); }},
        PrimitiveCase{"sum1", [](Tape& t, ParamStore& s, auto, auto) { return sum(t.param(s, "a"), 1); }},
        PrimitiveCase{"mean", [](Tape& t, ParamStore& s, auto, auto) { return mean(t.param(s, "a")); }},
        PrimitiveCase{"square", [](Tape& t, ParamStore& s, auto, auto) { return square(t.param(s, "a")); }},
        PrimitiveCase{"scale", [](Tape& t, ParamStore& s, auto, auto) { return scale(t.param(s, "a"), -1.7, 0.3); }},
        PrimitiveCase{"concat0",
                      [](Tape& t, ParamStore& s, auto, auto) {
                        return concat({t.param(s, "a"), t.param(s, "row"), t.param(s, "b")}, 0);
                      }},
        PrimitiveCase{"concat1",
                      [](Tape& t, ParamStore& s, auto, auto) { return concat({t.param(s, "a"), t.param(s, "b")}, 1); }},
        PrimitiveCase{"slice0",
                      [](Tape& t, ParamStore& s, std::size_t r, auto) { return slice(t.param(s, "a"), 0, r / 2, r); }},
        PrimitiveCase{"slice1",
                      [](Tape& t, ParamStore& s, auto, std::size_t c) { return slice(t.param(s, "a"), 1, 0, (c + 1) / 2); }}),
    [](const auto& info) { return std::string(info.param.name); });

TEST(Primitives, DoNotMutateInputs) {
  const Tensor a0 = random_tensor({5, 4}, 61), b0 = random_tensor({5, 4}, 62), k0 = random_tensor({4, 4}, 63);
  Tape t;
  Var a = t.constant(a0), b = t.constant(b0), k = t.constant(k0);
  std::vector<Var> outs = {matmul(a, k), add(a, b),     sub(a, b),       hadamard(a, b), tanh(a),
                           maxpool(a, 0), maxpool(a, 1), sum(a, 0),       sum(a, 1),      mean(a),
                           square(a),    scale(a, 2.0), concat({a, b}, 0), slice(a, 1, 1, 3)};
  Var loss = sum(outs.front());
  for (std::size_t i = 1; i < outs.size(); ++i) loss = add(loss, sum(outs[i]));
  t.backward(loss);
  EXPECT_EQ(a.value(), a0);
  EXPECT_EQ(b.value(), b0);
  EXPECT_EQ(k.value(), k0);
}

TEST(Tape, ReplayIsBitIdentical) {
  auto run = [] {
    ParamStore s;
    s.add("W", random_tensor({6, 8}, 71));
    s.add("V", random_tensor({8, 3}, 72));
    Tape t;
    Var h = tanh(matmul(t.constant(random_tensor({20, 6}, 73)), t.param(s, "W")));
    Var loss = mean(square(matmul(maxpool(h, 0), t.param(s, "V"))));
    t.backward(loss);
    return std::make_tuple(loss.value(), s.at("W").grad, s.at("V").grad);
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, AdjointShapesMatchValues) {
  ParamStore s;
  s.add("W", random_tensor({3, 4}, 81));
  Tape t;
  Var x = t.constant(random_tensor({5, 3}, 82));
  Var h = tanh(matmul(x, t.param(s, "W")));
  Var p = maxpool(h, 0);
  t.backward(sum(p));
  for (NodeId id = 0; id < t.size(); ++id) EXPECT_EQ(t.adjoint(id).shape(), t.value(id).shape());
}

TEST(Matmul, RowsIndependentOfBatch) {
  const Tensor w = random_tensor({7, 9}, 91);
  const Tensor x = random_tensor({13, 7}, 92);
  const Tensor full = kernels::matmul(x, w);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    Tensor row(Shape{1, 7});
    for (std::size_t j = 0; j < 7; ++j) row[j] = x(i, j);
    const Tensor one = kernels::matmul(row, w);
    for (std::size_t j = 0; j < 9; ++j) EXPECT_EQ(one[j], full(i, j));
  }
}
