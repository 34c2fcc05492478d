#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "support.hpp"

using namespace metatte;
using metatte::testing::grad_check;
using metatte::testing::random_tensor;
using metatte::testing::weighted_sum;

namespace {

Tensor t2(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor(Shape{r, c}, std::move(v)); }

}  // namespace

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), DimensionError);
  const Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_DOUBLE_EQ(t.at(1, 2), 1.5);
}

TEST(Autodiff, SoftmaxOfEqualScoresIsUniform) {
  Tape tape;
  const Var x = tape.constant(Tensor(Shape{1, 3}, std::vector<double>{0, 0, 0}));
  const auto y = ad::softmax(x, 1).value();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], 1.0 / 3.0, 1e-15);
}

TEST(Autodiff, ReluClampsNegatives) {
  Tape tape;
  const Var x = tape.constant(Tensor(Shape{3}, std::vector<double>{-1, 0, 2}));
  EXPECT_EQ(ad::relu(x).value().vec(), (std::vector<double>{0, 0, 2}));
}

TEST(Autodiff, ShapeMismatchNamesBothShapes) {
  Tape tape;
  const Var a = tape.constant(Tensor(Shape{2, 3}));
  const Var b = tape.constant(Tensor(Shape{3, 2}));
  try {
    ad::add(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3,2]"), std::string::npos) << msg;
  }
  EXPECT_THROW(ad::matmul(a, a), DimensionError);
}

TEST(Autodiff, NonFiniteOutputRaisesNumericError) {
  Tape tape;
  const Var big = tape.constant(Tensor(Shape{1}, std::vector<double>{1e200}));
  EXPECT_THROW(ad::mul(big, big), NumericError);
}

TEST(Autodiff, MatmulMatchesHandProduct) {
  Tape tape;
  const Var a = tape.constant(t2(2, 2, {1, 2, 3, 4}));
  const Var b = tape.constant(t2(2, 2, {5, 6, 7, 8}));
  EXPECT_EQ(ad::matmul(a, b).value().vec(), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Autodiff, UnusedParameterGetsExactlyZeroGradient) {
  Tape tape;
  const Var a = tape.variable(t2(1, 2, {1, 2}), "a");
  const Var unused = tape.variable(t2(1, 2, {3, 4}), "unused");
  (void)unused;
  const Var loss = ad::reduce_sum(ad::mul(a, a));
  tape.backward(loss);
  EXPECT_EQ(tape.grad("unused").vec(), (std::vector<double>{0, 0}));
  EXPECT_EQ(tape.grad("a").vec(), (std::vector<double>{2, 4}));
}

TEST(Autodiff, ReusedNodeAccumulatesGradient) {
  Tape tape;
  const Var x = tape.variable(Tensor(Shape{1}, std::vector<double>{3.0}), "x");
  const Var y = ad::add(ad::mul(x, x), x);  // x^2 + x
  tape.backward(ad::reduce_sum(y));
  EXPECT_DOUBLE_EQ(tape.grad("x")[0], 7.0);
}

// Central-difference checks of every primitive on random 3x4 inputs.
class PrimitiveGradient : public ::testing::Test {
 protected:
  Rng rng{20240611};
  void expect_ok(const std::map<std::string, Tensor>& leaves, const metatte::testing::LossBuilder& f) {
    const auto r = grad_check(leaves, f);
    EXPECT_GT(r.checked, 0u);
    EXPECT_LT(r.max_rel_err, 1e-6) << "worst " << r.worst;
  }
  Tensor rand34() { return random_tensor({3, 4}, rng); }
};

TEST_F(PrimitiveGradient, Matmul) {
  expect_ok({{"a", rand34()}, {"b", random_tensor({4, 2}, rng)}},
            [](Tape& t, const auto& v) { return weighted_sum(t, ad::matmul(v.at("a"), v.at("b")), 1); });
}

TEST_F(PrimitiveGradient, AddSubMul) {
  expect_ok({{"a", rand34()}, {"b", rand34()}}, [](Tape& t, const auto& v) {
    return weighted_sum(t, ad::mul(ad::add(v.at("a"), v.at("b")), ad::sub(v.at("a"), v.at("b"))), 2);
  });
}

TEST_F(PrimitiveGradient, AffineAndBias) {
  expect_ok({{"a", rand34()}, {"b", random_tensor({4}, rng)}}, [](Tape& t, const auto& v) {
    return weighted_sum(t, ad::add_bias(ad::affine(v.at("a"), 1.7, -0.3), v.at("b")), 3);
  });
}

TEST_F(PrimitiveGradient, Relu) {
  // Keep inputs away from the kink.
  Tensor a = rand34();
  for (double& x : a.data()) x += x >= 0 ? 0.1 : -0.1;
  expect_ok({{"a", a}}, [](Tape& t, const auto& v) { return weighted_sum(t, ad::relu(v.at("a")), 4); });
}

TEST_F(PrimitiveGradient, Tanh) {
  expect_ok({{"a", rand34()}}, [](Tape& t, const auto& v) { return weighted_sum(t, ad::tanh(v.at("a")), 5); });
}

TEST_F(PrimitiveGradient, Sigmoid) {
  expect_ok({{"a", rand34()}}, [](Tape& t, const auto& v) { return weighted_sum(t, ad::sigmoid(v.at("a")), 6); });
}

TEST_F(PrimitiveGradient, Abs) {
  Tensor a = rand34();
  for (double& x : a.data()) x += x >= 0 ? 0.1 : -0.1;
  expect_ok({{"a", a}}, [](Tape& t, const auto& v) { return weighted_sum(t, ad::abs(v.at("a")), 7); });
}

TEST_F(PrimitiveGradient, SoftmaxBothAxes) {
  expect_ok({{"a", rand34()}}, [](Tape& t, const auto& v) {
    return ad::add(weighted_sum(t, ad::softmax(v.at("a"), 0), 8), weighted_sum(t, ad::softmax(v.at("a"), 1), 9));
  });
}

TEST_F(PrimitiveGradient, Reductions) {
  expect_ok({{"a", rand34()}}, [](Tape& t, const auto& v) {
    const Var a = v.at("a");
    Var s = ad::add(ad::reduce_sum(ad::mul(a, a)), ad::reduce_mean(a));
    s = ad::add(s, weighted_sum(t, ad::reduce_sum(a, 0), 10));
    s = ad::add(s, weighted_sum(t, ad::reduce_mean(a, 1), 11));
    return s;
  });
}

TEST_F(PrimitiveGradient, ConcatStackSlice) {
  expect_ok({{"a", rand34()}, {"b", rand34()}}, [](Tape& t, const auto& v) {
    const Var a = v.at("a"), b = v.at("b");
    Var s = weighted_sum(t, ad::concat({a, b, a}), 12);
    s = ad::add(s, weighted_sum(t, ad::stack({a, b}), 13));
    s = ad::add(s, weighted_sum(t, ad::slice(a, 1, 1, 3), 14));
    s = ad::add(s, weighted_sum(t, ad::slice(b, 0, 2, 3), 15));
    return s;
  });
}

TEST_F(PrimitiveGradient, ReshapeSwapGatherBlend) {
  expect_ok({{"a", rand34()}, {"b", rand34()}}, [](Tape& t, const auto& v) {
    const Var a = v.at("a"), b = v.at("b");
    Var s = weighted_sum(t, ad::swap_last_axes(ad::reshape(a, {3, 2, 2})), 16);
    s = ad::add(s, weighted_sum(t, ad::gather_rows(a, {2, 0, 2}), 17));
    s = ad::add(s, weighted_sum(t, ad::blend_rows({1.0, 0.0, 1.0}, a, b), 18));
    return s;
  });
}

TEST(Autodiff, GatherRowsOutOfRangeIsBoundsError) {
  Tape tape;
  const Var table = tape.constant(Tensor(Shape{7, 4}));
  EXPECT_THROW(ad::gather_rows(table, {7}), BoundsError);
}

TEST(Autodiff, ChainIsDeterministic) {
  auto run = [] {
    Rng rng(5);
    Tape tape;
    const Var a = tape.variable(random_tensor({3, 4}, rng), "a");
    const Var w = tape.variable(random_tensor({4, 4}, rng), "w");
    const Var loss = ad::reduce_mean(ad::tanh(ad::matmul(a, w)));
    tape.backward(loss);
    return std::make_pair(loss.value().item(), tape.grad("w").vec());
  };
  EXPECT_EQ(run(), run());
}

TEST(Xavier, DeterministicPerSeed) {
  EXPECT_EQ(xavier_init({5, 7}, 42), xavier_init({5, 7}, 42));
  EXPECT_FALSE(xavier_init({5, 7}, 42) == xavier_init({5, 7}, 43));
}

TEST(Xavier, RespectsBound) {
  const Tensor t = xavier_init({64, 64}, 1);
  const double bound = std::sqrt(6.0 / 128.0);
  EXPECT_NEAR(bound, 0.2165, 1e-4);
  for (double v : t.data()) EXPECT_LE(std::abs(v), bound);
}

TEST(Xavier, SampleMeanWithinThreeSigma) {
  const Tensor t = xavier_init({100000}, 9);  // vector: fan_in 1, fan_out 1e5
  const double bound = std::sqrt(6.0 / (1.0 + 100000.0));
  const double sigma = bound / std::sqrt(3.0);
  const double mean = std::accumulate(t.data().begin(), t.data().end(), 0.0) / 1e5;
  EXPECT_LT(std::abs(mean), 3.0 * sigma / std::sqrt(1e5));
}

TEST(Xavier, EmptyShapeIsDimensionError) { EXPECT_THROW(xavier_init({}, 1), DimensionError); }

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParameterStore s;
  s.add("w", Tensor(Shape{2}, std::vector<double>{0.5, -1.5}));
  s.adam_step({{"w", Tensor(Shape{2})}});
  EXPECT_EQ(s.get("w").vec(), (std::vector<double>{0.5, -1.5}));
  EXPECT_EQ(s.adam_steps(), 1u);
}

// Independent scalar Adam with default hyperparameters.
double scalar_adam(double p, const std::vector<double>& grads) {
  double m = 0, v = 0;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, double(t)));
    const double vh = v / (1 - std::pow(0.999, double(t)));
    p -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
  }
  return p;
}

TEST(Adam, SingleScalarStep) {
  ParameterStore s;
  s.add("p", Tensor(Shape{1}, 0.0));
  s.adam_step({{"p", Tensor(Shape{1}, 1.0)}});
  EXPECT_NEAR(s.get("p")[0], -0.000999999990, 1e-15);
  EXPECT_NEAR(s.get("p")[0], scalar_adam(0.0, {1.0}), 1e-15);
}

TEST(Adam, TwoStepsMatchScalarOracle) {
  ParameterStore s;
  s.add("p", Tensor(Shape{1}, 0.0));
  s.adam_step({{"p", Tensor(Shape{1}, 1.0)}});
  s.adam_step({{"p", Tensor(Shape{1}, 1.0)}});
  EXPECT_NEAR(s.get("p")[0], scalar_adam(0.0, {1.0, 1.0}), 1e-12);
}

TEST(Adam, MissingGradientIsConsistencyError) {
  ParameterStore s;
  s.add("a", Tensor(Shape{1}));
  s.add("b", Tensor(Shape{1}));
  EXPECT_THROW(s.adam_step({{"a", Tensor(Shape{1})}}), ConsistencyError);
  EXPECT_EQ(s.adam_steps(), 0u);
}

TEST(ParameterStore, DuplicateNameRejected) {
  ParameterStore s;
  s.add("a", Tensor(Shape{1}));
  EXPECT_THROW(s.add("a", Tensor(Shape{1})), ConsistencyError);
}

TEST(Snapshot, RoundTripRestoresExactly) {
  ParameterStore s;
  s.add("a", Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3, 4}));
  s.add("b", Tensor(Shape{3}, std::vector<double>{5, 6, 7}));
  const Snapshot snap = s.snapshot();
  s.get("a")[0] = 99;
  s.adam_step({{"a", Tensor(Shape{2, 2}, 1.0)}, {"b", Tensor(Shape{3}, 1.0)}});
  EXPECT_EQ(snap[0].second[0], 1.0);  // deep copy
  s.load(snap);
  EXPECT_EQ(s.snapshot(), snap);
}

TEST(Snapshot, EmptyStoreGivesEmptySnapshot) {
  ParameterStore s;
  EXPECT_TRUE(s.snapshot().empty());
  EXPECT_EQ(snapshot_bytes(s.snapshot()), 0u);
}

TEST(Snapshot, ByteSizeIsSumOfTensorSizes) {
  ParameterStore s;
  s.add("a", Tensor(Shape{2, 3}));
  s.add("b", Tensor(Shape{4}));
  EXPECT_EQ(snapshot_bytes(s.snapshot()), (6 + 4) * sizeof(double));
}

TEST(Snapshot, ShapeDriftIsConsistencyError) {
  ParameterStore s;
  s.add("a", Tensor(Shape{2}));
  Snapshot bad{{"a", Tensor(Shape{3})}};
  EXPECT_THROW(s.load(bad), ConsistencyError);
  Snapshot renamed{{"z", Tensor(Shape{2})}};
  EXPECT_THROW(s.load(renamed), ConsistencyError);
}

TEST(Rng, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(1, "init"), derive_seed(1, "init"));
  EXPECT_NE(derive_seed(1, "init"), derive_seed(1, "task-sampler"));
  EXPECT_NE(derive_seed(1, std::uint64_t{0}), derive_seed(2, std::uint64_t{0}));
  Rng a(3), b(3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, IndexIsUniformish) {
  Rng rng(11);
  std::vector<int> counts(5);
  for (int i = 0; i < 50000; ++i) ++counts[rng.index(5)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}
