#include <gtest/gtest.h>

#include "support.hpp"

using namespace coseg;
using coseg::testing::gradient_error;
using coseg::testing::numeric_gradient;
using coseg::testing::random_tensor;

namespace {

/// Runs `build` with graph recording on, back-propagates, then checks every
/// leaf's analytic gradient against central differences of the same function.
void expect_gradients_match(std::vector<Var> leaves, const std::function<Var()>& build,
                            double tol = 1e-3) {
  for (auto& l : leaves) l.zero_grad();
  backward(build());
  for (auto& leaf : leaves) {
    Tensor analytic = leaf.grad();
    Tensor numeric = numeric_gradient(leaf.mutable_value(), [&] {
      NoGradGuard ng;
      return double(build().value()[0]);
    });
    EXPECT_LE(gradient_error(analytic, numeric), tol);
  }
}

}  // namespace

TEST(Matmul, IdentityLeavesInputUnchanged) {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({3, 3}, rng);
  EXPECT_EQ(matmul(Tensor::identity(3), x), x);
}

TEST(Matmul, ZeroTimesAnythingIsZero) {
  std::mt19937_64 rng(2);
  Tensor y = matmul(Tensor::zeros({2, 3}), random_tensor({3, 4}, rng));
  EXPECT_EQ(y.shape(), (Shape{2, 4}));
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Matmul, ShapeMismatchIsDimensionError) {
  Var a = Var::leaf(Tensor::zeros({2, 3}), true);
  Var b = Var::leaf(Tensor::zeros({4, 2}), true);
  EXPECT_THROW(matmul(a, b), DimensionError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  Var a = Var::leaf(random_tensor({4, 4}, rng), true);
  Var b = Var::leaf(random_tensor({4, 4}, rng), true);
  Var w = constant(random_tensor({4, 4}, rng));
  expect_gradients_match({a, b}, [&] { return sum(mul(matmul(a, b), w)); });
}

TEST(LayerNorm, ConstantRowCentersToZero) {
  Var x = constant(Tensor::vector({1, 1, 1}));
  Var y = layer_norm(x, constant(Tensor({3}, 1.0f)), constant(Tensor::zeros({3})));
  for (float v : y.value().data()) EXPECT_FLOAT_EQ(v, 0.0f);
}

TEST(LayerNorm, UnitVarianceRowIsPreservedUpToEps) {
  Var y = layer_norm(constant(Tensor::vector({1, -1})), constant(Tensor({2}, 1.0f)),
                     constant(Tensor::zeros({2})));
  const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y.value()[0], expected, 1e-7);
  EXPECT_NEAR(y.value()[1], -expected, 1e-7);
}

TEST(LayerNorm, RowsHaveZeroMeanUnitVariance) {
  std::mt19937_64 rng(4);
  Var y = layer_norm(constant(random_tensor({5, 8}, rng, -3, 3)), constant(Tensor({8}, 1.0f)),
                     constant(Tensor::zeros({8})));
  for (std::size_t r = 0; r < 5; ++r) {
    double m = 0, v = 0;
    for (float x : y.value().row(r)) m += x;
    m /= 8;
    for (float x : y.value().row(r)) v += (x - m) * (x - m);
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(v / 8, 1.0, 1e-3);
  }
}

TEST(LayerNorm, WidthMismatchIsDimensionError) {
  EXPECT_THROW(layer_norm(constant(Tensor::zeros({2, 4})), constant(Tensor({3}, 1.0f)),
                          constant(Tensor::zeros({3}))),
               DimensionError);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  Var x = Var::leaf(random_tensor({3, 6}, rng), true);
  Var g = Var::leaf(random_tensor({6}, rng, 0.5f, 1.5f), true);
  Var b = Var::leaf(random_tensor({6}, rng), true);
  Var w = constant(random_tensor({3, 6}, rng));
  expect_gradients_match({x, g, b}, [&] { return sum(mul(layer_norm(x, g, b), w)); });
}

TEST(Softmax, UniformInputGivesUniformOutput) {
  Var y = softmax(constant(Tensor::vector({0, 0, 0})));
  for (float v : y.value().data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-7);
}

TEST(Softmax, LogInputsGiveProportionalOutput) {
  Var y = softmax(constant(Tensor::vector({0.0f, float(std::log(2.0)), float(std::log(3.0))})));
  EXPECT_NEAR(y.value()[0], 1.0 / 6.0, 1e-6);
  EXPECT_NEAR(y.value()[1], 2.0 / 6.0, 1e-6);
  EXPECT_NEAR(y.value()[2], 3.0 / 6.0, 1e-6);
}

TEST(Softmax, ShiftInvarianceAndRowSums) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({4, 7}, rng, -5, 5);
    Tensor shifted = x;
    const float c = std::uniform_real_distribution<float>(-50, 50)(rng);
    for (auto& v : shifted.storage()) v += c;
    Tensor a = softmax(constant(x)).value();
    Tensor b = softmax(constant(shifted)).value();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (float v : a.row(r)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, ColumnAxis) {
  Tensor x = Tensor::matrix(2, 2, {0, 5, 0, 5});
  Tensor y = softmax(constant(x), 0).value();
  for (float v : y.data()) EXPECT_NEAR(v, 0.5, 1e-7);
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  Var x = Var::leaf(random_tensor({3, 5}, rng), true);
  Var w = constant(random_tensor({3, 5}, rng));
  expect_gradients_match({x}, [&] { return sum(mul(softmax(x), w)); });
  expect_gradients_match({x}, [&] { return sum(mul(softmax(x, 0), w)); });
}

TEST(L2Normalize, ThreeFourFive) {
  Var y = l2_normalize(constant(Tensor::vector({3, 4})));
  EXPECT_FLOAT_EQ(y.value()[0], 0.6f);
  EXPECT_FLOAT_EQ(y.value()[1], 0.8f);
}

TEST(L2Normalize, UnitVectorIsFixedPoint) {
  std::mt19937_64 rng(8);
  Tensor u = coseg::testing::random_unit_rows(4, 6, rng);
  Tensor y = l2_normalize(constant(u)).value();
  for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(y[i], u[i], 1e-7);
}

TEST(L2Normalize, ZeroRowStaysZeroAndIsFlagged) {
  std::vector<std::size_t> degenerate;
  Var x = Var::leaf(Tensor::matrix(2, 2, {0, 0, 3, 4}), true);
  Var y = l2_normalize(x, &degenerate);
  EXPECT_EQ(degenerate, std::vector<std::size_t>{0});
  EXPECT_EQ(y.value()[0], 0.0f);
  EXPECT_EQ(y.value()[1], 0.0f);
  backward(sum(y));
  EXPECT_EQ(x.grad()[0], 0.0f);
  EXPECT_EQ(x.grad()[1], 0.0f);
}

TEST(L2Normalize, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  Var x = Var::leaf(random_tensor({4, 5}, rng), true);
  Var w = constant(random_tensor({4, 5}, rng));
  expect_gradients_match({x}, [&] { return sum(mul(l2_normalize(x), w)); });
}

TEST(Backward, SumGivesOnes) {
  std::mt19937_64 rng(10);
  Var x = Var::leaf(random_tensor({3, 4}, rng), true);
  backward(sum(x));
  for (float g : x.grad().data()) EXPECT_EQ(g, 1.0f);
}

TEST(Backward, DotWithSelfGivesTwoX) {
  std::mt19937_64 rng(11);
  Var x = Var::leaf(random_tensor({6}, rng), true);
  backward(dot(x, x));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_FLOAT_EQ(x.grad()[i], 2.0f * x.value()[i]);
}

TEST(Backward, NonScalarLossIsDimensionError) {
  Var x = Var::leaf(Tensor::zeros({2}), true);
  EXPECT_THROW(backward(scale(x, 2.0f)), DimensionError);
}

TEST(Backward, GradientsAccumulateAcrossCallsAndUses) {
  Var x = Var::leaf(Tensor::vector({1, 2}), true);
  backward(add(sum(x), sum(scale(x, 3.0f))));
  EXPECT_FLOAT_EQ(x.grad()[0], 4.0f);
  backward(sum(x));
  EXPECT_FLOAT_EQ(x.grad()[1], 5.0f);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0f);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Var x = Var::leaf(Tensor::vector({1, 2}), true);
  NoGradGuard ng;
  Var y = sum(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Ops, NonFiniteResultIsNumericError) {
  Var x = constant(Tensor::vector({std::numeric_limits<float>::max(), 1}));
  EXPECT_THROW(scale(x, 10.0f), NumericError);
}

TEST(Ops, RemainingOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(12);
  Var x = Var::leaf(random_tensor({4, 6}, rng), true);
  Var b = Var::leaf(random_tensor({6}, rng), true);
  Var tok = Var::leaf(random_tensor({6}, rng), true);
  Var w = constant(random_tensor({4, 6}, rng));
  expect_gradients_match({x, b}, [&] { return sum(mul(gelu(add_bias(x, b)), w)); });
  expect_gradients_match({x, tok}, [&] { return sum(mul(replace_rows(x, {1, 3}, tok), w)); });
  expect_gradients_match({x}, [&] { return sum_squares(gather_rows(x, {0, 2, 2})); });
  expect_gradients_match({x}, [&] { return sum(mul(transpose(transpose(x)), w)); });
}

TEST(Attention, ProbabilityRowsSumToOneAndGradientsMatch) {
  std::mt19937_64 rng(13);
  Var q = Var::leaf(random_tensor({6, 4}, rng), true);
  Var k = Var::leaf(random_tensor({6, 4}, rng), true);
  Var v = Var::leaf(random_tensor({6, 4}, rng), true);
  Var w = constant(random_tensor({6, 4}, rng));
  Tensor probs;
  multi_head_attention(q, k, v, 2, 3, &probs);
  EXPECT_EQ(probs.shape(), (Shape{2 * 2 * 3, 3}));
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double s = 0;
    for (float p : probs.row(r)) s += p;
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  expect_gradients_match({q, k, v}, [&] { return sum(mul(multi_head_attention(q, k, v, 2, 3), w)); });
}

TEST(Attention, BlocksAreIndependent) {
  std::mt19937_64 rng(14);
  Tensor q = random_tensor({6, 4}, rng), k = random_tensor({6, 4}, rng), v = random_tensor({6, 4}, rng);
  Tensor full = multi_head_attention(constant(q), constant(k), constant(v), 2, 3).value();
  Tensor k2 = k, v2 = v;
  for (std::size_t c = 0; c < 4; ++c) k2(4, c) += 1.0f, v2(5, c) -= 1.0f;
  Tensor changed = multi_head_attention(constant(q), constant(k2), constant(v2), 2, 3).value();
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(full(r, c), changed(r, c));
}

TEST(Ops, Deterministic) {
  auto run = [] {
    std::mt19937_64 rng(15);
    Var x = Var::leaf(random_tensor({5, 8}, rng), true);
    Var w = Var::leaf(random_tensor({8, 8}, rng), true);
    Var y = sum(softmax(layer_norm(matmul(x, w), constant(Tensor({8}, 1.0f)), constant(Tensor::zeros({8})))));
    backward(scale(y, 1.0f));
    return std::make_pair(matmul(x.value(), w.value()), w.grad());
  };
  EXPECT_EQ(run(), run());
}

// --- optimizer -------------------------------------------------------------

TEST(Sgd, ZeroLearningRateLeavesValues) {
  std::mt19937_64 rng(16);
  Parameter p("p", random_tensor({3, 3}, rng));
  const Tensor before = p.value();
  p.mutable_grad() = random_tensor({3, 3}, rng);
  sgd_step({&p}, Optimizer{0.0, 1e-4, 0.9});
  EXPECT_EQ(p.value(), before);
  for (float g : p.grad().data()) EXPECT_EQ(g, 0.0f);
}

TEST(Sgd, PlainGradientStep) {
  Parameter p("p", Tensor::vector({1.0f}));
  p.mutable_grad()[0] = 2.0f;
  sgd_step({&p}, Optimizer{0.5, 0.0, 0.0});
  EXPECT_FLOAT_EQ(p.value()[0], 0.0f);
}

TEST(Sgd, TwoMomentumStepsMatchHandUnrolledRecurrence) {
  // buf1 = 0.5 + 0.01·1 = 0.51,            v1 = 1 − 0.1·0.51 = 0.949
  // buf2 = 0.9·0.51 + (−0.25 + 0.01·0.949), v2 = v1 − 0.1·buf2
  const double buf1 = 0.5 + 0.01 * 1.0;
  const double v1 = 1.0 - 0.1 * buf1;
  const double buf2 = 0.9 * buf1 + (-0.25 + 0.01 * v1);
  const double v2 = v1 - 0.1 * buf2;
  Parameter p("p", Tensor::vector({1.0f}));
  const Optimizer opt{0.1, 0.01, 0.9};
  p.mutable_grad()[0] = 0.5f;
  sgd_step({&p}, opt);
  EXPECT_NEAR(p.value()[0], v1, 1e-6);
  p.mutable_grad()[0] = -0.25f;
  sgd_step({&p}, opt);
  EXPECT_NEAR(p.value()[0], v2, 1e-6);
  EXPECT_NEAR(p.momentum_buffer()[0], buf2, 1e-6);
}

TEST(Sgd, NonFiniteGradientAbortsBeforeAnyUpdate) {
  Parameter a("a", Tensor::vector({1.0f})), b("b", Tensor::vector({1.0f}));
  a.mutable_grad()[0] = 1.0f;
  b.mutable_grad()[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(sgd_step({&a, &b}, Optimizer{}), NumericError);
  EXPECT_EQ(a.value()[0], 1.0f);
}

TEST(Sgd, RejectsInvalidMomentum) {
  Parameter a("a", Tensor::vector({1.0f}));
  EXPECT_THROW(sgd_step({&a}, Optimizer{0.1, 0.0, 1.0}), ConfigError);
}

// --- checkpoint blob -------------------------------------------------------

TEST(Checkpoint, ByteExactRoundTrip) {
  std::mt19937_64 rng(17);
  std::vector<CheckpointRecord> recs{{"a.weight", random_tensor({3, 4}, rng)},
                                     {"b", random_tensor({5}, rng)},
                                     {"empty", Tensor({0, 4})},
                                     {"ünï", random_tensor({2, 1, 3}, rng)}};
  const auto bytes = encode_checkpoint(recs);
  const auto back = decode_checkpoint(bytes);
  ASSERT_EQ(back.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(back[i].name, recs[i].name);
    EXPECT_EQ(back[i].tensor, recs[i].tensor);
  }
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, HandBuiltLayout) {
  const auto bytes = encode_checkpoint({{"w", Tensor::vector({1.0f})}});
  const std::vector<std::uint8_t> expected{'C', 'S', 'G', 'C', 1, 0, 1, 0, 0, 0, 1, 0, 'w',
                                           1,   1,   0,   0,   0, 0, 0, 0x80, 0x3f};
  EXPECT_EQ(bytes, expected);
}

TEST(Checkpoint, DistinctDecodeErrors) {
  auto bytes = encode_checkpoint({{"w", Tensor::vector({1.0f, 2.0f})}});
  auto kind_of = [](std::vector<std::uint8_t> b) {
    try {
      decode_checkpoint(b);
    } catch (const FormatError& e) {
      return e.kind;
    }
    ADD_FAILURE() << "no error";
    return FormatError::Kind::schema;
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(kind_of(bad_magic), FormatError::Kind::bad_magic);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_EQ(kind_of(bad_version), FormatError::Kind::bad_version);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_EQ(kind_of(truncated), FormatError::Kind::truncated);
}
