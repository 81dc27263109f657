// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "dnr/objectives.hpp"
#include "test_util.hpp"

using namespace dnr;
using dnr::testing::grad_check;
using dnr::testing::random_tensor;
using dnr::testing::VarMap;

namespace {

double corr_of(const Tensor& a, const Tensor& b) {
  Tape tape;
  return pearson_corr(tape.constant(a), tape.constant(b)).value().item();
}

Tensor negated(Tensor t) {
  for (double& v : t.data()) v = -v;
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// pearson_corr

TEST(Pearson, SelfAndAntiCorrelation) {
  RngStream rng(1);
  const Tensor a = random_tensor(rng, {10, 4});
  EXPECT_NEAR(corr_of(a, a), 1.0, 1e-12);
  EXPECT_NEAR(corr_of(a, negated(a)), -1.0, 1e-12);
}

TEST(Pearson, HandExample) {
  const Tensor a = Tensor::matrix({{1, 0}, {2, 1}, {3, 2}});
  const Tensor b = Tensor::matrix({{2, 5}, {4, 3}, {6, 1}});
  EXPECT_NEAR(corr_of(a, b), 0.0, 1e-12);
}

TEST(Pearson, ConstantDimensionContributesZero) {
  const Tensor a = Tensor::matrix({{1, 7}, {2, 7}, {3, 7}});
  const Tensor b = Tensor::matrix({{2, 1}, {4, 2}, {6, 3}});
  EXPECT_NEAR(corr_of(a, b), 0.5, 1e-12);
}

TEST(Pearson, NeedsTwoSamples) {
  EXPECT_THROW(corr_of(Tensor({1, 3}, 1.0), Tensor({1, 3}, 2.0)), contract_violation);
  EXPECT_THROW(corr_of(Tensor({3, 3}, 1.0), Tensor({3, 2}, 2.0)), contract_violation);
}

TEST(Pearson, InvariantToPositiveAffineRescaling) {
  RngStream rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor a = random_tensor(rng, {12, 3}), b = random_tensor(rng, {12, 3});
    Tensor c = b;
    for (std::size_t r = 0; r < c.rows(); ++r)
      for (std::size_t j = 0; j < c.cols(); ++j) c(r, j) = (0.5 + j) * b(r, j) + 3.0 - j;
    EXPECT_NEAR(corr_of(a, c), corr_of(a, b), 1e-10);
  }
}

// ---------------------------------------------------------------------------
// loss_uncor

TEST(Uncor, CollapsedStreamsGiveModalityCount) {
  RngStream rng(3);
  Tape tape;
  DecomposedBatch reps;
  for (int m = 0; m < 3; ++m) {
    const Var u = tape.constant(random_tensor(rng, {6, 4}));
    reps.push_back({u, u, tape.constant(random_tensor(rng, {6, 4}))});
  }
  EXPECT_EQ(loss_uncor(reps).value().item(), 3.0);
}

TEST(Uncor, NegatedStreamsCountOnePerModality) {
  RngStream rng(4);
  Tape tape;
  const Tensor u = random_tensor(rng, {6, 4});
  const Var uv = tape.constant(u);
  EXPECT_NEAR(loss_uncor({{uv, tape.constant(negated(u)), uv}}).value().item(), 1.0, 1e-12);
}

TEST(Uncor, IndependentStreamsNearZero) {
  RngStream rng(5);
  Tape tape;
  DecomposedBatch reps;
  for (int m = 0; m < 3; ++m) {
    const Var u = tape.constant(random_tensor(rng, {10000, 4}));
    const Var r = tape.constant(random_tensor(rng, {10000, 4}));
    reps.push_back({u, r, u});
  }
  EXPECT_LT(loss_uncor(reps).value().item(), 0.05);
}

TEST(Uncor, NonNegativeAndZeroOnlyForUncorrelated) {
  RngStream rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    const Var u = tape.constant(random_tensor(rng, {5, 3})), r = tape.constant(random_tensor(rng, {5, 3}));
    EXPECT_GE(loss_uncor({{u, r, u}}).value().item(), 0.0);
  }
  // orthogonal centred columns: every per-dimension correlation is 0
  Tape tape;
  const Var u = tape.constant(Tensor::matrix({{1, 1}, {-1, 1}, {1, -1}, {-1, -1}}));
  const Var r = tape.constant(Tensor::matrix({{1, 1}, {1, -1}, {-1, 1}, {-1, -1}}));
  EXPECT_NEAR(loss_uncor({{u, r, u}}).value().item(), 0.0, 1e-10);
}

// ---------------------------------------------------------------------------
// loss_corr

TEST(Corr, IdenticalCrossModalStreams) {
  Tape tape;
  // r and s identical across modalities; u orthogonal to s per dimension
  const Var r = tape.constant(Tensor::matrix({{1, 2}, {2, 0}, {3, 5}, {4, 1}}));
  const Var s = tape.constant(Tensor::matrix({{1, 1}, {-1, 1}, {1, -1}, {-1, -1}}));
  const Var u = tape.constant(Tensor::matrix({{1, 1}, {1, -1}, {-1, 1}, {-1, -1}}));
  EXPECT_NEAR(loss_corr({{u, r, s}, {u, r, s}}, 0.5).value().item(), -4.0, 1e-12);
}

TEST(Corr, IndependentStreamsNearZero) {
  RngStream rng(7);
  Tape tape;
  DecomposedBatch reps;
  for (int m = 0; m < 3; ++m) {
    auto r = [&] { return tape.constant(random_tensor(rng, {10000, 4})); };
    reps.push_back({r(), r(), r()});
  }
  EXPECT_LT(std::abs(loss_corr(reps, 0.5).value().item()), 0.2);
}

TEST(Corr, AlphaZeroCutsCouplingGradient) {
  RngStream rng(8);
  Tape tape;
  const Var u = tape.leaf("u", random_tensor(rng, {6, 3}));
  const Var r1 = tape.constant(random_tensor(rng, {6, 3}));
  const Var s1 = tape.constant(random_tensor(rng, {6, 3}));
  const Var u2 = tape.constant(random_tensor(rng, {6, 3}));
  const Var r2 = tape.constant(random_tensor(rng, {6, 3}));
  const Var s2 = tape.constant(random_tensor(rng, {6, 3}));
  // u only enters through corr(s, u)
  const auto g = tape.backward(loss_corr({{u, r1, s1}, {u2, r2, s2}}, 0.0) + sum_all(u) * 0.0);
  double n = 0;
  for (double v : g.at("u").data()) n += v * v;
  EXPECT_EQ(n, 0.0);
}

TEST(Corr, SingleModalityRejected) {
  Tape tape;
  const Var x = tape.constant(Tensor({3, 2}, 1.0));
  EXPECT_THROW(loss_corr({{x, x, x}}, 0.5), contract_violation);
}

// ---------------------------------------------------------------------------
// cross_entropy

TEST(CrossEntropy, UniformLogits) {
  Tape tape;
  const std::vector<int> y{0, 3, 2};
  EXPECT_NEAR(cross_entropy(tape.constant(Tensor({3, 4}, 0.7)), y).value().item(), std::log(4.0), 1e-9);
}

TEST(CrossEntropy, ConfidentCorrectLogits) {
  Tape tape;
  Tensor l({2, 3});
  l(0, 1) = 50.0;
  l(1, 2) = 50.0;
  const std::vector<int> y{1, 2};
  EXPECT_LT(cross_entropy(tape.constant(l), y).value().item(), 1e-6);
}

TEST(CrossEntropy, HandExample) {
  Tape tape;
  const std::vector<int> y{2};
  EXPECT_NEAR(cross_entropy(tape.constant(Tensor({1, 3}, std::vector<double>{1, 2, 3})), y).value().item(),
              0.4076059644443803, 1e-12);
}

TEST(CrossEntropy, LabelOutOfRange) {
  Tape tape;
  const std::vector<int> y{3};
  EXPECT_THROW(cross_entropy(tape.constant(Tensor({1, 3})), y), contract_violation);
}

// ---------------------------------------------------------------------------
// infonce

TEST(InfoNce, IdenticalRowsGiveLogN) {
  Tape tape;
  const Var a = tape.constant(Tensor({5, 3}, 0.4));
  EXPECT_NEAR(infonce(a, a, 0.5).value().item(), std::log(5.0), 1e-9);
}

TEST(InfoNce, OrthogonalRowsSmallTemperature) {
  Tape tape;
  const Var a = tape.constant(Tensor::matrix({{1, 0, 0}, {0, 2, 0}, {0, 0, 3}}));
  EXPECT_LT(infonce(a, a, 0.01).value().item(), 1e-4);
}

TEST(InfoNce, SixtyDegreeExample) {
  Tape tape;
  const double th = std::numbers::pi / 3.0;
  const Var a = tape.constant(Tensor::matrix({{1, 0}, {std::cos(th), std::sin(th)}}));
  EXPECT_NEAR(infonce(a, a, 1.0).value().item(), 0.4740769841801067, 1e-12);
}

TEST(InfoNce, ExactlySymmetric) {
  RngStream rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    Tape tape;
    const Var a = tape.constant(random_tensor(rng, {6, 4})), b = tape.constant(random_tensor(rng, {6, 4}));
    EXPECT_EQ(infonce(a, b, 0.5).value().item(), infonce(b, a, 0.5).value().item());
  }
}

TEST(InfoNce, ZeroRowIsNumericFault) {
  Tape tape;
  const Var a = tape.constant(Tensor::matrix({{1, 0}, {0, 0}}));
  const Var b = tape.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  EXPECT_THROW(infonce(a, b, 0.5), numeric_fault);
}

// ---------------------------------------------------------------------------
// Refine terms

TEST(AugIntra, IdenticalViews) {
  Tape tape;
  const Var z = tape.constant(Tensor({4, 3}, 1.0));
  const std::vector<Var> two{z, z}, three{z, z, z};
  EXPECT_NEAR(loss_aug_intra(two, 0.5).value().item(), 2.0 * std::log(4.0), 1e-9);
  EXPECT_NEAR(loss_aug_intra(three, 0.5).value().item(), 6.0 * std::log(4.0), 1e-9);
  const std::vector<Var> one{z};
  EXPECT_THROW(loss_aug_intra(one, 0.5), contract_violation);
}

TEST(AugIntra, OrderedPairCount) {
  RngStream rng(10);
  Tape tape;
  std::vector<Var> z;
  for (int k = 0; k < 3; ++k) z.push_back(tape.constant(random_tensor(rng, {5, 3})));
  double expect = 0;
  for (int k = 0; k < 3; ++k)
    for (int n = 0; n < 3; ++n)
      if (k != n) expect += infonce(z[k], z[n], 0.5).value().item();
  EXPECT_NEAR(loss_aug_intra(z, 0.5).value().item(), expect, 1e-12);
}

TEST(AugMask, TermCountAndIdenticalValue) {
  Tape tape;
  const Var z = tape.constant(Tensor({4, 3}, 1.0));
  const std::vector<Var> aug{z, z}, masked{z, z, z};
  EXPECT_NEAR(loss_aug_mask(aug, masked, 0.5).value().item(), 6.0 * std::log(4.0), 1e-9);
}

TEST(AugMask, OrthogonalPairsSmallTemperature) {
  Tape tape;
  const Var z = tape.constant(Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
  const std::vector<Var> aug{z, z}, masked{z, z, z};
  EXPECT_LT(loss_aug_mask(aug, masked, 0.01).value().item(), 6e-4);
}

TEST(AugMask, ShapeMismatchRejected) {
  Tape tape;
  const std::vector<Var> aug{tape.constant(Tensor({4, 3}, 1.0))};
  const std::vector<Var> masked{tape.constant(Tensor({4, 2}, 1.0))};
  EXPECT_THROW(loss_aug_mask(aug, masked, 0.5), contract_violation);
}

// ---------------------------------------------------------------------------
// Combined objectives

TEST(Combined, DivideExamples) {
  const ObjectiveConfig cfg;
  EXPECT_DOUBLE_EQ(divide_objective(1.0, 0.0, 0.0, cfg), 1.0);
  EXPECT_DOUBLE_EQ(divide_objective(1.0, 2.0, -4.0, cfg), 1.0);
  ObjectiveConfig zero;
  zero.lambda_uncor = zero.lambda_corr = 0.0;
  EXPECT_DOUBLE_EQ(divide_objective(0.7, 5.0, -3.0, zero), 0.7);
  EXPECT_THROW(divide_objective(std::nan(""), 0.0, 0.0, cfg), numeric_fault);
}

TEST(Combined, RefineExamples) {
  const ObjectiveConfig cfg;
  EXPECT_NEAR(refine_objective(0.5, 1.0, 2.0, cfg), 0.8, 1e-15);
  ObjectiveConfig zero;
  zero.lambda1 = zero.lambda2 = 0.0;
  EXPECT_DOUBLE_EQ(refine_objective(0.5, 1.0, 2.0, zero), 0.5);
}

TEST(Combined, IdenticalEmbeddingBaseline) {
  // sigma = 0 at identical embeddings: task + l1 * K(K-1) ln N + l2 * M K ln N
  const ObjectiveConfig cfg;
  const double n = 8, K = 2, M = 3, task = 0.69;
  const double expect = task + 0.1 * K * (K - 1) * std::log(n) + 0.1 * M * K * std::log(n);
  Tape tape;
  const Var z = tape.constant(Tensor({8, 4}, 0.3));
  const std::vector<Var> aug{z, z}, masked{z, z, z};
  const double got = refine_objective(task, loss_aug_intra(aug, cfg.tau).value().item(),
                                      loss_aug_mask(aug, masked, cfg.tau).value().item(), cfg);
  EXPECT_NEAR(got, expect, 1e-9);
}

TEST(Combined, LinearInComponents) {
  RngStream rng(11);
  const ObjectiveConfig cfg;
  for (int i = 0; i < 20; ++i) {
    const double a[3] = {rng.normal(), rng.normal(), rng.normal()};
    const double b[3] = {rng.normal(), rng.normal(), rng.normal()};
    const double x = rng.normal(), y = rng.normal();
    EXPECT_NEAR(divide_objective(x * a[0] + y * b[0], x * a[1] + y * b[1], x * a[2] + y * b[2], cfg),
                x * divide_objective(a[0], a[1], a[2], cfg) + y * divide_objective(b[0], b[1], b[2], cfg), 1e-12);
    EXPECT_NEAR(refine_objective(x * a[0] + y * b[0], x * a[1] + y * b[1], x * a[2] + y * b[2], cfg),
                x * refine_objective(a[0], a[1], a[2], cfg) + y * refine_objective(b[0], b[1], b[2], cfg), 1e-12);
  }
}

TEST(ObjectiveConfig, Defaults) {
  const ObjectiveConfig c;
  EXPECT_EQ(c.lambda_uncor, 1.0);
  EXPECT_EQ(c.lambda_corr, 0.5);
  EXPECT_EQ(c.alpha, 0.5);
  EXPECT_EQ(c.lambda1, 0.1);
  EXPECT_EQ(c.lambda2, 0.1);
  EXPECT_EQ(c.tau, 0.5);
  EXPECT_EQ(c.sigma, 0.1);
  EXPECT_EQ(c.K, 2u);
  ObjectiveConfig bad;
  bad.K = 1;
  EXPECT_THROW(bad.validate(), contract_violation);
}

// ---------------------------------------------------------------------------
// Gradients of every loss, small random instances

TEST(LossGradients, PearsonAndUncor) {
  RngStream rng(12);
  for (int t = 0; t < 20; ++t) {
    const ParamMap p{{"u", random_tensor(rng, {6, 4})}, {"r", random_tensor(rng, {6, 4})}};
    EXPECT_LT(grad_check([](Tape&, const VarMap& v) { return pearson_corr(v.at("u"), v.at("r")); }, p), 1e-4);
    EXPECT_LT(grad_check([](Tape&, const VarMap& v) { return loss_uncor({{v.at("u"), v.at("r"), v.at("u")}}); }, p),
              1e-4);
  }
}

TEST(LossGradients, Corr) {
  RngStream rng(13);
  for (int t = 0; t < 20; ++t) {
    ParamMap p;
    for (const char* n : {"u1", "r1", "s1", "u2", "r2", "s2"}) p.emplace(n, random_tensor(rng, {5, 3}));
    auto f = [](Tape&, const VarMap& v) {
      return loss_corr({{v.at("u1"), v.at("r1"), v.at("s1")}, {v.at("u2"), v.at("r2"), v.at("s2")}}, 0.5);
    };
    EXPECT_LT(grad_check(f, p), 1e-4);
  }
}

TEST(LossGradients, CrossEntropyAndInfoNce) {
  RngStream rng(14);
  for (int t = 0; t < 20; ++t) {
    const ParamMap p{{"a", random_tensor(rng, {6, 4})}, {"b", random_tensor(rng, {6, 4})}};
    const std::vector<int> y{0, 1, 2, 3, 1, 0};
    EXPECT_LT(grad_check([&](Tape&, const VarMap& v) { return cross_entropy(v.at("a"), y); }, p), 1e-4);
    EXPECT_LT(grad_check([](Tape&, const VarMap& v) { return infonce(v.at("a"), v.at("b"), 0.5); }, p), 1e-4);
  }
}

TEST(LossGradients, AugTermsAndCombined) {
  RngStream rng(15);
  for (int t = 0; t < 20; ++t) {
    ParamMap p;
    for (const char* n : {"k1", "k2", "m1", "m2", "m3"}) p.emplace(n, random_tensor(rng, {5, 3}));
    auto intra = [](Tape&, const VarMap& v) {
      const std::vector<Var> z{v.at("k1"), v.at("k2")};
      return loss_aug_intra(z, 0.5);
    };
    auto mask = [](Tape&, const VarMap& v) {
      const std::vector<Var> z{v.at("k1"), v.at("k2")}, m{v.at("m1"), v.at("m2"), v.at("m3")};
      return loss_aug_mask(z, m, 0.5);
    };
    auto refine = [&](Tape& tape, const VarMap& v) {
      const std::vector<int> y{0, 1, 1, 0, 1};
      return refine_objective(cross_entropy(v.at("m1"), y), intra(tape, v), mask(tape, v), ObjectiveConfig{});
    };
    auto divide = [](Tape&, const VarMap& v) {
      const std::vector<int> y{0, 1, 2, 0, 1};
      const DecomposedBatch reps{{v.at("k1"), v.at("k2"), v.at("m1")}, {v.at("m2"), v.at("m3"), v.at("k1")}};
      return divide_objective(cross_entropy(v.at("m1") + v.at("m2"), y), loss_uncor(reps), loss_corr(reps, 0.5),
                              ObjectiveConfig{});
    };
    EXPECT_LT(grad_check(intra, p), 1e-4);
    EXPECT_LT(grad_check(mask, p), 1e-4);
    EXPECT_LT(grad_check(refine, p), 1e-4);
    EXPECT_LT(grad_check(divide, p), 1e-4);
  }
}
