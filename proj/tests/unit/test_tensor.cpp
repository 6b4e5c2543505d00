#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tqnet/gradient_check.hpp"
#include "tqnet/ops.hpp"

using namespace tqnet;

namespace {

DiffTensor<double> random_tensor(std::size_t r, std::size_t c, std::uint64_t seed,
                                 bool grad = true, double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  DiffTensor<double> t(r, c, grad);
  for (double& v : t.values()) v = n(rng);
  return t;
}

// erf by its Maclaurin series in long double; accurate well past |x| = 4
// with enough terms.
double erf_series(double x) {
  long double sum = 0.0L;
  long double term = x;  // x^(2n+1) (-1)^n / n!
  for (int n = 0; n < 200; ++n) {
    sum += term / (2 * n + 1);
    term *= -static_cast<long double>(x) * x / (n + 1);
  }
  return static_cast<double>(2.0L / std::sqrt(3.14159265358979323846264338327950288L) * sum);
}

// A single-op loss: sum of out * weights, with fixed random weights so that
// every output element contributes a distinct gradient.
LossClosure weighted_sum(std::function<DiffTensor<double>(Tape<double>*)> op,
                         std::size_t rows, std::size_t cols, std::uint64_t seed) {
  auto w = random_tensor(rows, cols, seed, false);
  return [op, w](Tape<double>* tape) {
    auto out = op(tape);
    DiffTensor<double> zero(out.rows(), out.cols());
    // mse(out + w, 0) gives a smooth scalar with full-rank dependence.
    return mse_loss(add(out, w, tape), zero, tape);
  };
}

}  // namespace

TEST(DiffTensor, RejectsMismatchedValueCount) {
  EXPECT_THROW(DiffTensor<double>(2, 3, std::vector<double>(5)), DimensionError);
}

TEST(DiffTensor, HandlesShareStorageAndCloneDoesNot) {
  DiffTensor<double> a(2, 2, {1, 2, 3, 4});
  DiffTensor<double> b = a;
  DiffTensor<double> c = a.clone();
  a(0, 0) = 9;
  EXPECT_EQ(b(0, 0), 9);
  EXPECT_EQ(c(0, 0), 1);
  EXPECT_TRUE(a.same_storage(b));
  EXPECT_FALSE(a.same_storage(c));
  EXPECT_EQ(a.shape_string(), "[2x2]");
}

TEST(DiffTensor, ItemRequiresScalar) {
  DiffTensor<double> a(1, 2);
  EXPECT_THROW(a.item(), DimensionError);
}

TEST(Tape, BackwardOnEmptyTapeOrNonScalarThrows) {
  Tape<double> tape;
  DiffTensor<double> s(1, 1, true);
  EXPECT_THROW(tape.backward(s), TapeError);
  auto x = random_tensor(2, 2, 1);
  auto y = scale(x, 2.0, &tape);
  EXPECT_THROW(tape.backward(y), TapeError);
}

TEST(Tape, NothingRecordedWithoutGradInputs) {
  Tape<double> tape;
  auto x = random_tensor(2, 3, 1, false);
  auto y = gelu(x, &tape);
  EXPECT_TRUE(tape.empty());
  EXPECT_FALSE(y.requires_grad());
}

TEST(Ops, LinearApplyMatchesNaiveLoops) {
  auto x = random_tensor(3, 4, 1);
  auto w = random_tensor(4, 5, 2);
  auto b = random_tensor(1, 5, 3);
  auto y = linear_apply(x, w, &b, static_cast<Tape<double>*>(nullptr));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = b(0, j);
      for (std::size_t k = 0; k < 4; ++k) s += x(i, k) * w(k, j);
      EXPECT_NEAR(y(i, j), s, 1e-12);
    }
  }
}

TEST(Ops, ShapeMismatchNamesBothOperands) {
  auto x = random_tensor(3, 4, 1);
  auto w = random_tensor(5, 2, 2);
  try {
    linear_apply(x, w, static_cast<Tape<double>*>(nullptr));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[3x4]"), std::string::npos);
    EXPECT_NE(msg.find("[5x2]"), std::string::npos);
  }
}

TEST(Ops, SoftmaxRowsSumToOneAndSurviveLargeLogits) {
  DiffTensor<double> x(2, 3, {1000.0, 1001.0, 1002.0, -5.0, 0.0, 5.0});
  auto y = softmax_rows(x, static_cast<Tape<double>*>(nullptr));
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_TRUE(std::isfinite(y(r, c)));
      s += y(r, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  const double e0 = std::exp(-2.0), e1 = std::exp(-1.0);
  EXPECT_NEAR(y(0, 0), e0 / (e0 + e1 + 1.0), 1e-12);
}

TEST(Ops, SoftmaxPropagatesNan) {
  DiffTensor<double> x(1, 3, {0.0, std::nan(""), 1.0});
  auto y = softmax_rows(x, static_cast<Tape<double>*>(nullptr));
  EXPECT_TRUE(std::isnan(y(0, 0)));
}

TEST(Ops, GeluMatchesErfSeriesOracle) {
  const std::vector<double> xs{-4.0, -2.5, -1.0, -0.3, 0.0, 0.2, 0.7, 1.5, 3.0, 4.5};
  DiffTensor<double> x(1, xs.size(), xs);
  auto y = gelu(x, static_cast<Tape<double>*>(nullptr));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double expect = 0.5 * xs[i] * (1.0 + erf_series(xs[i] / std::sqrt(2.0)));
    EXPECT_NEAR(y(0, i), expect, 1e-12) << "x=" << xs[i];
  }
  EXPECT_EQ(y(0, 4), 0.0);
}

TEST(Ops, DropoutRejectsBadRate) {
  auto x = random_tensor(2, 2, 1);
  Rng rng(1);
  EXPECT_THROW(dropout(x, 1.0, Mode::kTrain, rng, static_cast<Tape<double>*>(nullptr)),
               ParameterError);
  EXPECT_THROW(dropout(x, -0.1, Mode::kTrain, rng, static_cast<Tape<double>*>(nullptr)),
               ParameterError);
}

TEST(Ops, DropoutIsIdentityInEvalAndAtZeroRate) {
  auto x = random_tensor(3, 3, 1);
  Rng rng(1);
  auto a = dropout(x, 0.5, Mode::kEval, rng, static_cast<Tape<double>*>(nullptr));
  auto b = dropout(x, 0.0, Mode::kTrain, rng, static_cast<Tape<double>*>(nullptr));
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(a.values()[i], x.values()[i]);
    EXPECT_EQ(b.values()[i], x.values()[i]);
  }
}

TEST(Ops, DropoutMonteCarloKeepsMeanAndRate) {
  const std::size_t n = 200000;
  DiffTensor<double> x(1, n, std::vector<double>(n, 1.0));
  Rng rng(42);
  auto y = dropout(x, 0.3, Mode::kTrain, rng, static_cast<Tape<double>*>(nullptr));
  double mean = 0.0;
  std::size_t zeros = 0;
  for (double v : y.values()) {
    mean += v;
    if (v == 0.0) ++zeros;
    else EXPECT_NEAR(v, 1.0 / 0.7, 1e-12);
  }
  mean /= static_cast<double>(n);
  // Binomial standard errors: about 0.0015 for the rate and 0.0023 for the mean.
  EXPECT_NEAR(static_cast<double>(zeros) / n, 0.3, 0.01);
  EXPECT_NEAR(mean, 1.0, 0.015);
}

TEST(Ops, PeriodicSegmentsWrapAroundTheBank) {
  DiffTensor<double> bank(2, 4, {0, 1, 2, 3, 10, 11, 12, 13});
  const std::vector<std::size_t> starts{6};
  auto s = periodic_segments(bank, std::span<const std::size_t>(starts), 6,
                             static_cast<Tape<double>*>(nullptr));
  const std::vector<double> row0{2, 3, 0, 1, 2, 3};
  for (std::size_t j = 0; j < 6; ++j) {
    EXPECT_EQ(s(0, j), row0[j]);
    EXPECT_EQ(s(1, j), row0[j] + 10);
  }
}

TEST(Ops, MseLossValue) {
  DiffTensor<double> p(1, 2, {0.0, 0.0});
  DiffTensor<double> t(1, 2, {1.0, 2.0});
  EXPECT_DOUBLE_EQ(mse_loss(p, t, static_cast<Tape<double>*>(nullptr)).item(), 2.5);
}

// Finite-difference oracle for every primitive's backward closure.
TEST(OpGradients, AllPrimitivesMatchCentralDifferences) {
  auto a = random_tensor(4, 3, 11);
  auto b = random_tensor(3, 5, 12);
  auto bias = random_tensor(1, 5, 13);
  auto sq = random_tensor(4, 4, 14);
  auto c = random_tensor(4, 3, 15);
  auto bank = random_tensor(2, 5, 16);
  auto blk_a = random_tensor(6, 4, 17);
  auto blk_b = random_tensor(6, 4, 18);
  auto blk_p = random_tensor(6, 3, 19);

  struct Case {
    const char* name;
    LossClosure loss;
    std::vector<NamedTensor<double>> params;
  };
  const std::vector<std::size_t> starts{3, 7};
  const std::vector<std::size_t> rows{2, 0, 3};
  const std::vector<double> rs{0.5, 2.0, -1.0, 3.0};
  const std::vector<double> sh{1.0, -2.0, 0.0, 0.5};
  std::vector<Case> cases{
      {"matmul", weighted_sum([&](Tape<double>* t) { return matmul(a, b, t); }, 4, 5, 1),
       {{"a", a}, {"b", b}}},
      {"linear", weighted_sum([&](Tape<double>* t) { return linear_apply(a, b, &bias, t); }, 4, 5, 2),
       {{"a", a}, {"b", b}, {"bias", bias}}},
      {"add", weighted_sum([&](Tape<double>* t) { return add(a, c, t); }, 4, 3, 3),
       {{"a", a}, {"c", c}}},
      {"scale", weighted_sum([&](Tape<double>* t) { return scale(a, -1.7, t); }, 4, 3, 4),
       {{"a", a}}},
      {"softmax", weighted_sum([&](Tape<double>* t) { return softmax_rows(sq, t); }, 4, 4, 5),
       {{"sq", sq}}},
      {"gelu", weighted_sum([&](Tape<double>* t) { return gelu(sq, t); }, 4, 4, 6),
       {{"sq", sq}}},
      {"segments",
       weighted_sum([&](Tape<double>* t) {
         return periodic_segments(bank, std::span<const std::size_t>(starts), 7, t);
       }, 4, 7, 7),
       {{"bank", bank}}},
      {"block_nt",
       weighted_sum([&](Tape<double>* t) { return block_matmul_nt(blk_a, blk_b, 3, t); }, 6, 3, 8),
       {{"a", blk_a}, {"b", blk_b}}},
      {"block_mm",
       weighted_sum([&](Tape<double>* t) { return block_matmul(blk_p, blk_a, 3, t); }, 6, 4, 9),
       {{"p", blk_p}, {"v", blk_a}}},
      {"concat",
       weighted_sum([&](Tape<double>* t) { return concat_cols<double>({a, c}, t); }, 4, 6, 10),
       {{"a", a}, {"c", c}}},
      {"row_affine",
       weighted_sum([&](Tape<double>* t) {
         return row_affine(sq, std::span<const double>(rs), std::span<const double>(sh), t);
       }, 4, 4, 11),
       {{"sq", sq}}},
      {"select_rows",
       weighted_sum([&](Tape<double>* t) {
         return select_rows(sq, std::span<const std::size_t>(rows), t);
       }, 3, 4, 12),
       {{"sq", sq}}},
  };
  for (auto& cs : cases) {
    const auto report = gradient_check(cs.loss, cs.params);
    EXPECT_TRUE(report.passed) << cs.name << " max rel error " << report.max_rel_error;
  }
}

TEST(OpGradients, DropoutGradientUsesTheSameMask) {
  auto x = random_tensor(3, 4, 21);
  const LossClosure loss = [&](Tape<double>* t) {
    Rng rng(5);
    auto y = dropout(x, 0.4, Mode::kTrain, rng, t);
    DiffTensor<double> zero(3, 4);
    return mse_loss(add(y, x, t), zero, t);
  };
  EXPECT_TRUE(gradient_check(loss, {{"x", x}}).passed);
}

TEST(GradientCheck, ReportsFrozenGroupsWithZeroGradient) {
  auto a = random_tensor(2, 2, 1);
  auto frozen = random_tensor(2, 2, 2, false);
  const LossClosure loss = [&](Tape<double>* t) {
    DiffTensor<double> zero(2, 2);
    return mse_loss(matmul(a, frozen, t), zero, t);
  };
  const auto r = gradient_check(loss, {{"a", a}, {"frozen", frozen}});
  ASSERT_EQ(r.groups.size(), 2u);
  EXPECT_TRUE(r.groups[1].frozen);
  EXPECT_EQ(r.groups[1].max_abs_grad, 0.0);
  EXPECT_TRUE(r.passed);
}

TEST(GradientCheck, DetectsABrokenBackward) {
  auto a = random_tensor(2, 2, 1);
  // Loss whose analytic pass records a wrong gradient: value is sum(a^2)/4
  // through mse, but the tape is given an extra scaled copy.
  const LossClosure loss = [&](Tape<double>* t) {
    DiffTensor<double> zero(2, 2);
    auto l = mse_loss(a, zero, t);
    if (t) {
      auto bogus = mse_loss(scale(a, 3.0, t), zero, t);
      t->record([l, bogus]() mutable { bogus.grad()[0] += l.grad()[0]; });
    }
    return l;
  };
  EXPECT_FALSE(gradient_check(loss, {{"a", a}}).passed);
}

TEST(GradientCheck, RejectsNondeterministicClosure) {
  auto a = random_tensor(2, 2, 1);
  int calls = 0;
  const LossClosure loss = [&](Tape<double>* t) {
    DiffTensor<double> zero(2, 2);
    return mse_loss(scale(a, 1.0 + 0.1 * ++calls, t), zero, t);
  };
  EXPECT_THROW(gradient_check(loss, {{"a", a}}), HarnessError);
}
