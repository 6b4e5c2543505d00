#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "tqnet/model.hpp"
#include "tqnet/model_check.hpp"

using namespace tqnet;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.channels = 3;
  c.lookback = 12;
  c.horizon = 5;
  c.period = 6;
  c.d_model = 8;
  c.heads = 3;
  c.attn_dropout = 0.0;
  c.out_dropout = 0.0;
  return c;
}

DiffTensor<double> random_input(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  DiffTensor<double> x(rows, cols);
  for (double& v : x.values()) v = n(rng);
  return x;
}

std::set<std::string> names_of(const TQNet<double>& m) {
  std::set<std::string> out;
  for (const auto& p : m.parameters()) out.insert(p.name);
  return out;
}

}  // namespace

TEST(ModelConfig, RejectsHeadsThatDoNotDivideLookback) {
  ModelConfig c = small_config();
  c.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c.heads = 3;
  c.attn_dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(VariantSpec, NamesRoundTripAndInconsistentSpecsAreRejected) {
  for (const char* n : {"default", "self_attention", "global_only", "channel_identifier", "pure_mlp"}) {
    EXPECT_EQ(VariantSpec::from_name(n).name(), n);
  }
  EXPECT_THROW(VariantSpec::from_name("attention_only"), ConfigError);
  VariantSpec bad{Source::kTQ, Source::kRaw, true, false};
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(TQNet<double>(small_config(), bad), ConfigError);
}

TEST(TQBank, StartsAtZero) {
  TQBank<double> bank(3, 24);
  for (double v : bank.theta().values()) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(bank.theta().requires_grad());
}

TEST(TQBank, SegmentIndicesFollowTheCycleFormula) {
  const auto idx = TQBank<double>::segment_indices(50, 7, 24);  // 50 mod 24 = 2
  const std::vector<std::size_t> expect{2, 3, 4, 5, 6, 7, 8};
  EXPECT_EQ(idx, expect);
  const auto wrap = TQBank<double>::segment_indices(22, 5, 24);
  const std::vector<std::size_t> wrapped{22, 23, 0, 1, 2};
  EXPECT_EQ(wrap, wrapped);
  const auto w1 = TQBank<double>::segment_indices(17, 4, 1);
  EXPECT_EQ(w1, std::vector<std::size_t>(4, 0));
}

TEST(TQBank, SegmentIsPeriodicInTheStartIndex) {
  const std::size_t C = 4, W = 24, L = 96;
  TQBank<double> bank(C, W);
  Rng rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& v : bank.theta().values()) v = n(rng);
  std::uniform_int_distribution<std::size_t> t_dist(0, 100000);
  std::uniform_int_distribution<std::size_t> i_dist(1, 500);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t t = t_dist(rng);
    const std::size_t i = i_dist(rng);
    const auto a = bank.segment(t, L);
    const auto b = bank.segment(t + i * W, L);
    ASSERT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
  }
}

TEST(InstanceNorm, RoundTripsIncludingConstantChannels) {
  DiffTensor<double> x(3, 6, {1, 2, 3, 4, 5, 6,        //
                              7, 7, 7, 7, 7, 7,        //
                              -1e3, 5e2, 0, 1, 2, 3});
  const auto norm = instance_norm(x, 1e-5);
  const auto back = instance_denorm(norm.normalized, std::span<const double>(norm.mean),
                                    std::span<const double>(norm.var), 1e-5);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back.values()[i], x.values()[i], 1e-9);
  for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(norm.normalized(1, j), 0.0);
  double m = 0.0;
  for (std::size_t j = 0; j < 6; ++j) m += norm.normalized(0, j);
  EXPECT_NEAR(m, 0.0, 1e-12);
}

TEST(TQNet, ForwardShapeAndDimensionCheck) {
  TQNet<double> model(small_config());
  Rng rng(1);
  const auto x = random_input(2 * 3, 12, 4);
  const std::vector<std::size_t> starts{0, 7};
  const auto y = model.forward(x, starts, Mode::kEval, rng, nullptr);
  EXPECT_EQ(y.rows(), 6u);
  EXPECT_EQ(y.cols(), 5u);
  const auto bad = random_input(5, 12, 4);
  EXPECT_THROW(model.forward(bad, starts, Mode::kEval, rng, nullptr), DimensionError);
}

TEST(TQNet, ZeroBankGivesIdenticalPreResidualAttentionRows) {
  TQNet<double> model(small_config());
  Rng rng(1);
  const auto x = random_input(3, 12, 5);
  const auto q = model.tq_bank().segment(13, 12);
  const auto a = model.attention(x, q, x, Mode::kEval, rng, nullptr);
  for (std::size_t c = 1; c < 3; ++c) {
    for (std::size_t j = 0; j < 12; ++j) EXPECT_NEAR(a(c, j), a(0, j), 1e-12);
  }
}

TEST(TQNet, ParameterListsFollowTheVariant) {
  const auto full = names_of(TQNet<double>(small_config(), VariantSpec::tqnet()));
  EXPECT_TRUE(full.count("tq.theta"));
  EXPECT_TRUE(full.count("attn.query.0"));
  EXPECT_TRUE(full.count("attn.out"));

  const auto mlp = names_of(TQNet<double>(small_config(), VariantSpec::pure_mlp()));
  for (const auto& n : mlp) {
    EXPECT_EQ(n.rfind("attn.", 0), std::string::npos) << n;
    EXPECT_NE(n, "tq.theta");
  }
  EXPECT_TRUE(mlp.count("proj_in.weight"));

  const auto ident = names_of(TQNet<double>(small_config(), VariantSpec::channel_identifier()));
  EXPECT_TRUE(ident.count("tq.theta"));
  EXPECT_FALSE(ident.count("attn.out"));

  const auto sa = names_of(TQNet<double>(small_config(), VariantSpec::self_attention()));
  EXPECT_FALSE(sa.count("tq.theta"));
  EXPECT_TRUE(sa.count("attn.key.2"));
}

TEST(TQNet, InitializationIsSeededAndSharedAcrossVariants) {
  TQNet<double> a(small_config());
  TQNet<double> b(small_config(), VariantSpec::pure_mlp());
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  const auto find = [](const auto& ps, const std::string& n) {
    return std::find_if(ps.begin(), ps.end(), [&](const auto& p) { return p.name == n; })->tensor;
  };
  const auto wa = find(pa, "mlp.fc1.weight");
  const auto wb = find(pb, "mlp.fc1.weight");
  EXPECT_TRUE(std::equal(wa.values().begin(), wa.values().end(), wb.values().begin()));
  const double bound = 1.0 / std::sqrt(8.0);
  for (double v : wa.values()) EXPECT_LE(std::abs(v), bound);
}

TEST(TQNet, RawQueriesLeaveAnAttachedBankUntouched) {
  // Both attention sources raw while the bank exists: it gets no gradient.
  VariantSpec spec{Source::kRaw, Source::kRaw, true, true};
  TQNet<double> model(small_config(), spec);
  Rng rng(1);
  const auto x = random_input(3, 12, 6);
  Tape<double> tape;
  auto y = model.forward(x, std::size_t{4}, Mode::kTrain, rng, &tape);
  DiffTensor<double> zero(y.rows(), y.cols());
  auto loss = mse_loss(y, zero, &tape);
  tape.backward(loss);
  const auto& theta = model.tq_bank().theta();
  for (double g : std::as_const(theta).grad()) EXPECT_EQ(g, 0.0);
}

TEST(TQNet, EvalModeIsDeterministicAndDropoutOnlyActsInTraining) {
  ModelConfig c = small_config();
  c.attn_dropout = 0.5;
  c.out_dropout = 0.5;
  TQNet<double> model(c);
  const auto x = random_input(3, 12, 7);
  Rng r1(1), r2(2);
  const auto e1 = model.forward(x, std::size_t{0}, Mode::kEval, r1, nullptr);
  const auto e2 = model.forward(x, std::size_t{0}, Mode::kEval, r2, nullptr);
  EXPECT_TRUE(std::equal(e1.values().begin(), e1.values().end(), e2.values().begin()));
  const auto t1 = model.forward(x, std::size_t{0}, Mode::kTrain, r1, nullptr);
  EXPECT_FALSE(std::equal(e1.values().begin(), e1.values().end(), t1.values().begin()));
}

TEST(TQNet, NonFiniteInputInEvalNamesTheLayer) {
  TQNet<double> model(small_config());
  auto x = random_input(3, 12, 8);
  x(1, 3) = std::numeric_limits<double>::infinity();
  Rng rng(1);
  try {
    model.forward(x, std::size_t{0}, Mode::kEval, rng, nullptr);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer"), std::string::npos);
  }
}

TEST(TQNet, BatchedForwardEqualsPerSampleForward) {
  TQNet<double> model(small_config());
  Rng rng(1);
  const auto x = random_input(6, 12, 9);
  const std::vector<std::size_t> starts{5, 19};
  const auto both = model.forward(x, starts, Mode::kEval, rng, nullptr);
  for (std::size_t b = 0; b < 2; ++b) {
    DiffTensor<double> xb(3, 12);
    std::copy_n(x.values().begin() + b * 36, 36, xb.values().begin());
    const auto yb = model.forward(xb, starts[b], Mode::kEval, rng, nullptr);
    for (std::size_t i = 0; i < yb.size(); ++i) {
      EXPECT_NEAR(yb.values()[i], both.values()[b * 15 + i], 1e-12);
    }
  }
}

TEST(ModelGradients, TinyConfigPassesForEveryVariant) {
  for (const auto& v : {VariantSpec::tqnet(), VariantSpec::self_attention(),
                        VariantSpec::global_only(), VariantSpec::channel_identifier(),
                        VariantSpec::pure_mlp()}) {
    const auto r = model_gradient_check(tiny_gradcheck_config(), v);
    EXPECT_TRUE(r.passed) << v.name() << " " << r.max_rel_error;
  }
}

TEST(ModelGradients, PassesWithDropoutAndHeadScaling) {
  ModelConfig c = tiny_gradcheck_config();
  c.attn_dropout = 0.3;
  c.out_dropout = 0.2;
  c.scale_by_head_dim = true;
  const auto r = model_gradient_check(c);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}
