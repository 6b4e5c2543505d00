#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "tqnet/checkpoint.hpp"
#include "tqnet/training.hpp"

using namespace tqnet;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "tqnet_unit";
  fs::create_directories(dir);
  return dir / name;
}

ModelConfig synth_model(std::size_t channels) {
  ModelConfig c;
  c.channels = channels;
  c.lookback = 8;
  c.horizon = 8;
  c.period = 24;
  c.d_model = 16;
  c.heads = 2;
  c.out_dropout = 0.0;
  return c;
}

struct SynthSplits {
  PreparedData data;
  WindowSet train, val, test;
};

SynthSplits synth_splits(std::size_t timesteps = 1200) {
  SynthSpec s;
  s.timesteps = timesteps;
  const auto table = generate_synthetic(s).table;
  SynthSplits out;
  out.data = split_and_scale(table, SplitSpec{}, 8, 8);
  out.train = make_windows(out.data, SplitKind::kTrain, 8, 8, 24);
  out.val = make_windows(out.data, SplitKind::kVal, 8, 8, 24);
  out.test = make_windows(out.data, SplitKind::kTest, 8, 8, 24);
  return out;
}

// Pure-MLP model whose weights copy the last input step across the horizon.
TQNet<double> persistence_model(std::size_t channels, std::size_t L, std::size_t H) {
  ModelConfig c;
  c.channels = channels;
  c.lookback = L;
  c.horizon = H;
  c.d_model = 2;
  c.heads = 1;
  c.attn_dropout = 0.0;
  c.out_dropout = 0.0;
  TQNet<double> m(c, VariantSpec::pure_mlp());
  for (auto& p : m.parameters()) {
    auto v = p.tensor.values();
    std::fill(v.begin(), v.end(), 0.0);
    if (p.name == "proj_in.weight") p.tensor(L - 1, 0) = 1.0;
    if (p.name == "proj_out.weight") {
      for (std::size_t j = 0; j < H; ++j) p.tensor(0, j) = 1.0;
    }
  }
  return m;
}

}  // namespace

TEST(LossAndMetrics, HandComputedValues) {
  DiffTensor<double> p(1, 2, {0.0, 0.0});
  DiffTensor<double> t(1, 2, {1.0, 2.0});
  const auto r = loss_and_metrics(p, t, static_cast<Tape<double>*>(nullptr));
  EXPECT_DOUBLE_EQ(r.mse, 2.5);
  EXPECT_DOUBLE_EQ(r.mae, 1.5);
  EXPECT_DOUBLE_EQ(r.loss.item(), 2.5);
  const auto z = loss_and_metrics(t, t, static_cast<Tape<double>*>(nullptr));
  EXPECT_EQ(z.mse, 0.0);
  EXPECT_EQ(z.mae, 0.0);
  DiffTensor<double> q(2, 1);
  EXPECT_THROW(loss_and_metrics(p, q, static_cast<Tape<double>*>(nullptr)), DimensionError);
}

TEST(Adam, ZeroGradientIsAFixedPoint) {
  std::vector<NamedTensor<double>> params{{"w", DiffTensor<double>(2, 2, {1, 2, 3, 4}, true)}};
  params[0].tensor.grad();
  auto state = OptimState<double>::create(params, 0.1);
  for (int i = 0; i < 5; ++i) adam_step(std::span<NamedTensor<double>>(params), state);
  EXPECT_EQ(params[0].tensor(1, 1), 4.0);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstTheGradientSign) {
  std::vector<NamedTensor<double>> params{{"w", DiffTensor<double>(1, 2, {0.5, -0.5}, true)}};
  params[0].tensor.grad()[0] = 3.7;
  params[0].tensor.grad()[1] = -0.02;
  auto state = OptimState<double>::create(params, 1e-3);
  adam_step(std::span<NamedTensor<double>>(params), state);
  EXPECT_NEAR(params[0].tensor(0, 0), 0.5 - 1e-3, 1e-6);
  EXPECT_NEAR(params[0].tensor(0, 1), -0.5 + 1e-3, 1e-6);
  for (double g : std::as_const(params[0].tensor).grad()) EXPECT_EQ(g, 0.0);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, QuadraticLossDecreasesMonotonically) {
  DiffTensor<double> w(1, 3, {2.0, -1.0, 0.5}, true);
  std::vector<NamedTensor<double>> params{{"w", w}};
  auto state = OptimState<double>::create(params, 0.05);
  const DiffTensor<double> zero(1, 3);
  double prev = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 10; ++i) {
    Tape<double> tape;
    auto loss = mse_loss(w, zero, &tape);
    EXPECT_LT(loss.item(), prev);
    prev = loss.item();
    tape.backward(loss);
    adam_step(std::span<NamedTensor<double>>(params), state);
  }
}

TEST(Adam, SkipsFrozenParameters) {
  std::vector<NamedTensor<double>> params{{"f", DiffTensor<double>(1, 1, {1.0}, false)}};
  auto state = OptimState<double>::create(params, 0.1);
  adam_step(std::span<NamedTensor<double>>(params), state);
  EXPECT_EQ(params[0].tensor.item(), 1.0);
}

TEST(EarlyStopping, CountingRule) {
  EarlyStopping s(5);
  const std::vector<double> losses{5, 4, 3, 3.1, 3.2, 3.3, 3.4, 3.5, 2.0};
  std::size_t stopped_after = 0;
  for (double v : losses) {
    s.observe(v);
    if (s.should_stop()) {
      stopped_after = s.epochs_seen();
      break;
    }
  }
  EXPECT_EQ(stopped_after, 8u);
  EXPECT_EQ(s.best_epoch(), 3u);
  EXPECT_EQ(s.best_value(), 3.0);
}

TEST(EarlyStopping, TiesDoNotCountAsImprovement) {
  EarlyStopping s(2);
  EXPECT_TRUE(s.observe(1.0));
  EXPECT_FALSE(s.observe(1.0));
  EXPECT_FALSE(s.observe(1.0));
  EXPECT_TRUE(s.should_stop());
  EXPECT_EQ(s.best_epoch(), 1u);
}

TEST(TrainPlan, PatienceMustNotExceedEpochs) {
  TrainPlan p;
  p.max_epochs = 3;
  p.patience = 5;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Evaluate, PersistenceModelMatchesBruteForce) {
  const auto sp = synth_splits();
  const auto model = persistence_model(8, 8, 8);
  const auto m = evaluate(model, sp.test, 37);
  double sq = 0.0, ab = 0.0;
  for (std::size_t i = 0; i < sp.test.size(); ++i) {
    const auto s = sp.test.sample(i);
    for (std::size_t c = 0; c < 8; ++c) {
      for (std::size_t j = 0; j < 8; ++j) {
        const double d = s.x(c, 7) - s.y(c, j);
        sq += d * d;
        ab += std::abs(d);
      }
    }
  }
  const double n = static_cast<double>(sp.test.size() * 64);
  EXPECT_NEAR(m.mse, sq / n, 1e-9);
  EXPECT_NEAR(m.mae, ab / n, 1e-9);
  EXPECT_EQ(m.windows, sp.test.size());
}

TEST(Evaluate, DuplicatedWindowsLeaveMetricsUnchanged) {
  const auto sp = synth_splits();
  const auto model = persistence_model(8, 8, 8);
  const auto once = evaluate(model, sp.test, sp.test.size());

  // Stack every test window twice and score the doubled batch directly.
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < sp.test.size(); ++i) idx.insert(idx.end(), {i, i});
  std::vector<double> xs(idx.size() * 64), ys(idx.size() * 64);
  sp.test.gather<double>(idx, xs, ys);
  std::vector<std::size_t> starts;
  for (std::size_t i : idx) starts.push_back(sp.test.start(i));
  Rng rng(0);
  const auto pred = model.forward(DiffTensor<double>(idx.size() * 8, 8, xs), starts, Mode::kEval,
                                  rng, nullptr);
  const auto twice = loss_and_metrics(pred, DiffTensor<double>(idx.size() * 8, 8, ys),
                                      static_cast<Tape<double>*>(nullptr));
  EXPECT_NEAR(once.mse, twice.mse, 1e-12);
  EXPECT_NEAR(once.mae, twice.mae, 1e-12);
}

TEST(Evaluate, EmptySetIsRejected) {
  const auto model = persistence_model(8, 8, 8);
  EXPECT_THROW(evaluate(model, WindowSet()), ConfigError);
}

TEST(Fit, BeatsTheZeroPredictorAndIsDeterministic) {
  const auto sp = synth_splits();
  TrainPlan plan;
  plan.max_epochs = 4;
  plan.patience = 2;
  plan.lr = 3e-3;
  TQNet<float> a(synth_model(8));
  TQNet<float> b(synth_model(8));
  const auto ra = fit(a, sp.train, sp.val, plan);
  const auto rb = fit(b, sp.train, sp.val, plan);
  ASSERT_EQ(ra.history.size(), rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    EXPECT_EQ(ra.history[i].val_mse, rb.history[i].val_mse);
    EXPECT_EQ(ra.history[i].train_loss, rb.history[i].train_loss);
  }
  // Zero predictor on standardized data: mean squared target value.
  double zero = 0.0;
  for (std::size_t i = 0; i < sp.val.size(); ++i) {
    const auto s = sp.val.sample(i);
    for (double v : s.y.data) zero += v * v;
  }
  zero /= static_cast<double>(sp.val.size() * 64);
  EXPECT_LT(ra.best_val_mse, zero);
}

TEST(Fit, RestoresTheBestValidationParameters) {
  const auto sp = synth_splits();
  TrainPlan plan;
  plan.max_epochs = 5;
  plan.patience = 5;
  plan.lr = 3e-2;  // large enough that later epochs can be worse
  TQNet<float> m(synth_model(8));
  const auto r = fit(m, sp.train, sp.val, plan);
  const auto v = evaluate(m, sp.val, plan.eval_batch_size);
  EXPECT_EQ(v.mse, r.best_val_mse);
  for (const auto& e : r.history) EXPECT_GE(e.val_mse, r.best_val_mse);
}

TEST(Fit, TargetChannelsRestrictTheLoss) {
  const auto sp = synth_splits();
  TrainPlan plan;
  plan.max_epochs = 1;
  plan.patience = 1;
  TQNet<float> m(synth_model(8));
  FitOptions opts;
  opts.target_channels = {3};
  const auto r = fit(m, sp.train, sp.val, plan, opts);
  const std::vector<std::size_t> t{3};
  EXPECT_EQ(evaluate(m, sp.val, plan.eval_batch_size, t).mse, r.best_val_mse);
  opts.target_channels = {8};
  EXPECT_THROW(fit(m, sp.train, sp.val, plan, opts), ConfigError);
}

TEST(Fit, NonFiniteLossReportsEpochAndBatch) {
  auto sp = synth_splits();
  auto bad = std::make_shared<RealMatrix>(*sp.data.scaled);
  (*bad)(3, 0) = std::nan("");
  const WindowSet train(bad, sp.data.train, 8, 8, 24);
  TrainPlan plan;
  plan.max_epochs = 1;
  plan.patience = 1;
  plan.shuffle = false;
  TQNet<float> m(synth_model(8));
  try {
    fit(m, train, sp.val, plan);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("batch 1"), std::string::npos) << msg;
  }
}

TEST(Checkpoint, RoundTripReproducesEvaluationBitExactly) {
  const auto sp = synth_splits();
  TrainPlan plan;
  plan.max_epochs = 2;
  plan.patience = 2;
  TQNet<float> m(synth_model(8));
  fit(m, sp.train, sp.val, plan);
  const auto before = evaluate(m, sp.test);
  const auto path = temp_path("model.tqnc");
  save_checkpoint(m, path);
  const auto loaded = load_checkpoint<float>(path);
  EXPECT_EQ(loaded.variant(), m.variant());
  EXPECT_EQ(loaded.config().d_model, 16u);
  const auto after = evaluate(loaded, sp.test);
  EXPECT_EQ(before.mse, after.mse);
  EXPECT_EQ(before.mae, after.mae);
}

TEST(Checkpoint, WrongChannelCountNamesTheParameter) {
  TQNet<float> m(synth_model(8));
  const auto path = temp_path("c8.tqnc");
  save_checkpoint(m, path);
  TQNet<float> other(synth_model(5));
  try {
    load_parameters(other, path);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("tq.theta"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, TruncatedOrCorruptFilesFailIntegrity) {
  TQNet<float> m(synth_model(4));
  const auto path = temp_path("full.tqnc");
  save_checkpoint(m, path);
  const auto size = fs::file_size(path);

  const auto cut = temp_path("cut.tqnc");
  fs::copy_file(path, cut, fs::copy_options::overwrite_existing);
  fs::resize_file(cut, size / 2);
  EXPECT_THROW(load_checkpoint<float>(cut), CheckpointError);

  const auto flipped = temp_path("flip.tqnc");
  fs::copy_file(path, flipped, fs::copy_options::overwrite_existing);
  {
    std::fstream f(flipped, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(size / 2));
    f.put('\x7f');
  }
  EXPECT_THROW(load_checkpoint<float>(flipped), CheckpointError);

  const auto junk = temp_path("junk.tqnc");
  std::ofstream(junk) << "not a checkpoint";
  EXPECT_THROW(load_checkpoint<float>(junk), CheckpointError);
}

TEST(MetricsReport, JsonRoundTrip) {
  MetricsReport r;
  r.dataset = "ETTh1";
  r.lookback = 96;
  r.horizon = 96;
  r.period = 24;
  r.variant = "default";
  r.seed = 2024;
  r.mse = 0.1 + 0.2;
  r.mae = 1.0 / 3.0;
  r.best_epoch = 4;
  r.wall_time_s = 12.5;
  r.config_hash = "abc";
  const std::string line = r.to_json();
  EXPECT_EQ(line.find('\n'), std::string::npos);
  EXPECT_EQ(line.rfind("{\"dataset\":\"ETTh1\",\"L\":96,\"H\":96,\"W\":24", 0), 0u);
  const auto back = MetricsReport::from_json(line);
  EXPECT_EQ(back.mse, r.mse);
  EXPECT_EQ(back.mae, r.mae);
  EXPECT_EQ(back.best_epoch, 4u);
  EXPECT_THROW(MetricsReport::from_json("{\"dataset\":1}"), ParseError);
}

TEST(Fnv1a, KnownVector) {
  const std::string s = "a";
  EXPECT_EQ(fnv1a64({reinterpret_cast<const unsigned char*>(s.data()), s.size()}),
            0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}
