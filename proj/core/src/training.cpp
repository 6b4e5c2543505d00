#include "tqnet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "tqnet/ops.hpp"

namespace tqnet {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<std::size_t> stacked_rows(std::size_t batch, std::size_t channels,
                                      std::span<const std::size_t> targets) {
  std::vector<std::size_t> rows;
  rows.reserve(batch * targets.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c : targets) rows.push_back(b * channels + c);
  }
  return rows;
}

void check_targets(std::span<const std::size_t> targets, std::size_t channels) {
  for (std::size_t c : targets) {
    if (c >= channels) {
      throw ConfigError("target channel " + std::to_string(c) + " out of range for " +
                        std::to_string(channels) + " channels");
    }
  }
}

template <typename T>
struct Batch {
  DiffTensor<T> x;
  DiffTensor<T> y;
  std::vector<std::size_t> starts;
};

template <typename T>
Batch<T> load_batch(const WindowSet& windows, std::span<const std::size_t> indices) {
  const std::size_t C = windows.channels();
  const std::size_t n = indices.size();
  std::vector<T> xs(n * C * windows.lookback());
  std::vector<T> ys(n * C * windows.horizon());
  windows.gather<T>(indices, xs, ys);
  Batch<T> b{DiffTensor<T>(n * C, windows.lookback(), std::move(xs)),
             DiffTensor<T>(n * C, windows.horizon(), std::move(ys)), {}};
  b.starts.reserve(n);
  for (std::size_t i : indices) b.starts.push_back(windows.start(i));
  return b;
}

}  // namespace

template <typename T>
LossMetrics<T> loss_and_metrics(const DiffTensor<T>& pred, const DiffTensor<T>& target,
                                Tape<T>* tape) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw DimensionError("loss_and_metrics: prediction " + pred.shape_string() +
                         " does not match target " + target.shape_string());
  }
  LossMetrics<T> out;
  out.loss = mse_loss(pred, target, tape);
  double sq = 0.0;
  double ab = 0.0;
  const auto p = pred.values();
  const auto t = target.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
    sq += d * d;
    ab += std::abs(d);
  }
  const double n = static_cast<double>(std::max<std::size_t>(p.size(), 1));
  out.mse = sq / n;
  out.mae = ab / n;
  return out;
}

template <typename T>
OptimState<T> OptimState<T>::create(std::span<const NamedTensor<T>> params, double lr) {
  OptimState s;
  s.lr = lr;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.size(), T(0));
    s.v.emplace_back(p.tensor.size(), T(0));
  }
  return s;
}

template <typename T>
void adam_step(std::span<NamedTensor<T>> params, OptimState<T>& state) {
  if (params.size() != state.m.size()) {
    throw DimensionError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  ++state.step;
  const double step = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, step);
  const double c2 = 1.0 - std::pow(state.beta2, step);
  for (std::size_t k = 0; k < params.size(); ++k) {
    DiffTensor<T>& p = params[k].tensor;
    if (!p.requires_grad() || !p.has_grad()) continue;
    auto values = p.values();
    auto grad = p.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = state.lr * (mi / c1) / (std::sqrt(vi / c2) + state.eps);
      values[i] = static_cast<T>(values[i] - update);
    }
    p.zero_grad();
  }
}

void TrainPlan::validate() const {
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (patience == 0 || patience > max_epochs) {
    throw ConfigError("patience must lie in [1, max_epochs]");
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (batch_size == 0 || eval_batch_size == 0) throw ConfigError("batch sizes must be positive");
}

bool EarlyStopping::observe(double value) {
  ++epochs_;
  if (best_epoch_ == 0 || value < best_) {
    best_ = value;
    best_epoch_ = epochs_;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

template <typename T>
EvalMetrics evaluate(const TQNet<T>& model, const WindowSet& windows, std::size_t batch_size,
                     std::span<const std::size_t> target_channels) {
  if (windows.empty()) throw ConfigError("evaluate: the window set is empty");
  if (batch_size == 0) throw ConfigError("evaluate: batch size must be positive");
  const std::size_t C = windows.channels();
  check_targets(target_channels, C);
  std::vector<std::size_t> all(C);
  std::iota(all.begin(), all.end(), 0);
  const auto targets = target_channels.empty() ? std::span<const std::size_t>(all) : target_channels;

  Rng unused(0);
  double sq = 0.0;
  double ab = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
    const std::size_t end = std::min(windows.size(), begin + batch_size);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Batch<T> batch = load_batch<T>(windows, idx);
    const DiffTensor<T> pred = model.forward(batch.x, batch.starts, Mode::kEval, unused, nullptr);
    const std::size_t H = windows.horizon();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      for (std::size_t c : targets) {
        const std::size_t r = b * C + c;
        for (std::size_t j = 0; j < H; ++j) {
          const double d = static_cast<double>(pred(r, j)) - static_cast<double>(batch.y(r, j));
          sq += d * d;
          ab += std::abs(d);
        }
      }
    }
  }
  const double n = static_cast<double>(windows.size() * targets.size() * windows.horizon());
  return {sq / n, ab / n, windows.size()};
}

template <typename T>
FitResult fit(TQNet<T>& model, const WindowSet& train, const WindowSet& val,
              const TrainPlan& plan, const FitOptions& options) {
  plan.validate();
  if (train.empty()) throw ConfigError("fit: the training split has no windows");
  if (val.empty()) throw ConfigError("fit: the validation split has no windows");
  const std::size_t C = train.channels();
  if (C != model.config().channels) {
    throw DimensionError("fit: data has " + std::to_string(C) + " channels, model expects " +
                         std::to_string(model.config().channels));
  }
  check_targets(options.target_channels, C);

  auto params = model.parameters();
  OptimState<T> opt = OptimState<T>::create(params, plan.lr);
  model.zero_grad();

  Rng shuffle_rng(plan.seed);
  Rng dropout_rng(plan.seed ^ 0xD1B54A32D192ED03ULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  EarlyStopping stopper(plan.patience);
  std::vector<std::vector<T>> best(params.size());
  auto snapshot = [&] {
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto v = params[k].tensor.values();
      best[k].assign(v.begin(), v.end());
    }
  };

  FitResult result;
  Tape<T> tape;
  for (std::size_t epoch = 1; epoch <= plan.max_epochs; ++epoch) {
    const auto t0 = Clock::now();
    if (plan.shuffle) std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += plan.batch_size) {
      const std::size_t end = std::min(order.size(), begin + plan.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Batch<T> batch = load_batch<T>(train, idx);
      tape.clear();
      DiffTensor<T> pred = model.forward(batch.x, batch.starts, Mode::kTrain, dropout_rng, &tape);
      DiffTensor<T> target = batch.y;
      if (!options.target_channels.empty()) {
        const auto rows = stacked_rows(idx.size(), C, options.target_channels);
        pred = select_rows(pred, std::span<const std::size_t>(rows), &tape);
        target = select_rows(target, std::span<const std::size_t>(rows), static_cast<Tape<T>*>(nullptr));
      }
      DiffTensor<T> loss = mse_loss(pred, target, &tape);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batches + 1));
      }
      tape.backward(loss);
      adam_step(std::span<NamedTensor<T>>(params), opt);
      loss_sum += value;
      ++batches;
    }
    tape.clear();

    const EvalMetrics v = evaluate(model, val, plan.eval_batch_size, options.target_channels);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(batches), v.mse, v.mae, seconds_since(t0)};
    result.history.push_back(rec);
    if (stopper.observe(v.mse)) snapshot();
    if (options.on_epoch) options.on_epoch(rec);
    if (stopper.should_stop()) {
      result.stopped_early = epoch < plan.max_epochs;
      break;
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::copy(best[k].begin(), best[k].end(), params[k].tensor.values().begin());
  }
  result.best_epoch = stopper.best_epoch();
  result.best_val_mse = stopper.best_value();
  return result;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["dataset"] = dataset;
  j["L"] = lookback;
  j["H"] = horizon;
  j["W"] = period;
  j["variant"] = variant;
  j["seed"] = seed;
  j["mse"] = mse;
  j["mae"] = mae;
  j["best_epoch"] = best_epoch;
  j["wall_time_s"] = wall_time_s;
  j["config_hash"] = config_hash;
  return j.dump();
}

MetricsReport MetricsReport::from_json(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
    MetricsReport r;
    r.dataset = j.at("dataset").get<std::string>();
    r.lookback = j.at("L").get<std::size_t>();
    r.horizon = j.at("H").get<std::size_t>();
    r.period = j.at("W").get<std::size_t>();
    r.variant = j.at("variant").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.mse = j.at("mse").get<double>();
    r.mae = j.at("mae").get<double>();
    r.best_epoch = j.at("best_epoch").get<std::size_t>();
    r.wall_time_s = j.at("wall_time_s").get<double>();
    r.config_hash = j.value("config_hash", std::string());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad metrics record: ") + e.what());
  }
}

void append_jsonl(const std::filesystem::path& path, const MetricsReport& report) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw ParseError("cannot append to '" + path.string() + "'");
  out << report.to_json() << '\n';
}

std::vector<MetricsReport> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::vector<MetricsReport> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(MetricsReport::from_json(line));
  }
  return out;
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

ExperimentResult run_experiment(const SeriesTable& table, const ExperimentSpec& spec,
                                const std::function<void(const EpochRecord&)>& on_epoch) {
  const auto t0 = Clock::now();
  ModelConfig cfg = spec.model;
  cfg.channels = table.channels();
  cfg.validate();
  spec.variant.validate();

  ExperimentResult r;
  r.data = split_and_scale(table, spec.split, cfg.lookback, cfg.horizon);
  const WindowSet train = make_windows(r.data, SplitKind::kTrain, cfg.lookback, cfg.horizon, cfg.period);
  const WindowSet val = make_windows(r.data, SplitKind::kVal, cfg.lookback, cfg.horizon, cfg.period);
  const WindowSet test = make_windows(r.data, SplitKind::kTest, cfg.lookback, cfg.horizon, cfg.period);

  r.model = std::make_shared<TQNet<float>>(cfg, spec.variant);
  FitOptions opts{spec.target_channels, on_epoch};
  r.fit = fit(*r.model, train, val, spec.plan, opts);
  r.test = evaluate(*r.model, test, spec.plan.eval_batch_size, spec.target_channels);
  r.wall_time_s = seconds_since(t0);
  return r;
}

#define TQNET_INSTANTIATE(T)                                                                  \
  template LossMetrics<T> loss_and_metrics(const DiffTensor<T>&, const DiffTensor<T>&,      \
                                           Tape<T>*);                                         \
  template struct OptimState<T>;                                                              \
  template void adam_step(std::span<NamedTensor<T>>, OptimState<T>&);                        \
  template EvalMetrics evaluate(const TQNet<T>&, const WindowSet&, std::size_t,              \
                                std::span<const std::size_t>);                                \
  template FitResult fit(TQNet<T>&, const WindowSet&, const WindowSet&, const TrainPlan&,    \
                         const FitOptions&);

TQNET_INSTANTIATE(float)
TQNET_INSTANTIATE(double)

}  // namespace tqnet
