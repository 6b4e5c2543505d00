#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tqnet/data.hpp"
#include "tqnet/model.hpp"
#include "tqnet/tensor.hpp"

namespace tqnet {

template <typename T>
struct LossMetrics {
  DiffTensor<T> loss;  // 1 x 1 mean squared error, differentiable in pred
  double mse = 0.0;
  double mae = 0.0;
};

// Mean squared and mean absolute error over every entry. `target` is a
// constant.
template <typename T>
LossMetrics<T> loss_and_metrics(const DiffTensor<T>& pred,
                                const DiffTensor<T>& target, Tape<T>* tape);

template <typename T>
struct OptimState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimState create(std::span<const NamedTensor<T>> params, double lr);
};

// One bias-corrected Adam update over every parameter that requires
// gradients, then zeroes all gradients.
template <typename T>
void adam_step(std::span<NamedTensor<T>> params, OptimState<T>& state);

struct TrainPlan {
  std::size_t max_epochs = 30;
  std::size_t patience = 5;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t eval_batch_size = 256;
  std::uint64_t seed = 2024;
  bool shuffle = true;

  void validate() const;
};

// Counts consecutive epochs without a strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  // Records the next epoch's validation loss; returns true when it is a new
  // best.
  bool observe(double value);
  bool should_stop() const noexcept { return stale_ >= patience_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }  // 1-based
  double best_value() const noexcept { return best_; }
  std::size_t epochs_seen() const noexcept { return epochs_; }

 private:
  std::size_t patience_;
  std::size_t epochs_ = 0;
  std::size_t stale_ = 0;
  std::size_t best_epoch_ = 0;
  double best_ = 0.0;
};

struct EvalMetrics {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t windows = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;
  double seconds = 0.0;
};

struct FitResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
  bool stopped_early = false;
};

struct FitOptions {
  // Channels that enter the loss and the metrics; empty means all.
  std::vector<std::size_t> target_channels;
  std::function<void(const EpochRecord&)> on_epoch;
};

// Averages over every window of the set in eval mode, restricted to
// `target_channels` when non-empty.
template <typename T>
EvalMetrics evaluate(const TQNet<T>& model, const WindowSet& windows,
                     std::size_t batch_size = 256,
                     std::span<const std::size_t> target_channels = {});

// Mini-batch Adam with early stopping on validation MSE. The best-validation
// parameters are copied back into `model` before returning. Non-finite
// training loss raises NumericError with the epoch and batch.
template <typename T>
FitResult fit(TQNet<T>& model, const WindowSet& train, const WindowSet& val,
              const TrainPlan& plan, const FitOptions& options = {});

struct MetricsReport {
  std::string dataset;
  std::size_t lookback = 0;
  std::size_t horizon = 0;
  std::size_t period = 0;
  std::string variant;
  std::uint64_t seed = 0;
  double mse = 0.0;
  double mae = 0.0;
  std::size_t best_epoch = 0;
  double wall_time_s = 0.0;
  std::string config_hash;

  // Single-line JSON object with keys dataset, L, H, W, variant, seed, mse,
  // mae, best_epoch, wall_time_s, config_hash.
  std::string to_json() const;
  static MetricsReport from_json(const std::string& line);
};

void append_jsonl(const std::filesystem::path& path, const MetricsReport& report);
std::vector<MetricsReport> read_jsonl(const std::filesystem::path& path);

// 64-bit FNV-1a, used for config hashes and checkpoint checksums.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

// Everything needed to train and test one model on one table.
struct ExperimentSpec {
  ModelConfig model;
  VariantSpec variant;
  TrainPlan plan;
  SplitSpec split;
  std::vector<std::size_t> target_channels;
};

struct ExperimentResult {
  FitResult fit;
  EvalMetrics test;
  double wall_time_s = 0.0;
  std::shared_ptr<TQNet<float>> model;  // best-validation parameters
  PreparedData data;
};

// Splits and scales `table`, trains a fresh float model and evaluates it on
// the test split. `model.channels` is taken from the table.
ExperimentResult run_experiment(const SeriesTable& table, const ExperimentSpec& spec,
                                const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace tqnet
