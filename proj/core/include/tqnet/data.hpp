#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tqnet/errors.hpp"

namespace tqnet {

// Plain row-major matrix of doubles used for data, statistics and tables.
struct RealMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  RealMatrix() = default;
  RealMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }
};

// T x C series in file order.
struct SeriesTable {
  std::string name;
  std::vector<std::string> timestamps;
  RealMatrix data;
  std::vector<std::string> channel_names;

  std::size_t timesteps() const noexcept { return data.rows; }
  std::size_t channels() const noexcept { return data.cols; }

  // Columns in the given order.
  SeriesTable select_channels(std::span<const std::size_t> columns) const;
  // First `n` rows (or all rows when n == 0 or n >= timesteps()).
  SeriesTable head(std::size_t n) const;
};

// Reads a header row followed by rows of `timestamp,v1,...,vC`. Blank,
// non-numeric or ragged cells raise ParseError naming the 1-based row and
// column.
SeriesTable load_csv(const std::filesystem::path& path);
void save_csv(const SeriesTable& table, const std::filesystem::path& path);

// Writes a matrix with a header row. `row_labels`, when non-empty, become a
// leading column titled `label_header`.
void write_matrix_csv(const std::filesystem::path& path,
                      const std::vector<std::string>& header,
                      const RealMatrix& m,
                      const std::vector<std::string>& row_labels = {},
                      const std::string& label_header = "");

enum class Border {
  kContext,  // val/test windows may look back L steps into the previous split
  kStrict,   // windows never read outside their own split
};

struct SplitSpec {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
  Border border = Border::kContext;
  // Use only the first rows of the table; 0 keeps every row.
  std::size_t max_timesteps = 0;

  static SplitSpec ett() { return {0.6, 0.2, 0.2, Border::kContext, 0}; }
  void validate() const;
};

// Per-channel standardization fitted on the train split.
struct Scaler {
  static constexpr double kStdFloor = 1e-8;
  std::vector<double> mean;
  std::vector<double> stdev;

  static Scaler fit(const RealMatrix& data, std::size_t begin, std::size_t end);
  RealMatrix transform(const RealMatrix& data) const;
  RealMatrix inverse(const RealMatrix& data) const;
};

// Rows [begin, end) may be read by windows of this split; rows [border, end)
// belong to it.
struct SplitRange {
  std::size_t begin = 0;
  std::size_t border = 0;
  std::size_t end = 0;
  std::size_t owned() const noexcept { return end - border; }
};

struct PreparedData {
  std::shared_ptr<const RealMatrix> scaled;  // T x C, standardized
  Scaler scaler;
  SplitRange train;
  SplitRange val;
  SplitRange test;
};

// Chronological split with train-only standardization. Throws ConfigError
// when any split owns fewer than lookback + horizon rows.
PreparedData split_and_scale(const SeriesTable& table, const SplitSpec& spec,
                             std::size_t lookback, std::size_t horizon);

struct WindowSample {
  RealMatrix x;  // C x L
  RealMatrix y;  // C x H
  std::size_t t = 0;
  std::size_t cycle = 0;
};

// Every window of a split, addressed lazily over shared series storage.
class WindowSet {
 public:
  WindowSet() = default;
  WindowSet(std::shared_ptr<const RealMatrix> series, SplitRange range,
            std::size_t lookback, std::size_t horizon, std::size_t period);

  std::size_t size() const noexcept { return count_; }
  bool empty() const noexcept { return count_ == 0; }
  std::size_t channels() const noexcept { return series_ ? series_->cols : 0; }
  std::size_t lookback() const noexcept { return lookback_; }
  std::size_t horizon() const noexcept { return horizon_; }
  std::size_t period() const noexcept { return period_; }
  // Absolute index of the first input step of window i.
  std::size_t start(std::size_t i) const { return range_.begin + i; }
  WindowSample sample(std::size_t i) const;

  // Writes the selected windows as stacks of C-row blocks:
  // x_out is (n*C) x L, y_out is (n*C) x H, both row-major.
  template <typename T>
  void gather(std::span<const std::size_t> indices, std::span<T> x_out,
              std::span<T> y_out) const;

 private:
  std::shared_ptr<const RealMatrix> series_;
  SplitRange range_;
  std::size_t lookback_ = 0;
  std::size_t horizon_ = 0;
  std::size_t period_ = 1;
  std::size_t count_ = 0;
};

enum class SplitKind { kTrain, kVal, kTest };

WindowSet make_windows(const PreparedData& data, SplitKind which,
                       std::size_t lookback, std::size_t horizon,
                       std::size_t period);

struct AcfResult {
  std::vector<double> mean_acf;                  // lags 0..max_lag
  std::vector<std::vector<double>> per_channel;  // same lags, per channel
  double threshold = 0.0;                        // 2 / sqrt(T)
  // Local maxima of mean_acf above the threshold, strongest first.
  std::vector<std::size_t> candidates;

  std::optional<std::size_t> suggest_period() const {
    if (candidates.empty()) return std::nullopt;
    return candidates.front();
  }
};

// ACF of each standardized channel over rows [begin, end), averaged across
// non-constant channels.
AcfResult compute_acf(const RealMatrix& data, std::size_t begin,
                      std::size_t end, std::size_t max_lag);
inline AcfResult compute_acf(const RealMatrix& data, std::size_t max_lag) {
  return compute_acf(data, 0, data.rows, max_lag);
}

struct SynthSpec {
  std::size_t channels = 8;
  std::size_t timesteps = 4000;
  std::size_t period = 24;  // W_true
  std::size_t latents = 3;  // K, used when `mixing` is empty
  RealMatrix mixing;        // C x K; drawn N(0, 1) from the seed when empty
  double noise_sigma = 0.1;
  double missing_rate = 0.0;
  double spike_rate = 0.0;
  double spike_scale = 5.0;  // in units of the channel's clean std
  std::uint64_t seed = 2024;
};

struct SynthResult {
  SeriesTable table;
  RealMatrix mixing;
  RealMatrix ground_truth_corr;  // normalize(M M^T)
};

// Channels are M times K orthogonal latent sinusoids (harmonic k + 1 of the
// period, random phase, unit variance) plus Gaussian noise, with optional
// spikes and zeroed points. Bit-reproducible per seed.
SynthResult generate_synthetic(const SynthSpec& spec);

// Closed-form channel correlation of a mixing matrix: M M^T normalized to a
// unit diagonal.
RealMatrix mixing_correlation(const RealMatrix& mixing);

}  // namespace tqnet
