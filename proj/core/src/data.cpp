#include "tqnet/data.hpp"
#include "tqnet/ops.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace tqnet {
namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = line.find(',', pos);
    fields.push_back(trim(std::string_view(line).substr(pos, comma - pos)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return fields;
}

std::string cell_ref(std::size_t row, std::size_t col) {
  return "row " + std::to_string(row) + ", column " + std::to_string(col);
}

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

SeriesTable SeriesTable::select_channels(std::span<const std::size_t> columns) const {
  SeriesTable out;
  out.name = name;
  out.timestamps = timestamps;
  out.data = RealMatrix(timesteps(), columns.size());
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j] >= channels()) {
      throw DimensionError("select_channels: column " + std::to_string(columns[j]) +
                           " out of range for " + std::to_string(channels()) + " channels");
    }
    out.channel_names.push_back(channel_names[columns[j]]);
  }
  for (std::size_t t = 0; t < timesteps(); ++t) {
    for (std::size_t j = 0; j < columns.size(); ++j) out.data(t, j) = data(t, columns[j]);
  }
  return out;
}

SeriesTable SeriesTable::head(std::size_t n) const {
  if (n == 0 || n >= timesteps()) return *this;
  SeriesTable out;
  out.name = name;
  out.channel_names = channel_names;
  out.timestamps.assign(timestamps.begin(), timestamps.begin() + static_cast<std::ptrdiff_t>(n));
  out.data = RealMatrix(n, channels());
  std::copy_n(data.data.begin(), n * channels(), out.data.data.begin());
  return out;
}

SeriesTable load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  SeriesTable table;
  table.name = path.stem().string();

  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) {
    throw ParseError("'" + path.string() + "' is empty (missing header row)");
  }
  const auto header = split_fields(line);
  if (header.size() < 2) {
    throw ParseError("'" + path.string() + "': header needs a timestamp and at least one channel");
  }
  table.channel_names.assign(header.begin() + 1, header.end());
  const std::size_t channels = table.channel_names.size();

  std::vector<double> values;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != channels + 1) {
      throw ParseError("'" + path.string() + "' " + cell_ref(row, fields.size()) +
                       ": expected " + std::to_string(channels + 1) + " fields, found " +
                       std::to_string(fields.size()));
    }
    table.timestamps.push_back(fields[0]);
    for (std::size_t c = 1; c <= channels; ++c) {
      const std::string& f = fields[c];
      if (f.empty()) {
        throw ParseError("'" + path.string() + "' " + cell_ref(row, c + 1) + " (" +
                         table.channel_names[c - 1] + "): missing value");
      }
      double v = 0.0;
      const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (res.ec != std::errc() || res.ptr != f.data() + f.size() || !std::isfinite(v)) {
        throw ParseError("'" + path.string() + "' " + cell_ref(row, c + 1) + " (" +
                         table.channel_names[c - 1] + "): non-numeric value '" + f + "'");
      }
      values.push_back(v);
    }
  }
  if (table.timestamps.empty()) {
    throw ParseError("'" + path.string() + "' has a header but no data rows");
  }
  table.data.rows = table.timestamps.size();
  table.data.cols = channels;
  table.data.data = std::move(values);
  return table;
}

void save_csv(const SeriesTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");
  out << "date";
  for (const auto& n : table.channel_names) out << ',' << n;
  out << '\n';
  for (std::size_t t = 0; t < table.timesteps(); ++t) {
    out << (t < table.timestamps.size() ? table.timestamps[t] : std::to_string(t));
    for (std::size_t c = 0; c < table.channels(); ++c) out << ',' << format_double(table.data(t, c));
    out << '\n';
  }
}

void write_matrix_csv(const std::filesystem::path& path,
                      const std::vector<std::string>& header,
                      const RealMatrix& m,
                      const std::vector<std::string>& row_labels,
                      const std::string& label_header) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");
  bool first = true;
  if (!row_labels.empty()) {
    out << label_header;
    first = false;
  }
  for (const auto& h : header) {
    if (!first) out << ',';
    out << h;
    first = false;
  }
  out << '\n';
  for (std::size_t r = 0; r < m.rows; ++r) {
    first = true;
    if (!row_labels.empty()) {
      out << row_labels[r];
      first = false;
    }
    for (std::size_t c = 0; c < m.cols; ++c) {
      if (!first) out << ',';
      out << format_double(m(r, c));
      first = false;
    }
    out << '\n';
  }
}

void SplitSpec::validate() const {
  if (train <= 0.0 || val <= 0.0 || test <= 0.0) {
    throw ConfigError("split ratios must all be positive");
  }
  if (std::abs(train + val + test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1");
  }
}

Scaler Scaler::fit(const RealMatrix& data, std::size_t begin, std::size_t end) {
  if (end <= begin || end > data.rows) throw ConfigError("scaler fit range is empty");
  Scaler s;
  s.mean.assign(data.cols, 0.0);
  s.stdev.assign(data.cols, 0.0);
  const double n = static_cast<double>(end - begin);
  for (std::size_t c = 0; c < data.cols; ++c) {
    double mean = 0.0;
    for (std::size_t t = begin; t < end; ++t) mean += data(t, c);
    mean /= n;
    double var = 0.0;
    for (std::size_t t = begin; t < end; ++t) {
      const double d = data(t, c) - mean;
      var += d * d;
    }
    s.mean[c] = mean;
    s.stdev[c] = std::max(std::sqrt(var / n), kStdFloor);
  }
  return s;
}

RealMatrix Scaler::transform(const RealMatrix& data) const {
  RealMatrix out(data.rows, data.cols);
  for (std::size_t t = 0; t < data.rows; ++t) {
    for (std::size_t c = 0; c < data.cols; ++c) out(t, c) = (data(t, c) - mean[c]) / stdev[c];
  }
  return out;
}

RealMatrix Scaler::inverse(const RealMatrix& data) const {
  RealMatrix out(data.rows, data.cols);
  for (std::size_t t = 0; t < data.rows; ++t) {
    for (std::size_t c = 0; c < data.cols; ++c) out(t, c) = data(t, c) * stdev[c] + mean[c];
  }
  return out;
}

PreparedData split_and_scale(const SeriesTable& table, const SplitSpec& spec,
                             std::size_t lookback, std::size_t horizon) {
  spec.validate();
  const SeriesTable used = table.head(spec.max_timesteps);
  const std::size_t total = used.timesteps();
  const auto n_train = static_cast<std::size_t>(static_cast<double>(total) * spec.train);
  const auto n_test = static_cast<std::size_t>(static_cast<double>(total) * spec.test);
  if (n_train + n_test >= total) throw ConfigError("split leaves no validation rows");
  const std::size_t n_val = total - n_train - n_test;

  const std::size_t need = lookback + horizon;
  const std::pair<const char*, std::size_t> sizes[] = {
      {"train", n_train}, {"val", n_val}, {"test", n_test}};
  for (const auto& [name, n] : sizes) {
    if (n < need) {
      throw ConfigError(std::string(name) + " split has " + std::to_string(n) +
                        " rows, fewer than lookback + horizon = " + std::to_string(need));
    }
  }

  PreparedData out;
  const bool context = spec.border == Border::kContext;
  out.train = {0, 0, n_train};
  out.val = {context ? n_train - lookback : n_train, n_train, n_train + n_val};
  out.test = {context ? n_train + n_val - lookback : n_train + n_val, n_train + n_val, total};
  out.scaler = Scaler::fit(used.data, 0, n_train);
  out.scaled = std::make_shared<const RealMatrix>(out.scaler.transform(used.data));
  return out;
}

WindowSet::WindowSet(std::shared_ptr<const RealMatrix> series, SplitRange range,
                     std::size_t lookback, std::size_t horizon, std::size_t period)
    : series_(std::move(series)),
      range_(range),
      lookback_(lookback),
      horizon_(horizon),
      period_(period) {
  if (period_ == 0) throw ConfigError("period must be positive");
  const std::size_t span = range_.end - range_.begin;
  count_ = span >= lookback_ + horizon_ ? span - lookback_ - horizon_ + 1 : 0;
}

WindowSample WindowSet::sample(std::size_t i) const {
  if (i >= count_) throw DimensionError("window index " + std::to_string(i) + " out of range");
  const std::size_t C = channels();
  WindowSample s{RealMatrix(C, lookback_), RealMatrix(C, horizon_), start(i), start(i) % period_};
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t j = 0; j < lookback_; ++j) s.x(c, j) = (*series_)(s.t + j, c);
    for (std::size_t j = 0; j < horizon_; ++j) s.y(c, j) = (*series_)(s.t + lookback_ + j, c);
  }
  return s;
}

template <typename T>
void WindowSet::gather(std::span<const std::size_t> indices, std::span<T> x_out,
                       std::span<T> y_out) const {
  const std::size_t C = channels();
  if (x_out.size() != indices.size() * C * lookback_ ||
      y_out.size() != indices.size() * C * horizon_) {
    throw DimensionError("gather: output buffers do not match the batch size");
  }
  const RealMatrix& s = *series_;
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= count_) throw DimensionError("gather: window index out of range");
    const std::size_t t = start(indices[b]);
    for (std::size_t c = 0; c < C; ++c) {
      T* xo = x_out.data() + (b * C + c) * lookback_;
      T* yo = y_out.data() + (b * C + c) * horizon_;
      for (std::size_t j = 0; j < lookback_; ++j) xo[j] = static_cast<T>(s(t + j, c));
      for (std::size_t j = 0; j < horizon_; ++j) yo[j] = static_cast<T>(s(t + lookback_ + j, c));
    }
  }
}

template void WindowSet::gather(std::span<const std::size_t>, std::span<float>,
                                std::span<float>) const;
template void WindowSet::gather(std::span<const std::size_t>, std::span<double>,
                                std::span<double>) const;

WindowSet make_windows(const PreparedData& data, SplitKind which,
                       std::size_t lookback, std::size_t horizon,
                       std::size_t period) {
  const SplitRange& r = which == SplitKind::kTrain ? data.train
                        : which == SplitKind::kVal ? data.val
                                                   : data.test;
  return WindowSet(data.scaled, r, lookback, horizon, period);
}

AcfResult compute_acf(const RealMatrix& data, std::size_t begin, std::size_t end,
                      std::size_t max_lag) {
  if (end <= begin || end > data.rows) throw ConfigError("acf: empty row range");
  const std::size_t n = end - begin;
  if (max_lag >= n) {
    throw ConfigError("acf: max_lag " + std::to_string(max_lag) +
                      " must be below the series length " + std::to_string(n));
  }
  AcfResult r;
  r.threshold = 2.0 / std::sqrt(static_cast<double>(n));
  r.mean_acf.assign(max_lag + 1, 0.0);
  std::size_t used = 0;
  std::vector<double> z(n);
  for (std::size_t c = 0; c < data.cols; ++c) {
    double mean = 0.0;
    for (std::size_t t = 0; t < n; ++t) mean += data(begin + t, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      z[t] = data(begin + t, c) - mean;
      var += z[t] * z[t];
    }
    std::vector<double> acf(max_lag + 1, 0.0);
    if (var > 0.0) {
      for (std::size_t k = 0; k <= max_lag; ++k) {
        double s = 0.0;
        for (std::size_t t = 0; t + k < n; ++t) s += z[t] * z[t + k];
        acf[k] = s / var;
      }
      for (std::size_t k = 0; k <= max_lag; ++k) r.mean_acf[k] += acf[k];
      ++used;
    }
    r.per_channel.push_back(std::move(acf));
  }
  if (used > 0) {
    for (double& v : r.mean_acf) v /= static_cast<double>(used);
  }
  const auto& a = r.mean_acf;
  for (std::size_t k = 1; k + 1 <= max_lag; ++k) {
    if (a[k] > a[k - 1] && a[k] >= a[k + 1] && a[k] > r.threshold) r.candidates.push_back(k);
  }
  std::stable_sort(r.candidates.begin(), r.candidates.end(),
                   [&a](std::size_t x, std::size_t y) { return a[x] > a[y]; });
  return r;
}

RealMatrix mixing_correlation(const RealMatrix& m) {
  RealMatrix g(m.rows, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.rows; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < m.cols; ++k) s += m(i, k) * m(j, k);
      g(i, j) = s;
    }
  }
  RealMatrix corr(m.rows, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.rows; ++j) {
      const double d = std::sqrt(g(i, i) * g(j, j));
      corr(i, j) = i == j ? 1.0 : (d > 0.0 ? g(i, j) / d : 0.0);
    }
  }
  return corr;
}

SynthResult generate_synthetic(const SynthSpec& spec) {
  if (spec.period < 2) throw ParameterError("synthetic period must be at least 2");
  if (spec.channels == 0 || spec.timesteps == 0) {
    throw ParameterError("synthetic series needs at least one channel and one step");
  }
  for (double rate : {spec.missing_rate, spec.spike_rate}) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ParameterError("corruption rates must lie in [0, 1]");
  }
  if (spec.noise_sigma < 0.0) throw ParameterError("noise_sigma must be non-negative");

  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  RealMatrix mixing = spec.mixing;
  if (mixing.rows == 0) {
    if (spec.latents == 0) throw ParameterError("synthetic series needs at least one latent");
    mixing = RealMatrix(spec.channels, spec.latents);
    for (double& v : mixing.data) v = normal(rng);
  } else if (mixing.rows != spec.channels || mixing.cols == 0) {
    throw ParameterError("mixing matrix must be channels x latents");
  }
  const std::size_t K = mixing.cols;
  const std::size_t C = spec.channels;
  const std::size_t T = spec.timesteps;

  std::vector<double> phase(K);
  for (double& p : phase) p = 2.0 * std::numbers::pi * unif(rng);

  SynthResult out;
  out.mixing = mixing;
  out.ground_truth_corr = mixing_correlation(mixing);
  SeriesTable& table = out.table;
  table.name = "synthetic";
  for (std::size_t c = 0; c < C; ++c) table.channel_names.push_back("ch" + std::to_string(c));
  table.data = RealMatrix(T, C);

  std::vector<double> clean_std(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += mixing(c, k) * mixing(c, k);
    clean_std[c] = std::sqrt(s);
  }
  std::vector<double> latent(K);
  for (std::size_t t = 0; t < T; ++t) {
    table.timestamps.push_back(std::to_string(t));
    for (std::size_t k = 0; k < K; ++k) {
      const double w = 2.0 * std::numbers::pi * static_cast<double>(k + 1) / static_cast<double>(spec.period);
      latent[k] = std::numbers::sqrt2 * std::sin(w * static_cast<double>(t) + phase[k]);
    }
    for (std::size_t c = 0; c < C; ++c) {
      double v = 0.0;
      for (std::size_t k = 0; k < K; ++k) v += mixing(c, k) * latent[k];
      v += spec.noise_sigma * normal(rng);
      table.data(t, c) = v;
    }
  }
  // Corruption draws come after the clean series so that changing a rate
  // leaves the underlying signal untouched.
  if (spec.spike_rate > 0.0 || spec.missing_rate > 0.0) {
    Rng corrupt(spec.seed ^ 0x9E3779B97F4A7C15ULL);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t c = 0; c < C; ++c) {
        if (unif(corrupt) < spec.spike_rate) {
          const double sign = unif(corrupt) < 0.5 ? -1.0 : 1.0;
          table.data(t, c) += sign * spec.spike_scale * clean_std[c];
        }
        if (unif(corrupt) < spec.missing_rate) table.data(t, c) = 0.0;
      }
    }
  }
  return out;
}

}  // namespace tqnet
