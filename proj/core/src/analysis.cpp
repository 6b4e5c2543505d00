#include "tqnet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tqnet {
namespace {

// Pearson matrix over `n` series of length `len`, fetched through `at(i, k)`.
template <typename At>
CorrMatrix pearson(std::size_t n, std::size_t len, At at) {
  CorrMatrix out;
  out.values = RealMatrix(n, n);
  std::vector<double> mean(n, 0.0);
  std::vector<double> norm(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < len; ++k) mean[i] += at(i, k);
    mean[i] /= static_cast<double>(len);
    for (std::size_t k = 0; k < len; ++k) {
      const double d = at(i, k) - mean[i];
      norm[i] += d * d;
    }
    norm[i] = std::sqrt(norm[i]);
    if (norm[i] == 0.0) out.constant.push_back(i);
  }
  for (std::size_t i = 0; i < n; ++i) {
    out.values(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double r = 0.0;
      if (norm[i] > 0.0 && norm[j] > 0.0) {
        double s = 0.0;
        for (std::size_t k = 0; k < len; ++k) s += (at(i, k) - mean[i]) * (at(j, k) - mean[j]);
        r = std::clamp(s / (norm[i] * norm[j]), -1.0, 1.0);
      }
      out.values(i, j) = r;
      out.values(j, i) = r;
    }
  }
  return out;
}

ExperimentSpec with_period(ExperimentSpec spec, std::size_t period) {
  spec.model.period = period;
  return spec;
}

}  // namespace

template <typename T>
TQNet<T> build_variant(const ModelConfig& config, const VariantSpec& spec) {
  spec.validate();
  return TQNet<T>(config, spec);
}

CorrMatrix channel_correlation(const RealMatrix& data) {
  if (data.rows < 2) throw DimensionError("channel_correlation needs at least two timesteps");
  return pearson(data.cols, data.rows,
                 [&data](std::size_t i, std::size_t k) { return data(k, i); });
}

template <typename T>
CorrMatrix tq_query_correlation(const TQBank<T>& bank) {
  const auto& theta = bank.theta();
  CorrMatrix c = pearson(theta.rows(), theta.cols(), [&theta](std::size_t i, std::size_t k) {
    return static_cast<double>(theta(i, k));
  });
  if (!c.constant.empty()) {
    throw DegenerateInputError("query bank row " + std::to_string(c.constant.front()) +
                               " has zero variance; correlation is undefined");
  }
  return c;
}

double upper_triangle_pearson(const RealMatrix& a, const RealMatrix& b) {
  if (a.rows != a.cols || b.rows != b.cols || a.rows != b.rows) {
    throw DimensionError("upper_triangle_pearson needs two square matrices of equal size");
  }
  std::vector<double> x;
  std::vector<double> y;
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = i + 1; j < a.cols; ++j) {
      x.push_back(a(i, j));
      y.push_back(b(i, j));
    }
  }
  if (x.size() < 2) throw DegenerateInputError("upper triangle has fewer than two entries");
  const CorrMatrix c = pearson(2, x.size(), [&](std::size_t i, std::size_t k) {
    return i == 0 ? x[k] : y[k];
  });
  if (!c.constant.empty()) throw DegenerateInputError("upper triangle has zero variance");
  return c.values(0, 1);
}

std::vector<VariantRow> ablate(const SeriesTable& table, const ExperimentSpec& base,
                               std::span<const VariantSpec> variants) {
  std::vector<VariantRow> rows;
  for (const VariantSpec& v : variants) {
    ExperimentSpec spec = base;
    spec.variant = v;
    const ExperimentResult r = run_experiment(table, spec);
    rows.push_back({v.name(), r.test.mse, r.test.mae, r.fit.best_epoch});
  }
  return rows;
}

std::vector<WSweepRow> w_sweep(const SeriesTable& table, const ExperimentSpec& base,
                               std::span<const std::size_t> periods, bool with_disabled) {
  std::vector<WSweepRow> rows;
  for (std::size_t w : periods) {
    if (w == 0) throw ConfigError("w_sweep: every period must be at least 1");
    const ExperimentResult r = run_experiment(table, with_period(base, w));
    rows.push_back({w, r.test.mse, r.test.mae, r.fit.best_epoch});
  }
  if (with_disabled) {
    ExperimentSpec spec = base;
    spec.variant.q_source = Source::kRaw;
    if (spec.variant.k_source == Source::kTQ) spec.variant.k_source = Source::kRaw;
    spec.variant.tq_enabled = false;
    const ExperimentResult r = run_experiment(table, spec);
    rows.push_back({0, r.test.mse, r.test.mae, r.fit.best_epoch});
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const WSweepRow& a, const WSweepRow& b) { return a.mse < b.mse; });
  return rows;
}

std::vector<CovariateRow> covariate_experiment(const SeriesTable& table,
                                               std::size_t target_channel,
                                               std::span<const std::size_t> subset_sizes,
                                               const ExperimentSpec& base) {
  if (target_channel >= table.channels()) {
    throw ConfigError("target channel " + std::to_string(target_channel) + " out of range for " +
                      std::to_string(table.channels()) + " channels");
  }
  std::vector<std::size_t> others;
  for (std::size_t c = 0; c < table.channels(); ++c) {
    if (c != target_channel) others.push_back(c);
  }
  std::vector<CovariateRow> rows;
  for (std::size_t n : subset_sizes) {
    if (n > others.size()) {
      throw ConfigError("covariate subset " + std::to_string(n) + " exceeds the " +
                        std::to_string(others.size()) + " available covariates");
    }
    std::vector<std::size_t> cols(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(n));
    cols.push_back(target_channel);
    const SeriesTable sub = table.select_channels(cols);
    ExperimentSpec spec = base;
    spec.target_channels.clear();
    if (n > 0) spec.target_channels.push_back(n);
    const ExperimentResult r = run_experiment(sub, spec);
    rows.push_back({n, r.test.mse, r.test.mae});
  }
  return rows;
}

void write_corr_csv(const std::filesystem::path& path, const CorrMatrix& corr,
                    const std::vector<std::string>& names) {
  write_matrix_csv(path, names, corr.values, names, "channel");
}

template TQNet<float> build_variant(const ModelConfig&, const VariantSpec&);
template TQNet<double> build_variant(const ModelConfig&, const VariantSpec&);
template CorrMatrix tq_query_correlation(const TQBank<float>&);
template CorrMatrix tq_query_correlation(const TQBank<double>&);

}  // namespace tqnet
