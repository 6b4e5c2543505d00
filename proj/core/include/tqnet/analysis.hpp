#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tqnet/data.hpp"
#include "tqnet/model.hpp"
#include "tqnet/training.hpp"

namespace tqnet {

// Validates the spec and builds a freshly initialized model wired for it.
template <typename T>
TQNet<T> build_variant(const ModelConfig& config, const VariantSpec& spec);

// Symmetric C x C Pearson matrix with a unit diagonal. Channels without
// variance get zero off-diagonal entries and are listed in `constant`.
struct CorrMatrix {
  RealMatrix values;
  std::vector<std::size_t> constant;
};

// Correlation across the columns of a T x C matrix over the time axis.
CorrMatrix channel_correlation(const RealMatrix& data);

// Correlation across the C rows of the query bank over its W columns.
// Throws DegenerateInputError when any row has zero variance (an untrained
// bank is all zeros).
template <typename T>
CorrMatrix tq_query_correlation(const TQBank<T>& bank);

// Pearson correlation between the strict upper triangles of two square
// matrices of equal size.
double upper_triangle_pearson(const RealMatrix& a, const RealMatrix& b);

struct VariantRow {
  std::string variant;
  double mse = 0.0;
  double mae = 0.0;
  std::size_t best_epoch = 0;
};

// Trains one model per variant with identical data, seed and plan.
std::vector<VariantRow> ablate(const SeriesTable& table, const ExperimentSpec& base,
                               std::span<const VariantSpec> variants);

struct WSweepRow {
  std::size_t period = 0;  // 0 marks the row trained with the query bank disabled
  double mse = 0.0;
  double mae = 0.0;
  std::size_t best_epoch = 0;
};

// One model per candidate period, sorted by ascending test MSE. When
// `with_disabled` is set a row for the base variant with the bank removed
// (query from the raw input) is added with period 0.
std::vector<WSweepRow> w_sweep(const SeriesTable& table, const ExperimentSpec& base,
                               std::span<const std::size_t> periods,
                               bool with_disabled = false);

struct CovariateRow {
  std::size_t covariates = 0;
  double mse = 0.0;
  double mae = 0.0;
};

// For every n in `subset_sizes`, trains on the target channel plus the first
// n other channels in file order, with loss and metrics on the target only.
std::vector<CovariateRow> covariate_experiment(const SeriesTable& table,
                                               std::size_t target_channel,
                                               std::span<const std::size_t> subset_sizes,
                                               const ExperimentSpec& base);

void write_corr_csv(const std::filesystem::path& path, const CorrMatrix& corr,
                    const std::vector<std::string>& names);

}  // namespace tqnet
