#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tqnet/ops.hpp"
#include "tqnet/tensor.hpp"

namespace tqnet {

// Architectural hyperparameters of a single-block TQNet.
struct ModelConfig {
  std::size_t channels = 7;    // C
  std::size_t lookback = 96;   // L
  std::size_t horizon = 96;    // H
  std::size_t period = 24;     // W, length of the temporal query bank
  std::size_t d_model = 512;   // hidden width after the input projection
  std::size_t d_ff = 0;        // MLP inner width, 0 means d_model
  std::size_t heads = 4;       // must divide lookback
  double attn_dropout = 0.5;   // applied to attention weights
  double out_dropout = 0.5;    // applied before the output projection
  bool use_instance_norm = true;
  double norm_eps = 1e-5;
  // Scores are divided by sqrt(L) unless this is set, in which case the
  // per-head width sqrt(L / heads) is used.
  bool scale_by_head_dim = false;
  std::uint64_t seed = 2024;

  std::size_t ff_width() const { return d_ff == 0 ? d_model : d_ff; }
  std::size_t head_width() const { return lookback / heads; }
  // Throws ConfigError on any violated invariant.
  void validate() const;
};

enum class Source { kTQ, kRaw };

// Wiring of the channel-mixing block. The named presets cover the ablation
// grid; arbitrary combinations are validated by validate().
struct VariantSpec {
  Source q_source = Source::kTQ;
  Source k_source = Source::kRaw;
  bool mha_enabled = true;
  bool tq_enabled = true;

  static VariantSpec tqnet() { return {}; }
  static VariantSpec self_attention() {
    return {Source::kRaw, Source::kRaw, true, false};
  }
  static VariantSpec global_only() {
    return {Source::kTQ, Source::kTQ, true, true};
  }
  static VariantSpec channel_identifier() {
    return {Source::kRaw, Source::kRaw, false, true};
  }
  static VariantSpec pure_mlp() {
    return {Source::kRaw, Source::kRaw, false, false};
  }

  // Canonical names: default, self_attention, global_only,
  // channel_identifier, pure_mlp. Other combinations render as
  // "q=<src>,k=<src>,mha=<0|1>,tq=<0|1>".
  std::string name() const;
  static VariantSpec from_name(const std::string& name);
  void validate() const;

  bool operator==(const VariantSpec&) const = default;
};

// Learnable C x W temporal query bank, zero at construction.
template <typename T>
class TQBank {
 public:
  TQBank(std::size_t channels, std::size_t period);

  std::size_t channels() const noexcept { return theta_.rows(); }
  std::size_t period() const noexcept { return theta_.cols(); }
  DiffTensor<T>& theta() noexcept { return theta_; }
  const DiffTensor<T>& theta() const noexcept { return theta_; }

  // Column indices ((t mod W) + j) mod W, j in [0, length).
  static std::vector<std::size_t> segment_indices(std::size_t t,
                                                  std::size_t length,
                                                  std::size_t period);
  // C x length segment for window start t.
  DiffTensor<T> segment(std::size_t t, std::size_t length,
                        Tape<T>* tape = nullptr) const;
  // Stacked segments for a batch of window starts.
  DiffTensor<T> segments(std::span<const std::size_t> starts,
                         std::size_t length, Tape<T>* tape = nullptr) const;

 private:
  DiffTensor<T> theta_;
};

// Per-row statistics removed by instance_norm. `var` is the population
// variance over each row.
template <typename T>
struct InstanceNormResult {
  DiffTensor<T> normalized;
  std::vector<T> mean;
  std::vector<T> var;
};

// Normalizes every row to zero mean and unit variance:
// (x - mean) / sqrt(var + eps). Input values are treated as data.
template <typename T>
InstanceNormResult<T> instance_norm(const DiffTensor<T>& x, double eps);

// Inverse of instance_norm applied to a prediction whose rows correspond to
// the statistics rows: y * sqrt(var + eps) + mean. Differentiable in y.
template <typename T>
DiffTensor<T> instance_denorm(const DiffTensor<T>& y, std::span<const T> mean,
                              std::span<const T> var, double eps,
                              Tape<T>* tape = nullptr);

// Single-block TQNet: optional instance norm, TQ-enhanced multi-head
// attention with residual, input projection, residual GeLU MLP, dropout and
// output projection, de-normalization.
//
// Batched inputs are stacks of per-sample C x L matrices: row b*C + c holds
// channel c of sample b. `starts` holds the absolute start index of each
// sample's window in the source series.
template <typename T>
class TQNet {
 public:
  explicit TQNet(ModelConfig config, VariantSpec variant = VariantSpec::tqnet());

  const ModelConfig& config() const noexcept { return config_; }
  const VariantSpec& variant() const noexcept { return variant_; }

  DiffTensor<T> forward(const DiffTensor<T>& x,
                        std::span<const std::size_t> starts, Mode mode,
                        Rng& rng, Tape<T>* tape) const;
  DiffTensor<T> forward(const DiffTensor<T>& x, std::size_t start, Mode mode,
                        Rng& rng, Tape<T>* tape) const;

  // Multi-head attention without the residual: per head
  // softmax(Q_h K_h^T / sqrt(L)) V_h with Q_h = q_src W_h^Q,
  // K_h = k_src W_h^K, V_h = x W_h^V; heads concatenated and projected by W^O.
  DiffTensor<T> attention(const DiffTensor<T>& x, const DiffTensor<T>& q_src,
                          const DiffTensor<T>& k_src, Mode mode, Rng& rng,
                          Tape<T>* tape) const;
  // attention(x, q_src, x) + x.
  DiffTensor<T> tq_mha(const DiffTensor<T>& x, const DiffTensor<T>& q_src,
                       Mode mode, Rng& rng, Tape<T>* tape) const;

  // Every parameter the variant owns, in checkpoint order.
  std::vector<NamedTensor<T>> parameters() const;
  void zero_grad();

  bool has_tq() const noexcept { return variant_.tq_enabled; }
  TQBank<T>& tq_bank() { return tq_; }
  const TQBank<T>& tq_bank() const { return tq_; }

 private:
  struct Linear {
    DiffTensor<T> weight;
    DiffTensor<T> bias;
  };

  void init_parameters();

  ModelConfig config_;
  VariantSpec variant_;
  TQBank<T> tq_;
  std::vector<DiffTensor<T>> w_query_;
  std::vector<DiffTensor<T>> w_key_;
  std::vector<DiffTensor<T>> w_value_;
  DiffTensor<T> w_out_;
  Linear proj_in_;
  Linear fc1_;
  Linear fc2_;
  Linear proj_out_;
};

extern template class TQBank<float>;
extern template class TQBank<double>;
extern template class TQNet<float>;
extern template class TQNet<double>;

}  // namespace tqnet
