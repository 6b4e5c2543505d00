#include "tqnet/model.hpp"

#include <cmath>
#include <random>

namespace tqnet {
namespace {

const char* source_name(Source s) { return s == Source::kTQ ? "tq" : "raw"; }

template <typename T>
void require_finite(const DiffTensor<T>& t, Mode mode, const char* layer) {
  if (mode != Mode::kEval) return;
  for (T v : t.values()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError(std::string("non-finite value after layer '") + layer + "'");
    }
  }
}

template <typename T>
void fill_uniform(DiffTensor<T>& t, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (T& v : t.values()) v = static_cast<T>(dist(rng));
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (channels == 0) fail("channels must be positive");
  if (lookback == 0) fail("lookback must be positive");
  if (horizon == 0) fail("horizon must be positive");
  if (period == 0) fail("period must be positive");
  if (d_model == 0) fail("d_model must be positive");
  if (heads == 0) fail("heads must be positive");
  if (lookback % heads != 0) {
    fail("heads (" + std::to_string(heads) + ") must divide lookback (" +
         std::to_string(lookback) + ")");
  }
  if (!(attn_dropout >= 0.0 && attn_dropout < 1.0)) fail("attn_dropout must lie in [0, 1)");
  if (!(out_dropout >= 0.0 && out_dropout < 1.0)) fail("out_dropout must lie in [0, 1)");
  if (!(norm_eps > 0.0)) fail("norm_eps must be positive");
}

std::string VariantSpec::name() const {
  if (*this == tqnet()) return "default";
  if (*this == self_attention()) return "self_attention";
  if (*this == global_only()) return "global_only";
  if (*this == channel_identifier()) return "channel_identifier";
  if (*this == pure_mlp()) return "pure_mlp";
  return std::string("q=") + source_name(q_source) + ",k=" + source_name(k_source) +
         ",mha=" + (mha_enabled ? "1" : "0") + ",tq=" + (tq_enabled ? "1" : "0");
}

VariantSpec VariantSpec::from_name(const std::string& name) {
  if (name == "default" || name == "tqnet") return tqnet();
  if (name == "self_attention") return self_attention();
  if (name == "global_only") return global_only();
  if (name == "channel_identifier") return channel_identifier();
  if (name == "pure_mlp") return pure_mlp();
  throw ConfigError("unknown variant '" + name + "'");
}

void VariantSpec::validate() const {
  if (mha_enabled && !tq_enabled &&
      (q_source == Source::kTQ || k_source == Source::kTQ)) {
    throw ConfigError("variant " + name() + " sources attention from TQ but tq is disabled");
  }
}

template <typename T>
TQBank<T>::TQBank(std::size_t channels, std::size_t period)
    : theta_(channels, period, true) {}

template <typename T>
std::vector<std::size_t> TQBank<T>::segment_indices(std::size_t t,
                                                    std::size_t length,
                                                    std::size_t period) {
  std::vector<std::size_t> idx(length);
  const std::size_t phase = t % period;
  for (std::size_t j = 0; j < length; ++j) idx[j] = (phase + j) % period;
  return idx;
}

template <typename T>
DiffTensor<T> TQBank<T>::segment(std::size_t t, std::size_t length,
                                 Tape<T>* tape) const {
  const std::size_t starts[] = {t};
  return periodic_segments(theta_, std::span<const std::size_t>(starts), length, tape);
}

template <typename T>
DiffTensor<T> TQBank<T>::segments(std::span<const std::size_t> starts,
                                  std::size_t length, Tape<T>* tape) const {
  return periodic_segments(theta_, starts, length, tape);
}

template <typename T>
InstanceNormResult<T> instance_norm(const DiffTensor<T>& x, double eps) {
  if (x.cols() == 0) throw DimensionError("instance_norm: empty rows in " + x.shape_string());
  InstanceNormResult<T> r{DiffTensor<T>(x.rows(), x.cols()), {}, {}};
  r.mean.resize(x.rows());
  r.var.resize(x.rows());
  const std::size_t n = x.cols();
  for (std::size_t row = 0; row < x.rows(); ++row) {
    const T* in = x.data() + row * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += in[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = in[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    T* out = r.normalized.data() + row * n;
    for (std::size_t j = 0; j < n; ++j) out[j] = static_cast<T>((in[j] - mean) * inv);
    r.mean[row] = static_cast<T>(mean);
    r.var[row] = static_cast<T>(var);
  }
  return r;
}

template <typename T>
DiffTensor<T> instance_denorm(const DiffTensor<T>& y, std::span<const T> mean,
                              std::span<const T> var, double eps,
                              Tape<T>* tape) {
  if (var.size() != y.rows()) {
    throw DimensionError("instance_denorm: " + y.shape_string() + " with " +
                         std::to_string(var.size()) + " row statistics");
  }
  std::vector<T> stdev(var.size());
  for (std::size_t i = 0; i < var.size(); ++i) {
    stdev[i] = static_cast<T>(std::sqrt(static_cast<double>(var[i]) + eps));
  }
  return row_affine(y, std::span<const T>(stdev), mean, tape);
}

template <typename T>
TQNet<T>::TQNet(ModelConfig config, VariantSpec variant)
    : config_(config), variant_(variant), tq_(config.channels, config.period) {
  config_.validate();
  variant_.validate();
  init_parameters();
}

template <typename T>
void TQNet<T>::init_parameters() {
  const std::size_t L = config_.lookback;
  const std::size_t dh = config_.head_width();
  const std::size_t d = config_.d_model;
  const std::size_t ff = config_.ff_width();
  Rng rng(config_.seed);

  // Every tensor is drawn in a fixed order whatever the variant, so variants
  // sharing a seed start from identical MLP weights.
  for (std::size_t h = 0; h < config_.heads; ++h) {
    w_query_.emplace_back(L, dh, true);
    w_key_.emplace_back(L, dh, true);
    w_value_.emplace_back(L, dh, true);
    fill_uniform(w_query_.back(), L, rng);
    fill_uniform(w_key_.back(), L, rng);
    fill_uniform(w_value_.back(), L, rng);
  }
  w_out_ = DiffTensor<T>(L, L, true);
  fill_uniform(w_out_, L, rng);

  auto make = [&rng](std::size_t in, std::size_t out) {
    Linear l{DiffTensor<T>(in, out, true), DiffTensor<T>(1, out, true)};
    fill_uniform(l.weight, in, rng);
    return l;
  };
  proj_in_ = make(L, d);
  fc1_ = make(d, ff);
  fc2_ = make(ff, d);
  proj_out_ = make(d, config_.horizon);
}

template <typename T>
std::vector<NamedTensor<T>> TQNet<T>::parameters() const {
  std::vector<NamedTensor<T>> out;
  if (variant_.tq_enabled) out.push_back({"tq.theta", tq_.theta()});
  if (variant_.mha_enabled) {
    for (std::size_t h = 0; h < config_.heads; ++h) {
      out.push_back({"attn.query." + std::to_string(h), w_query_[h]});
      out.push_back({"attn.key." + std::to_string(h), w_key_[h]});
      out.push_back({"attn.value." + std::to_string(h), w_value_[h]});
    }
    out.push_back({"attn.out", w_out_});
  }
  out.push_back({"proj_in.weight", proj_in_.weight});
  out.push_back({"proj_in.bias", proj_in_.bias});
  out.push_back({"mlp.fc1.weight", fc1_.weight});
  out.push_back({"mlp.fc1.bias", fc1_.bias});
  out.push_back({"mlp.fc2.weight", fc2_.weight});
  out.push_back({"mlp.fc2.bias", fc2_.bias});
  out.push_back({"proj_out.weight", proj_out_.weight});
  out.push_back({"proj_out.bias", proj_out_.bias});
  return out;
}

template <typename T>
void TQNet<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

template <typename T>
DiffTensor<T> TQNet<T>::attention(const DiffTensor<T>& x,
                                  const DiffTensor<T>& q_src,
                                  const DiffTensor<T>& k_src, Mode mode,
                                  Rng& rng, Tape<T>* tape) const {
  const std::size_t C = config_.channels;
  if (x.rows() % C != 0 || x.cols() != config_.lookback) {
    throw DimensionError("attention input " + x.shape_string() +
                         " is not a stack of " + std::to_string(C) + "x" +
                         std::to_string(config_.lookback) + " samples");
  }
  const double width = config_.scale_by_head_dim
                           ? static_cast<double>(config_.head_width())
                           : static_cast<double>(config_.lookback);
  const T inv_scale = static_cast<T>(1.0 / std::sqrt(width));
  std::vector<DiffTensor<T>> heads;
  heads.reserve(config_.heads);
  for (std::size_t h = 0; h < config_.heads; ++h) {
    auto q = linear_apply(q_src, w_query_[h], tape);
    auto k = linear_apply(k_src, w_key_[h], tape);
    auto v = linear_apply(x, w_value_[h], tape);
    auto scores = scale(block_matmul_nt(q, k, C, tape), inv_scale, tape);
    auto weights = softmax_rows(scores, tape);
    weights = dropout(weights, config_.attn_dropout, mode, rng, tape);
    heads.push_back(block_matmul(weights, v, C, tape));
  }
  return matmul(concat_cols(heads, tape), w_out_, tape);
}

template <typename T>
DiffTensor<T> TQNet<T>::tq_mha(const DiffTensor<T>& x,
                               const DiffTensor<T>& q_src, Mode mode, Rng& rng,
                               Tape<T>* tape) const {
  return add(attention(x, q_src, x, mode, rng, tape), x, tape);
}

template <typename T>
DiffTensor<T> TQNet<T>::forward(const DiffTensor<T>& x,
                                std::span<const std::size_t> starts, Mode mode,
                                Rng& rng, Tape<T>* tape) const {
  const std::size_t C = config_.channels;
  if (x.cols() != config_.lookback || x.rows() != starts.size() * C) {
    throw DimensionError("forward: input " + x.shape_string() + " does not hold " +
                         std::to_string(starts.size()) + " samples of " +
                         std::to_string(C) + "x" + std::to_string(config_.lookback));
  }
  const double eps = config_.norm_eps;
  InstanceNormResult<T> stats;
  DiffTensor<T> h = x;
  if (config_.use_instance_norm) {
    stats = instance_norm(x, eps);
    h = stats.normalized;
  }
  require_finite(h, mode, "instance_norm");

  DiffTensor<T> tq;
  if (variant_.tq_enabled) tq = tq_.segments(starts, config_.lookback, tape);

  if (variant_.mha_enabled) {
    const DiffTensor<T>& q_src = variant_.q_source == Source::kTQ ? tq : h;
    const DiffTensor<T>& k_src = variant_.k_source == Source::kTQ ? tq : h;
    h = add(attention(h, q_src, k_src, mode, rng, tape), h, tape);
    require_finite(h, mode, "tq_mha");
  } else if (variant_.tq_enabled) {
    h = add(h, tq, tape);
  }

  auto hidden = linear_apply(h, proj_in_.weight, &proj_in_.bias, tape);
  require_finite(hidden, mode, "proj_in");
  auto inner = gelu(linear_apply(hidden, fc1_.weight, &fc1_.bias, tape), tape);
  auto mlp = add(linear_apply(inner, fc2_.weight, &fc2_.bias, tape), hidden, tape);
  require_finite(mlp, mode, "mlp");
  auto y = linear_apply(dropout(mlp, config_.out_dropout, mode, rng, tape),
                        proj_out_.weight, &proj_out_.bias, tape);
  require_finite(y, mode, "proj_out");
  if (config_.use_instance_norm) {
    y = instance_denorm(y, std::span<const T>(stats.mean), std::span<const T>(stats.var), eps, tape);
    require_finite(y, mode, "instance_denorm");
  }
  return y;
}

template <typename T>
DiffTensor<T> TQNet<T>::forward(const DiffTensor<T>& x, std::size_t start,
                                Mode mode, Rng& rng, Tape<T>* tape) const {
  const std::size_t starts[] = {start};
  return forward(x, std::span<const std::size_t>(starts), mode, rng, tape);
}

template class TQBank<float>;
template class TQBank<double>;
template class TQNet<float>;
template class TQNet<double>;

template InstanceNormResult<float> instance_norm(const DiffTensor<float>&, double);
template InstanceNormResult<double> instance_norm(const DiffTensor<double>&, double);
template DiffTensor<float> instance_denorm(const DiffTensor<float>&, std::span<const float>,
                                           std::span<const float>, double, Tape<float>*);
template DiffTensor<double> instance_denorm(const DiffTensor<double>&, std::span<const double>,
                                            std::span<const double>, double, Tape<double>*);

}  // namespace tqnet
