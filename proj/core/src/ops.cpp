#include "tqnet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace tqnet {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<MatR<T>>;
template <typename T>
using CMap = Eigen::Map<const MatR<T>>;

template <typename T>
CMap<T> view(const DiffTensor<T>& t) {
  return CMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                 static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
Map<T> view(DiffTensor<T>& t) {
  return Map<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
Map<T> grad_view(DiffTensor<T>& t) {
  return Map<T>(t.grad().data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
CMap<T> const_grad_view(const DiffTensor<T>& t) {
  return CMap<T>(t.grad().data(), static_cast<Eigen::Index>(t.rows()),
                 static_cast<Eigen::Index>(t.cols()));
}

template <typename T, typename... Ts>
bool tracks(Tape<T>* tape, const Ts&... inputs) {
  return tape != nullptr && (inputs.requires_grad() || ...);
}

[[noreturn]] void shape_error(const char* op, const std::string& a,
                              const std::string& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + a +
                       " and " + b);
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

template <typename T>
DiffTensor<T> matmul(const DiffTensor<T>& a, const DiffTensor<T>& b,
                     Tape<T>* tape) {
  if (a.cols() != b.rows()) shape_error("matmul", a.shape_string(), b.shape_string());
  DiffTensor<T> out(a.rows(), b.cols(), tracks(tape, a, b));
  view(out).noalias() = view(a) * view(b);
  if (out.requires_grad()) {
    tape->record([a = a, b = b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = const_grad_view(std::as_const(out));
      if (a.requires_grad()) grad_view(a).noalias() += g * view(std::as_const(b)).transpose();
      if (b.requires_grad()) grad_view(b).noalias() += view(std::as_const(a)).transpose() * g;
    });
  }
  return out;
}

template <typename T>
DiffTensor<T> linear_apply(const DiffTensor<T>& x, const DiffTensor<T>& weight,
                           const DiffTensor<T>* bias, Tape<T>* tape) {
  if (x.cols() != weight.rows()) {
    shape_error("linear_apply", x.shape_string(), weight.shape_string());
  }
  if (bias != nullptr && (bias->rows() != 1 || bias->cols() != weight.cols())) {
    shape_error("linear_apply bias", weight.shape_string(), bias->shape_string());
  }
  const bool bias_grad = bias != nullptr && bias->requires_grad();
  DiffTensor<T> out(x.rows(), weight.cols(),
                    tape != nullptr && (x.requires_grad() ||
                                        weight.requires_grad() || bias_grad));
  auto o = view(out);
  o.noalias() = view(x) * view(weight);
  if (bias != nullptr) o.rowwise() += view(*bias).row(0);
  if (out.requires_grad()) {
    DiffTensor<T> b = bias != nullptr ? *bias : DiffTensor<T>();
    const bool has_bias = bias != nullptr;
    tape->record([x = x, weight = weight, b = b, has_bias, out]() mutable {
      if (!out.has_grad()) return;
      auto g = const_grad_view(std::as_const(out));
      if (x.requires_grad()) grad_view(x).noalias() += g * view(std::as_const(weight)).transpose();
      if (weight.requires_grad()) grad_view(weight).noalias() += view(std::as_const(x)).transpose() * g;
      if (has_bias && b.requires_grad()) grad_view(b).row(0) += g.colwise().sum();
    });
  }
  return out;
}

template <typename T>
DiffTensor<T> add(const DiffTensor<T>& a, const DiffTensor<T>& b,
                  Tape<T>* tape) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    shape_error("add", a.shape_string(), b.shape_string());
  }
  DiffTensor<T> out(a.rows(), a.cols(), tracks(tape, a, b));
  view(out) = view(a) + view(b);
  if (out.requires_grad()) {
    tape->record([a = a, b = b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = const_grad_view(std::as_const(out));
      if (a.requires_grad()) grad_view(a) += g;
      if (b.requires_grad()) grad_view(b) += g;
    });
  }
  return out;
}

template <typename T>
DiffTensor<T> scale(const DiffTensor<T>& x, T factor, Tape<T>* tape) {
  DiffTensor<T> out(x.rows(), x.cols(), tracks(tape, x));
  view(out) = view(x) * factor;
  if (out.requires_grad()) {
    tape->record([x = x, factor, out]() mutable {
      if (!out.has_grad()) return;
      grad_view(x) += const_grad_view(std::as_const(out)) * factor;
    });
  }
  return out;
}

template <typename T>
DiffTensor<T> softmax_rows(const DiffTensor<T>& x, Tape<T>* tape) {
  if (x.cols() == 0) throw DimensionError("softmax_rows: zero columns in " + x.shape_string());
  DiffTensor<T> out(x.rows(), x.cols(), tracks(tape, x));
  const std::size_t cols = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const T* in = x.data() + r * cols;
    T* o = out.data() + r * cols;
    T mx = in[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    if (std::isnan(mx)) mx = T{0};
    T sum{0};
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (std::size_t c = 0; c < cols; ++c) o[c] /= sum;
  }
  if (out.requires_grad()) {
    tape->record([x = x, out, cols]() mutable {
      if (!out.has_grad()) return;
      auto gx = x.grad();
      auto gy = std::as_const(out).grad();
      const T* y = std::as_const(out).data();
      for (std::size_t r = 0; r < out.rows(); ++r) {
        const std::size_t base = r * cols;
        T dot{0};
        for (std::size_t c = 0; c < cols; ++c) dot += gy[base + c] * y[base + c];
        for (std::size_t c = 0; c < cols; ++c) gx[base + c] += y[base + c] * (gy[base + c] - dot);
      }
    });
  }
  return out;
}

template <typename T>
DiffTensor<T> gelu(const DiffTensor<T>& x, Tape<T>* tape) {
  DiffTensor<T> out(x.rows(), x.cols(), tracks(tape, x));
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = static_cast<double>(x.data()[i]);
    out.data()[i] = static_cast<T>(v * normal_cdf(v));
  }
  if (out.requires_grad()) {
    tape->record([x = x, out, n]() mutable {
      if (!out.has_grad()) return;
      auto gx = x.grad();
      auto gy = std::as_const(out).grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double v = static_cast<double>(x.data()[i]);
        const double d = normal_cdf(v) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
        gx[i] += static_cast<T>(d) * gy[i];
      }
    });
  }
  return out;
}

template <typename T>
DiffTensor<T> dropout(const DiffTensor<T>& x, double p, Mode mode, Rng& rng,
                      Tape<T>* tape) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ParameterError("dropout probability must lie in [0, 1), got " +
                         std::to_string(p));
  }
  if (mode == Mode::kEval || p == 0.0) return x;
  const std::size_t n = x.size();
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(n);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) mask[i] = unif(rng) < p ? T{0} : keep_scale;
  DiffTensor<T> out(x.rows(), x.cols(), tracks(tape, x));
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * mask[i];
  if (out.requires_grad()) {
    tape->record([x = x, out, mask = std::move(mask)]() mutable {
      if (!out.has_grad()) return;
      auto gx = x.grad();
      auto gy = std::as_const(out).grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * mask[i];
    });
  }
  return out;
}

template <typename T>
DiffTensor<T> periodic_segments(const DiffTensor<T>& bank,
                                std::span<const std::size_t> starts,
                                std::size_t length, Tape<T>* tape) {
  const std::size_t period = bank.cols();
  const std::size_t channels = bank.rows();
  if (period == 0) throw DimensionError("periodic_segments: empty bank " + bank.shape_string());
  DiffTensor<T> out(starts.size() * channels, length, tracks(tape, bank));
  for (std::size_t s = 0; s < starts.size(); ++s) {
    const std::size_t phase = starts[s] % period;
    for (std::size_t c = 0; c < channels; ++c) {
      T* o = out.data() + (s * channels + c) * length;
      const T* src = bank.data() + c * period;
      for (std::size_t j = 0; j < length; ++j) o[j] = src[(phase + j) % period];
    }
  }
  if (out.requires_grad()) {
    std::vector<std::size_t> phases(starts.size());
    for (std::size_t s = 0; s < starts.size(); ++s) phases[s] = starts[s] % period;
    tape->record([bank = bank, out, phases = std::move(phases), length, period, channels]() mutable {
      if (!out.has_grad()) return;
      auto gb = bank.grad();
      auto go = std::as_const(out).grad();
      for (std::size_t s = 0; s < phases.size(); ++s) {
        for (std::size_t c = 0; c < channels; ++c) {
          const T* g = go.data() + (s * channels + c) * length;
          T* dst = gb.data() + c * period;
          for (std::size_t j = 0; j < length; ++j) dst[(phases[s] + j) % period] += g[j];
        }
      }
    });
  }
  return out;
}

template <typename T>
DiffTensor<T> block_matmul_nt(const DiffTensor<T>& a, const DiffTensor<T>& b,
                              std::size_t block, Tape<T>* tape) {
  if (block == 0 || a.rows() != b.rows() || a.cols() != b.cols() ||
      a.rows() % block != 0) {
    shape_error("block_matmul_nt", a.shape_string(), b.shape_string());
  }
  const auto nblocks = static_cast<Eigen::Index>(a.rows() / block);
  const auto bk = static_cast<Eigen::Index>(block);
  DiffTensor<T> out(a.rows(), block, tracks(tape, a, b));
  auto o = view(out);
  auto av = view(a);
  auto bv = view(b);
  for (Eigen::Index i = 0; i < nblocks; ++i) {
    o.middleRows(i * bk, bk).noalias() =
        av.middleRows(i * bk, bk) * bv.middleRows(i * bk, bk).transpose();
  }
  if (out.requires_grad()) {
    tape->record([a = a, b = b, out, nblocks, bk]() mutable {
      if (!out.has_grad()) return;
      auto g = const_grad_view(std::as_const(out));
      auto av = view(std::as_const(a));
      auto bv = view(std::as_const(b));
      for (Eigen::Index i = 0; i < nblocks; ++i) {
        auto gi = g.middleRows(i * bk, bk);
        if (a.requires_grad()) grad_view(a).middleRows(i * bk, bk).noalias() += gi * bv.middleRows(i * bk, bk);
        if (b.requires_grad()) grad_view(b).middleRows(i * bk, bk).noalias() += gi.transpose() * av.middleRows(i * bk, bk);
      }
    });
  }
  return out;
}

template <typename T>
DiffTensor<T> block_matmul(const DiffTensor<T>& p, const DiffTensor<T>& v,
                           std::size_t block, Tape<T>* tape) {
  if (block == 0 || p.cols() != block || p.rows() != v.rows() ||
      p.rows() % block != 0) {
    shape_error("block_matmul", p.shape_string(), v.shape_string());
  }
  const auto nblocks = static_cast<Eigen::Index>(p.rows() / block);
  const auto bk = static_cast<Eigen::Index>(block);
  DiffTensor<T> out(v.rows(), v.cols(), tracks(tape, p, v));
  auto o = view(out);
  auto pv = view(p);
  auto vv = view(v);
  for (Eigen::Index i = 0; i < nblocks; ++i) {
    o.middleRows(i * bk, bk).noalias() =
        pv.middleRows(i * bk, bk) * vv.middleRows(i * bk, bk);
  }
  if (out.requires_grad()) {
    tape->record([p = p, v = v, out, nblocks, bk]() mutable {
      if (!out.has_grad()) return;
      auto g = const_grad_view(std::as_const(out));
      auto pv = view(std::as_const(p));
      auto vv = view(std::as_const(v));
      for (Eigen::Index i = 0; i < nblocks; ++i) {
        auto gi = g.middleRows(i * bk, bk);
        if (p.requires_grad()) grad_view(p).middleRows(i * bk, bk).noalias() += gi * vv.middleRows(i * bk, bk).transpose();
        if (v.requires_grad()) grad_view(v).middleRows(i * bk, bk).noalias() += pv.middleRows(i * bk, bk).transpose() * gi;
      }
    });
  }
  return out;
}

template <typename T>
DiffTensor<T> concat_cols(const std::vector<DiffTensor<T>>& parts,
                          Tape<T>* tape) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  std::size_t cols = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) {
      shape_error("concat_cols", parts.front().shape_string(), p.shape_string());
    }
    cols += p.cols();
    any_grad = any_grad || p.requires_grad();
  }
  DiffTensor<T> out(parts.front().rows(), cols, tape != nullptr && any_grad);
  auto o = view(out);
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    const auto w = static_cast<Eigen::Index>(p.cols());
    o.middleCols(offset, w) = view(p);
    offset += w;
  }
  if (out.requires_grad()) {
    tape->record([parts = parts, out]() mutable {
      if (!out.has_grad()) return;
      auto g = const_grad_view(std::as_const(out));
      Eigen::Index offset = 0;
      for (auto& p : parts) {
        const auto w = static_cast<Eigen::Index>(p.cols());
        if (p.requires_grad()) grad_view(p) += g.middleCols(offset, w);
        offset += w;
      }
    });
  }
  return out;
}

template <typename T>
DiffTensor<T> row_affine(const DiffTensor<T>& x, std::span<const T> row_scale,
                         std::span<const T> row_shift, Tape<T>* tape) {
  if (row_scale.size() != x.rows() || row_shift.size() != x.rows()) {
    throw DimensionError("row_affine: " + x.shape_string() + " with " +
                         std::to_string(row_scale.size()) + " scales and " +
                         std::to_string(row_shift.size()) + " shifts");
  }
  DiffTensor<T> out(x.rows(), x.cols(), tracks(tape, x));
  const std::size_t cols = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out.data()[r * cols + c] = x.data()[r * cols + c] * row_scale[r] + row_shift[r];
    }
  }
  if (out.requires_grad()) {
    std::vector<T> sc(row_scale.begin(), row_scale.end());
    tape->record([x = x, out, sc = std::move(sc), cols]() mutable {
      if (!out.has_grad()) return;
      auto gx = x.grad();
      auto gy = std::as_const(out).grad();
      for (std::size_t r = 0; r < sc.size(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += gy[r * cols + c] * sc[r];
      }
    });
  }
  return out;
}

template <typename T>
DiffTensor<T> select_rows(const DiffTensor<T>& x,
                          std::span<const std::size_t> rows, Tape<T>* tape) {
  const std::size_t cols = x.cols();
  for (std::size_t r : rows) {
    if (r >= x.rows()) {
      throw DimensionError("select_rows: row " + std::to_string(r) +
                           " out of range for " + x.shape_string());
    }
  }
  DiffTensor<T> out(rows.size(), cols, tracks(tape, x));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(x.data() + rows[i] * cols, cols, out.data() + i * cols);
  }
  if (out.requires_grad()) {
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    tape->record([x = x, out, idx = std::move(idx), cols]() mutable {
      if (!out.has_grad()) return;
      auto gx = x.grad();
      auto gy = std::as_const(out).grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t c = 0; c < cols; ++c) gx[idx[i] * cols + c] += gy[i * cols + c];
      }
    });
  }
  return out;
}

template <typename T>
DiffTensor<T> mse_loss(const DiffTensor<T>& pred, const DiffTensor<T>& target,
                       Tape<T>* tape) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    shape_error("mse_loss", pred.shape_string(), target.shape_string());
  }
  if (pred.size() == 0) throw DimensionError("mse_loss: empty prediction");
  DiffTensor<T> out(1, 1, tracks(tape, pred));
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.data()[i]) - static_cast<double>(target.data()[i]);
    acc += d * d;
  }
  const double n = static_cast<double>(pred.size());
  out.data()[0] = static_cast<T>(acc / n);
  if (out.requires_grad()) {
    tape->record([pred = pred, target, out, n]() mutable {
      if (!out.has_grad()) return;
      const T g = std::as_const(out).grad()[0];
      auto gp = pred.grad();
      const T k = static_cast<T>(2.0 / n) * g;
      for (std::size_t i = 0; i < gp.size(); ++i) {
        gp[i] += k * (pred.data()[i] - target.data()[i]);
      }
    });
  }
  return out;
}

#define TQNET_INSTANTIATE_OPS(T)                                                       \
  template DiffTensor<T> matmul(const DiffTensor<T>&, const DiffTensor<T>&, Tape<T>*); \
  template DiffTensor<T> linear_apply(const DiffTensor<T>&, const DiffTensor<T>&,      \
                                      const DiffTensor<T>*, Tape<T>*);                 \
  template DiffTensor<T> add(const DiffTensor<T>&, const DiffTensor<T>&, Tape<T>*);    \
  template DiffTensor<T> scale(const DiffTensor<T>&, T, Tape<T>*);                     \
  template DiffTensor<T> softmax_rows(const DiffTensor<T>&, Tape<T>*);                 \
  template DiffTensor<T> gelu(const DiffTensor<T>&, Tape<T>*);                         \
  template DiffTensor<T> dropout(const DiffTensor<T>&, double, Mode, Rng&, Tape<T>*);  \
  template DiffTensor<T> periodic_segments(const DiffTensor<T>&,                       \
                                           std::span<const std::size_t>, std::size_t,  \
                                           Tape<T>*);                                  \
  template DiffTensor<T> block_matmul_nt(const DiffTensor<T>&, const DiffTensor<T>&,   \
                                         std::size_t, Tape<T>*);                       \
  template DiffTensor<T> block_matmul(const DiffTensor<T>&, const DiffTensor<T>&,      \
                                      std::size_t, Tape<T>*);                          \
  template DiffTensor<T> concat_cols(const std::vector<DiffTensor<T>>&, Tape<T>*);     \
  template DiffTensor<T> row_affine(const DiffTensor<T>&, std::span<const T>,          \
                                    std::span<const T>, Tape<T>*);                     \
  template DiffTensor<T> select_rows(const DiffTensor<T>&,                             \
                                     std::span<const std::size_t>, Tape<T>*);          \
  template DiffTensor<T> mse_loss(const DiffTensor<T>&, const DiffTensor<T>&, Tape<T>*);

TQNET_INSTANTIATE_OPS(float)
TQNET_INSTANTIATE_OPS(double)

#undef TQNET_INSTANTIATE_OPS

}  // namespace tqnet
