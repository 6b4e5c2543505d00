#pragma once

#include <cstddef>
#include <functional>
#include <new>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tqnet/errors.hpp"

namespace tqnet {

// Buffers start on a cache line so that vectorized kernels split work the
// same way wherever the allocator happens to place them. Without this, sums
// can differ in the last bit between two otherwise identical runs.
template <typename T>
struct CacheAligned {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  CacheAligned() = default;
  template <typename U>
  CacheAligned(const CacheAligned<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const CacheAligned<U>&) const noexcept { return true; }
};

// Dense row-major matrix carrying a value buffer and a lazily allocated
// gradient buffer of the same length. Copies share storage (handle
// semantics); use clone() for a deep copy.
template <typename T>
class DiffTensor {
 public:
  using value_type = T;

  DiffTensor() : DiffTensor(0, 0) {}
  DiffTensor(std::size_t rows, std::size_t cols, bool requires_grad = false);
  DiffTensor(std::size_t rows, std::size_t cols, std::vector<T> values,
             bool requires_grad = false);

  static DiffTensor zeros(std::size_t rows, std::size_t cols,
                          bool requires_grad = false) {
    return DiffTensor(rows, cols, requires_grad);
  }

  std::size_t rows() const noexcept { return data_->rows; }
  std::size_t cols() const noexcept { return data_->cols; }
  std::size_t size() const noexcept { return data_->values.size(); }
  std::string shape_string() const;

  std::span<T> values() noexcept { return data_->values; }
  std::span<const T> values() const noexcept { return data_->values; }
  T* data() noexcept { return data_->values.data(); }
  const T* data() const noexcept { return data_->values.data(); }

  T& operator()(std::size_t r, std::size_t c) {
    return data_->values[r * data_->cols + c];
  }
  T operator()(std::size_t r, std::size_t c) const {
    return data_->values[r * data_->cols + c];
  }
  // Value of a 1x1 tensor.
  T item() const;

  bool requires_grad() const noexcept { return data_->requires_grad; }
  void set_requires_grad(bool on) noexcept { data_->requires_grad = on; }

  bool has_grad() const noexcept { return !data_->grad.empty(); }
  // Allocates a zero-filled gradient buffer on first access.
  std::span<T> grad();
  std::span<const T> grad() const noexcept { return data_->grad; }
  void zero_grad() noexcept;

  DiffTensor clone() const;
  bool same_storage(const DiffTensor& other) const noexcept {
    return data_ == other.data_;
  }

 private:
  struct Storage {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T, CacheAligned<T>> values;
    std::vector<T, CacheAligned<T>> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> data_;
};

// Ordered record of backward closures. Each primitive that produces a tensor
// needing gradients appends one closure; backward() replays them in reverse.
// A tape must not be shared between threads.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(BackwardFn fn) { ops_.push_back(std::move(fn)); }
  std::size_t size() const noexcept { return ops_.size(); }
  bool empty() const noexcept { return ops_.empty(); }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse
  // execution order. Gradients accumulate into existing buffers.
  void backward(DiffTensor<T>& loss);
  void clear() noexcept { ops_.clear(); }

 private:
  std::vector<BackwardFn> ops_;
};

enum class Mode { kTrain, kEval };

// A parameter tensor with its stable checkpoint name.
template <typename T>
struct NamedTensor {
  std::string name;
  DiffTensor<T> tensor;
};

extern template class DiffTensor<float>;
extern template class DiffTensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace tqnet
