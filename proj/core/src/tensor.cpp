#include "tqnet/tensor.hpp"

#include <algorithm>

namespace tqnet {

template <typename T>
DiffTensor<T>::DiffTensor(std::size_t rows, std::size_t cols,
                          bool requires_grad)
    : data_(std::make_shared<Storage>()) {
  data_->rows = rows;
  data_->cols = cols;
  data_->values.assign(rows * cols, T{0});
  data_->requires_grad = requires_grad;
}

template <typename T>
DiffTensor<T>::DiffTensor(std::size_t rows, std::size_t cols,
                          std::vector<T> values, bool requires_grad)
    : data_(std::make_shared<Storage>()) {
  if (values.size() != rows * cols) {
    throw DimensionError("tensor of shape " + std::to_string(rows) + "x" +
                         std::to_string(cols) + " given " +
                         std::to_string(values.size()) + " values");
  }
  data_->rows = rows;
  data_->cols = cols;
  data_->values.assign(values.begin(), values.end());
  data_->requires_grad = requires_grad;
}

template <typename T>
std::string DiffTensor<T>::shape_string() const {
  return "[" + std::to_string(rows()) + "x" + std::to_string(cols()) + "]";
}

template <typename T>
T DiffTensor<T>::item() const {
  if (size() != 1) {
    throw DimensionError("item() requires a 1x1 tensor, got " +
                         shape_string());
  }
  return data_->values[0];
}

template <typename T>
std::span<T> DiffTensor<T>::grad() {
  if (data_->grad.size() != data_->values.size()) {
    data_->grad.assign(data_->values.size(), T{0});
  }
  return data_->grad;
}

template <typename T>
void DiffTensor<T>::zero_grad() noexcept {
  std::fill(data_->grad.begin(), data_->grad.end(), T{0});
}

template <typename T>
DiffTensor<T> DiffTensor<T>::clone() const {
  DiffTensor out(rows(), cols(), requires_grad());
  out.data_->values = data_->values;
  if (has_grad()) out.data_->grad = data_->grad;
  return out;
}

template <typename T>
void Tape<T>::backward(DiffTensor<T>& loss) {
  if (ops_.empty()) {
    throw TapeError("backward called on an empty tape (no forward recorded)");
  }
  if (loss.size() != 1) {
    throw TapeError("backward requires a scalar loss, got " +
                    loss.shape_string());
  }
  loss.grad()[0] += T{1};
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

template class DiffTensor<float>;
template class DiffTensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace tqnet
