#include "hgru/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hgru {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {
void check_dims(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}
}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (data_.size() != shape_numel(shape_)) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
  }
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor of shape " + shape_str(shape_));
  return data_[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

template <typename T>
void require_chw(const Tensor<T>& t, const char* what) {
  if (t.rank() != 3) {
    throw ShapeError(std::string(what) + ": expected [C,H,W], got " + shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
T l2_norm(const Tensor<T>& a) {
  T s = 0;
  for (auto v : a.data()) s += v * v;
  return std::sqrt(s);
}

template <typename T>
bool all_finite(const Tensor<T>& a) {
  for (auto v : a.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

#define HGRU_INSTANTIATE(T)                                                     \
  template class Tensor<T>;                                                     \
  template void require_chw<T>(const Tensor<T>&, const char*);                  \
  template void require_same_shape<T>(const Tensor<T>&, const Tensor<T>&, const char*); \
  template T max_abs_diff<T>(const Tensor<T>&, const Tensor<T>&);               \
  template T l2_norm<T>(const Tensor<T>&);                                      \
  template bool all_finite<T>(const Tensor<T>&);

HGRU_INSTANTIATE(float)
HGRU_INSTANTIATE(double)

}  // namespace hgru
