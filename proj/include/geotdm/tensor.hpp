#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace geotdm {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor owning its storage.
template <class S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), S(0)) {}
  Tensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
      throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, S v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }
  static Tensor ones(Shape shape) { return full(std::move(shape), S(1)); }
  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  const Shape& shape() const { return shape_; }
  int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  S& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const S& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  S& at(std::initializer_list<int64_t> idx) { return data_[static_cast<size_t>(offset(idx))]; }
  const S& at(std::initializer_list<int64_t> idx) const {
    return data_[static_cast<size_t>(offset(idx))];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw std::invalid_argument("reshape from " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  template <class T2>
  Tensor<T2> cast() const {
    std::vector<T2> out(data_.size());
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T2>(data_[i]);
    return Tensor<T2>(shape_, std::move(out));
  }

  const std::vector<S>& vec() const { return data_; }

 private:
  int64_t offset(std::initializer_list<int64_t> idx) const {
    int64_t off = 0;
    size_t k = 0;
    for (int64_t i : idx) {
      off = off * shape_[k] + i;
      ++k;
    }
    return off;
  }

  Shape shape_;
  std::vector<S> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace geotdm
