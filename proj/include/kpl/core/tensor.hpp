#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kpl {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

/// Dense row-major n-d array over an Eigen buffer. The shape is metadata;
/// ops view the flat storage through Eigen maps at whatever 2-d layout
/// they need.
template <class S>
class Tensor {
 public:
  using Scalar = S;
  using Array = Eigen::Array<S, Eigen::Dynamic, 1>;
  using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_ = Array::Zero(shape_numel(shape_));
  }
  Tensor(Shape shape, S fill) : shape_(std::move(shape)) {
    data_ = Array::Constant(shape_numel(shape_), fill);
  }
  Tensor(Shape shape, std::vector<S> values) : shape_(std::move(shape)) {
    if ((int64_t)values.size() != shape_numel(shape_))
      throw std::invalid_argument("Tensor: value count does not match shape " + shape_str(shape_));
    data_ = Eigen::Map<const Array>(values.data(), (Eigen::Index)values.size());
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, S v) { return Tensor(std::move(s), v); }

  /// Uninitialized storage; for outputs that are fully overwritten.
  static Tensor uninit(Shape s) {
    Tensor t;
    t.shape_ = std::move(s);
    t.data_.resize(shape_numel(t.shape_));
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return (int)shape_.size(); }
  int dim(int i) const { return shape_[(size_t)i]; }
  int64_t size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  S& operator[](int64_t i) { return data_[(Eigen::Index)i]; }
  S operator[](int64_t i) const { return data_[(Eigen::Index)i]; }

  Eigen::Map<Array> array() { return {data_.data(), data_.size()}; }
  Eigen::Map<const Array> array() const { return {data_.data(), data_.size()}; }

  /// Row-major matrix view of the flat buffer.
  Eigen::Map<MatRM> mat(int rows, int cols) {
    check_view(rows, cols);
    return {data_.data(), rows, cols};
  }
  Eigen::Map<const MatRM> mat(int rows, int cols) const {
    check_view(rows, cols);
    return {data_.data(), rows, cols};
  }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != size())
      throw std::invalid_argument("Tensor::reshaped: numel mismatch " + shape_str(shape_) + " -> " + shape_str(s));
    Tensor out = *this;
    out.shape_ = std::move(s);
    return out;
  }

  void set_zero() { data_.setZero(); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  void check_view(int rows, int cols) const {
    if ((int64_t)rows * cols != size())
      throw std::logic_error("Tensor::mat: view " + std::to_string(rows) + "x" + std::to_string(cols) +
                             " over " + shape_str(shape_));
  }

  Shape shape_;
  Array data_;
};

}  // namespace kpl
