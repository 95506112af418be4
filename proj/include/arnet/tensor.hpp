#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "arnet/common.hpp"

namespace arnet {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major n-d array of Real.  Rank is at most 4 in practice
// (batch, channel, height, width); rank-1/2 tensors are used for labels,
// logits and fully connected activations.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Real fill);
  Tensor(Shape shape, std::vector<Real> data);

  static Tensor scalar(Real v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  Real& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  Real operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // Index helpers for the common 4-d layout.
  Real& at4(int b, int c, int h, int w) {
    return data_[static_cast<std::size_t>(
        ((static_cast<std::int64_t>(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  Real at4(int b, int c, int h, int w) const {
    return data_[static_cast<std::size_t>(
        ((static_cast<std::int64_t>(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  Real& at2(int r, int c) {
    return data_[static_cast<std::size_t>(static_cast<std::int64_t>(r) * shape_[1] + c)];
  }
  Real at2(int r, int c) const {
    return data_[static_cast<std::size_t>(static_cast<std::int64_t>(r) * shape_[1] + c)];
  }

  void fill(Real v);
  Tensor reshaped(Shape s) const;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

}  // namespace arnet
