#pragma once

#include <array>
#include <initializer_list>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace physinstruct {

using Index = Eigen::Index;

/// Extents of a dense tensor, rank 0 (scalar) through 4 (batch, channel, height, width).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims);
  explicit Shape(const std::vector<Index>& dims);

  int rank() const { return rank_; }
  Index operator[](int axis) const { return dims_[axis]; }
  Index numel() const;
  std::vector<Index> dims() const { return {dims_.begin(), dims_.begin() + rank_}; }
  std::string str() const;

  /// Same shape with the leading extent replaced.
  Shape with_leading(Index n) const;

  friend bool operator==(const Shape& a, const Shape& b) {
    return a.rank_ == b.rank_ && a.dims_ == b.dims_;
  }

 private:
  std::array<Index, 4> dims_{0, 0, 0, 0};
  int rank_ = 0;
};

/// Dense row-major array of doubles with a shape. Plain value type.
struct Tensor {
  Shape shape;
  Eigen::ArrayXd data;

  Tensor() : shape{}, data(Eigen::ArrayXd::Zero(1)) {}
  explicit Tensor(const Shape& s);
  Tensor(const Shape& s, Eigen::ArrayXd values);
  Tensor(const Shape& s, std::initializer_list<double> values);

  static Tensor zeros(const Shape& s) { return Tensor(s); }
  static Tensor constant(const Shape& s, double value);
  static Tensor scalar(double value);

  Index numel() const { return data.size(); }
  double item() const;

  // NCHW accessors; only valid for rank-4 tensors.
  Index batch() const { return shape[0]; }
  Index channels() const { return shape[1]; }
  Index height() const { return shape[2]; }
  Index width() const { return shape[3]; }
  Index offset(Index n, Index c, Index y, Index x) const {
    return ((n * shape[1] + c) * shape[2] + y) * shape[3] + x;
  }
  double& operator()(Index n, Index c, Index y, Index x) { return data[offset(n, c, y, x)]; }
  double operator()(Index n, Index c, Index y, Index x) const { return data[offset(n, c, y, x)]; }

  bool all_finite() const { return data.isFinite().all(); }
};

/// Stack equally shaped tensors along a new leading axis (rank 3 -> rank 4).
Tensor stack(const std::vector<Tensor>& items);
/// Item `n` of a rank-4 tensor as a rank-3 tensor.
Tensor unstack(const Tensor& batch, Index n);
/// Rows [begin, end) of the leading axis.
Tensor slice_batch(const Tensor& t, Index begin, Index end);
/// Channels [begin, end) of a rank-4 (or rank-3) tensor.
Tensor slice_channels(const Tensor& t, Index begin, Index end);

}  // namespace physinstruct
