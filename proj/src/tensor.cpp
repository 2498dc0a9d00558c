#include "physinstruct/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "physinstruct/errors.hpp"

namespace physinstruct {

Shape::Shape(std::initializer_list<Index> dims) : Shape(std::vector<Index>(dims)) {}

Shape::Shape(const std::vector<Index>& dims) {
  if (dims.size() > 4) throw ContractViolation("tensor rank must be <= 4, got " + std::to_string(dims.size()));
  for (auto d : dims) {
    if (d < 0) throw ContractViolation("negative tensor extent");
  }
  std::copy(dims.begin(), dims.end(), dims_.begin());
  rank_ = static_cast<int>(dims.size());
}

Index Shape::numel() const {
  Index n = 1;
  for (int i = 0; i < rank_; ++i) n *= dims_[i];
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (int i = 0; i < rank_; ++i) os << (i ? "," : "") << dims_[i];
  os << ']';
  return os.str();
}

Shape Shape::with_leading(Index n) const {
  auto d = dims();
  if (d.empty()) throw ContractViolation("scalar shape has no leading extent");
  d[0] = n;
  return Shape(d);
}

Tensor::Tensor(const Shape& s) : shape(s), data(Eigen::ArrayXd::Zero(s.numel())) {}

Tensor::Tensor(const Shape& s, Eigen::ArrayXd values) : shape(s), data(std::move(values)) {
  if (data.size() != s.numel()) {
    throw ContractViolation("tensor data length " + std::to_string(data.size()) + " does not match shape " + s.str());
  }
}

Tensor::Tensor(const Shape& s, std::initializer_list<double> values) : shape(s), data(static_cast<Index>(values.size())) {
  if (data.size() != s.numel()) {
    throw ContractViolation("tensor data length " + std::to_string(data.size()) + " does not match shape " + s.str());
  }
  std::copy(values.begin(), values.end(), data.begin());
}

Tensor Tensor::constant(const Shape& s, double value) {
  return Tensor(s, Eigen::ArrayXd::Constant(s.numel(), value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, Eigen::ArrayXd::Constant(1, value)); }

double Tensor::item() const {
  if (data.size() != 1) throw ContractViolation("item() on tensor of shape " + shape.str());
  return data[0];
}

Tensor stack(const std::vector<Tensor>& items) {
  if (items.empty()) throw ContractViolation("stack of zero tensors");
  const Shape& s = items.front().shape;
  std::vector<Index> dims{static_cast<Index>(items.size())};
  for (auto d : s.dims()) dims.push_back(d);
  Tensor out{Shape(dims)};
  const Index n = s.numel();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!(items[i].shape == s)) throw ContractViolation("stack: shape " + items[i].shape.str() + " vs " + s.str());
    out.data.segment(static_cast<Index>(i) * n, n) = items[i].data;
  }
  return out;
}

Tensor unstack(const Tensor& batch, Index n) {
  auto dims = batch.shape.dims();
  if (dims.empty() || n < 0 || n >= dims[0]) throw ContractViolation("unstack index out of range");
  dims.erase(dims.begin());
  Shape s(dims);
  return Tensor(s, batch.data.segment(n * s.numel(), s.numel()));
}

Tensor slice_batch(const Tensor& t, Index begin, Index end) {
  if (t.shape.rank() == 0 || begin < 0 || end > t.shape[0] || begin > end) {
    throw ContractViolation("slice_batch range out of bounds for " + t.shape.str());
  }
  const Index per = t.shape.numel() / std::max<Index>(t.shape[0], 1);
  return Tensor(t.shape.with_leading(end - begin), t.data.segment(begin * per, (end - begin) * per));
}

Tensor slice_channels(const Tensor& t, Index begin, Index end) {
  const int r = t.shape.rank();
  if (r != 3 && r != 4) throw ContractViolation("slice_channels needs rank 3 or 4, got " + t.shape.str());
  const int cax = r - 3;
  const Index c = t.shape[cax];
  if (begin < 0 || end > c || begin >= end) throw ContractViolation("slice_channels range out of bounds for " + t.shape.str());
  const Index plane = t.shape[r - 2] * t.shape[r - 1];
  const Index outer = r == 4 ? t.shape[0] : 1;
  auto dims = t.shape.dims();
  dims[cax] = end - begin;
  Tensor out{Shape(dims)};
  for (Index n = 0; n < outer; ++n) {
    out.data.segment(n * (end - begin) * plane, (end - begin) * plane) =
        t.data.segment((n * c + begin) * plane, (end - begin) * plane);
  }
  return out;
}

}  // namespace physinstruct
