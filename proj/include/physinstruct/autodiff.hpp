#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "physinstruct/tensor.hpp"

namespace physinstruct {

/// Closed catalogue of differentiable operations.
enum class OpKind {
  leaf,
  add,
  sub,
  scale,
  mul,
  mul_const,
  add_const,
  scale_samples,
  conv2d,
  affine,
  silu,
  downsample2,
  upsample2,
  sum,
  mean,
  sq_diff_sum,
  stop_gradient,
  shift,
  slice_channels,
  concat_channels,
  add_channel_bias,
};

std::string_view op_name(OpKind kind);

/// Non-tensor arguments of an operation. Only the fields used by a kind are read.
struct OpAttrs {
  double alpha = 1.0;               // scale
  std::vector<double> per_sample;   // scale_samples
  std::optional<Tensor> constant;   // mul_const, add_const
  Index dy = 0;                     // shift
  Index dx = 0;                     // shift
  bool periodic = false;            // shift
  Index begin = 0;                  // slice_channels
  Index end = 0;                    // slice_channels
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Append-only record of a forward computation. Nodes are stored in creation order,
/// which is a topological order; backward visits each node at most once.
class Tape {
 public:
  /// Receives the upstream gradient and accumulators for each input
  /// (nullptr where the input does not require a gradient).
  using BackwardFn = std::function<void(const Tensor& upstream, std::span<Tensor* const> input_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var variable(Tensor value) { return leaf(std::move(value), true); }

  Var record(OpKind kind, std::vector<int> inputs, Tensor value, BackwardFn fn);

  /// Reverse sweep from a scalar root. Gradients of earlier sweeps are discarded.
  void backward(Var root);

  /// Gradient of the last backward root with respect to `v` (zeros if unreached).
  Tensor grad(Var v) const;
  bool has_grad(Var v) const;

  const Tensor& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  OpKind kind(int id) const { return nodes_[id].kind; }
  const std::vector<int>& inputs(int id) const { return nodes_[id].inputs; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind kind;
    std::vector<int> inputs;
    Tensor value;
    bool requires_grad;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
};

// Catalogue. Every function records one node and checks its shape rules.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double alpha);
Var mul(Var a, Var b);
/// Elementwise product with a constant; the constant may omit the batch extent (leading 1).
Var mul_const(Var a, const Tensor& c);
Var add_const(Var a, const Tensor& c);
/// Multiplies item n of the leading axis by factors[n].
Var scale_samples(Var a, std::span<const double> factors);
/// Same-padding 2D convolution. x: (B,Cin,H,W), w: (Cout,Cin,K,K) with K in {1,3}, b: (Cout).
Var conv2d(Var x, Var w, Var b);
/// x: (B,F), w: (G,F), b: (G) -> (B,G).
Var affine(Var x, Var w, Var b);
/// x * sigmoid(x).
Var silu(Var x);
/// Nearest-neighbour decimation by 2 in height and width.
Var downsample2(Var x);
/// Nearest-neighbour replication by 2 in height and width.
Var upsample2(Var x);
Var sum(Var x);
Var mean(Var x);
/// Sum of (a - b)^2 as a scalar.
Var sq_diff_sum(Var a, Var b);
/// Identity forward, zero gradient upstream.
Var stop_gradient(Var x);
/// out(y, x) = in(y - dy, x - dx) over the last two axes, wrapping or zero-filling.
Var shift(Var x, Index dy, Index dx, bool periodic);
Var slice_channels(Var x, Index begin, Index end);
Var concat_channels(std::span<const Var> parts);
/// x: (B,C,H,W), bias: (B,C) broadcast over H and W.
Var add_channel_bias(Var x, Var bias);

/// Generic entry point dispatching on `kind`.
Var forward_op(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs = {});

}  // namespace physinstruct
