#include "physinstruct/autodiff.hpp"

#include <cmath>
#include <string>

#include "physinstruct/errors.hpp"

namespace physinstruct {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

[[noreturn]] void shape_error(OpKind kind, const std::string& detail) {
  throw ContractViolation(std::string(op_name(kind)) + ": " + detail);
}

void require_same(OpKind kind, const Shape& a, const Shape& b) {
  if (!(a == b)) shape_error(kind, "extents " + a.str() + " and " + b.str() + " differ");
}

void require_rank(OpKind kind, const Shape& s, int rank) {
  if (s.rank() != rank) shape_error(kind, "expected rank " + std::to_string(rank) + ", got " + s.str());
}

// Broadcast rule for constants: identical shape, or identical apart from a leading 1.
bool broadcasts_over_batch(const Shape& value, const Shape& c) {
  if (value == c) return false;
  if (value.rank() == c.rank() && value.rank() > 0 && c[0] == 1 && c.with_leading(value[0]) == value) return true;
  return false;
}

Tape& same_tape(OpKind kind, std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const auto& v : vars) {
    if (!v.valid()) shape_error(kind, "uninitialized variable");
    if (t && &v.tape() != t) shape_error(kind, "operands live on different tapes");
    t = &v.tape();
  }
  return *t;
}

// Column buffer for one sample: (C*K*K) x (H*W), row-major.
void im2col(const double* in, Index c, Index h, Index w, Index k, double* cols) {
  const Index pad = k / 2;
  const Index hw = h * w;
  for (Index ci = 0; ci < c; ++ci) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        double* row = cols + ((ci * k + ky) * k + kx) * hw;
        for (Index y = 0; y < h; ++y) {
          const Index sy = y + ky - pad;
          for (Index x = 0; x < w; ++x) {
            const Index sx = x + kx - pad;
            row[y * w + x] = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? in[(ci * h + sy) * w + sx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, Index c, Index h, Index w, Index k, double* out) {
  const Index pad = k / 2;
  const Index hw = h * w;
  for (Index ci = 0; ci < c; ++ci) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const double* row = cols + ((ci * k + ky) * k + kx) * hw;
        for (Index y = 0; y < h; ++y) {
          const Index sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          for (Index x = 0; x < w; ++x) {
            const Index sx = x + kx - pad;
            if (sx >= 0 && sx < w) out[(ci * h + sy) * w + sx] += row[y * w + x];
          }
        }
      }
    }
  }
}

Tensor shifted(const Tensor& in, Index dy, Index dx, bool periodic) {
  const int r = in.shape.rank();
  const Index h = in.shape[r - 2];
  const Index w = in.shape[r - 1];
  const Index planes = in.numel() / (h * w);
  Tensor out(in.shape);
  for (Index p = 0; p < planes; ++p) {
    const double* src = in.data.data() + p * h * w;
    double* dst = out.data.data() + p * h * w;
    for (Index y = 0; y < h; ++y) {
      Index sy = y - dy;
      if (periodic) {
        sy = ((sy % h) + h) % h;
      } else if (sy < 0 || sy >= h) {
        continue;
      }
      for (Index x = 0; x < w; ++x) {
        Index sx = x - dx;
        if (periodic) {
          sx = ((sx % w) + w) % w;
        } else if (sx < 0 || sx >= w) {
          continue;
        }
        dst[y * w + x] = src[sy * w + sx];
      }
    }
  }
  return out;
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::scale: return "scale";
    case OpKind::mul: return "mul";
    case OpKind::mul_const: return "mul_const";
    case OpKind::add_const: return "add_const";
    case OpKind::scale_samples: return "scale_samples";
    case OpKind::conv2d: return "conv2d";
    case OpKind::affine: return "affine";
    case OpKind::silu: return "silu";
    case OpKind::downsample2: return "downsample2";
    case OpKind::upsample2: return "upsample2";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::sq_diff_sum: return "sq_diff_sum";
    case OpKind::stop_gradient: return "stop_gradient";
    case OpKind::shift: return "shift";
    case OpKind::slice_channels: return "slice_channels";
    case OpKind::concat_channels: return "concat_channels";
    case OpKind::add_channel_bias: return "add_channel_bias";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{OpKind::leaf, {}, std::move(value), requires_grad, {}});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(OpKind kind, std::vector<int> inputs, Tensor value, BackwardFn fn) {
  bool rg = false;
  if (kind != OpKind::stop_gradient) {
    for (int id : inputs) rg = rg || nodes_[id].requires_grad;
  }
  if (!rg) fn = nullptr;
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), rg, std::move(fn)});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw ContractViolation("backward: root belongs to another tape");
  if (root.value().numel() != 1) throw ContractViolation("backward: root must be scalar, got " + root.shape().str());
  grads_.assign(nodes_.size(), std::nullopt);
  grads_[root.id()] = Tensor::constant(root.shape(), 1.0);
  std::vector<Tensor*> slots;
  for (int id = root.id(); id >= 0; --id) {
    Node& node = nodes_[id];
    if (!grads_[id] || !node.requires_grad || !node.backward) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const int in = node.inputs[i];
      if (!nodes_[in].requires_grad) continue;
      if (!grads_[in]) grads_[in] = Tensor::zeros(nodes_[in].value.shape);
      slots[i] = &*grads_[in];
    }
    node.backward(*grads_[id], slots);
  }
}

Tensor Tape::grad(Var v) const {
  if (v.id() < static_cast<int>(grads_.size()) && grads_[v.id()]) return *grads_[v.id()];
  return Tensor::zeros(v.shape());
}

bool Tape::has_grad(Var v) const { return v.id() < static_cast<int>(grads_.size()) && grads_[v.id()].has_value(); }

Var add(Var a, Var b) {
  Tape& t = same_tape(OpKind::add, {a, b});
  require_same(OpKind::add, a.shape(), b.shape());
  Tensor out(a.shape(), a.value().data + b.value().data);
  return t.record(OpKind::add, {a.id(), b.id()}, std::move(out), [](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) gi[0]->data += g.data;
    if (gi[1]) gi[1]->data += g.data;
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(OpKind::sub, {a, b});
  require_same(OpKind::sub, a.shape(), b.shape());
  Tensor out(a.shape(), a.value().data - b.value().data);
  return t.record(OpKind::sub, {a.id(), b.id()}, std::move(out), [](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) gi[0]->data += g.data;
    if (gi[1]) gi[1]->data -= g.data;
  });
}

Var scale(Var a, double alpha) {
  Tape& t = same_tape(OpKind::scale, {a});
  Tensor out(a.shape(), alpha * a.value().data);
  return t.record(OpKind::scale, {a.id()}, std::move(out), [alpha](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) gi[0]->data += alpha * g.data;
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(OpKind::mul, {a, b});
  require_same(OpKind::mul, a.shape(), b.shape());
  Tensor out(a.shape(), a.value().data * b.value().data);
  return t.record(OpKind::mul, {a.id(), b.id()}, std::move(out), [a, b](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) gi[0]->data += g.data * b.value().data;
    if (gi[1]) gi[1]->data += g.data * a.value().data;
  });
}

Var mul_const(Var a, const Tensor& c) {
  Tape& t = same_tape(OpKind::mul_const, {a});
  const bool bc = broadcasts_over_batch(a.shape(), c.shape);
  if (!bc) require_same(OpKind::mul_const, a.shape(), c.shape);
  Tensor full = bc ? Tensor(a.shape(), c.data.replicate(a.shape()[0], 1)) : c;
  Tensor out(a.shape(), a.value().data * full.data);
  return t.record(OpKind::mul_const, {a.id()}, std::move(out),
                  [full = std::move(full)](const Tensor& g, std::span<Tensor* const> gi) {
                    if (gi[0]) gi[0]->data += g.data * full.data;
                  });
}

Var add_const(Var a, const Tensor& c) {
  Tape& t = same_tape(OpKind::add_const, {a});
  const bool bc = broadcasts_over_batch(a.shape(), c.shape);
  if (!bc) require_same(OpKind::add_const, a.shape(), c.shape);
  Tensor out(a.shape(), bc ? Eigen::ArrayXd(a.value().data + c.data.replicate(a.shape()[0], 1))
                           : Eigen::ArrayXd(a.value().data + c.data));
  return t.record(OpKind::add_const, {a.id()}, std::move(out), [](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) gi[0]->data += g.data;
  });
}

Var scale_samples(Var a, std::span<const double> factors) {
  Tape& t = same_tape(OpKind::scale_samples, {a});
  if (a.shape().rank() == 0 || static_cast<Index>(factors.size()) != a.shape()[0]) {
    shape_error(OpKind::scale_samples, "factor count " + std::to_string(factors.size()) + " vs extents " + a.shape().str());
  }
  const Index per = a.value().numel() / a.shape()[0];
  std::vector<double> f(factors.begin(), factors.end());
  Tensor out(a.shape());
  for (Index n = 0; n < a.shape()[0]; ++n) out.data.segment(n * per, per) = f[n] * a.value().data.segment(n * per, per);
  return t.record(OpKind::scale_samples, {a.id()}, std::move(out),
                  [f = std::move(f), per](const Tensor& g, std::span<Tensor* const> gi) {
                    if (!gi[0]) return;
                    for (std::size_t n = 0; n < f.size(); ++n) {
                      gi[0]->data.segment(n * per, per) += f[n] * g.data.segment(n * per, per);
                    }
                  });
}

Var conv2d(Var x, Var w, Var b) {
  Tape& t = same_tape(OpKind::conv2d, {x, w, b});
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  require_rank(OpKind::conv2d, xs, 4);
  require_rank(OpKind::conv2d, ws, 4);
  require_rank(OpKind::conv2d, b.shape(), 1);
  const Index batch = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
  const Index cout = ws[0], k = ws[2];
  if (ws[1] != cin || ws[2] != ws[3] || (k != 1 && k != 3)) {
    shape_error(OpKind::conv2d, "kernel " + ws.str() + " incompatible with input " + xs.str());
  }
  if (b.shape()[0] != cout) shape_error(OpKind::conv2d, "bias " + b.shape().str() + " vs kernel " + ws.str());
  const Index hw = h * wd;
  const Index ckk = cin * k * k;

  Tensor out(Shape{batch, cout, h, wd});
  ConstRowMap wm(w.value().data.data(), cout, ckk);
  const auto& bias = b.value().data;
  RowMat cols(ckk, hw);
  for (Index n = 0; n < batch; ++n) {
    const double* in = x.value().data.data() + n * cin * hw;
    RowMap o(out.data.data() + n * cout * hw, cout, hw);
    if (k == 1) {
      o.noalias() = wm * ConstRowMap(in, cin, hw);
    } else {
      im2col(in, cin, h, wd, k, cols.data());
      o.noalias() = wm * cols;
    }
    o.colwise() += bias.matrix();
  }

  return t.record(OpKind::conv2d, {x.id(), w.id(), b.id()}, std::move(out),
                  [x, w, batch, cin, cout, h, wd, k, hw, ckk](const Tensor& g, std::span<Tensor* const> gi) {
                    ConstRowMap wm(w.value().data.data(), cout, ckk);
                    RowMat cols(ckk, hw);
                    RowMat dcols(ckk, hw);
                    for (Index n = 0; n < batch; ++n) {
                      ConstRowMap go(g.data.data() + n * cout * hw, cout, hw);
                      const double* in = x.value().data.data() + n * cin * hw;
                      if (gi[1]) {
                        RowMap dw(gi[1]->data.data(), cout, ckk);
                        if (k == 1) {
                          dw.noalias() += go * ConstRowMap(in, cin, hw).transpose();
                        } else {
                          im2col(in, cin, h, wd, k, cols.data());
                          dw.noalias() += go * cols.transpose();
                        }
                      }
                      if (gi[2]) gi[2]->data += go.rowwise().sum().array();
                      if (gi[0]) {
                        double* dx = gi[0]->data.data() + n * cin * hw;
                        if (k == 1) {
                          RowMap(dx, cin, hw).noalias() += wm.transpose() * go;
                        } else {
                          dcols.noalias() = wm.transpose() * go;
                          col2im_add(dcols.data(), cin, h, wd, k, dx);
                        }
                      }
                    }
                  });
}

Var affine(Var x, Var w, Var b) {
  Tape& t = same_tape(OpKind::affine, {x, w, b});
  require_rank(OpKind::affine, x.shape(), 2);
  require_rank(OpKind::affine, w.shape(), 2);
  require_rank(OpKind::affine, b.shape(), 1);
  const Index batch = x.shape()[0], f = x.shape()[1], g = w.shape()[0];
  if (w.shape()[1] != f || b.shape()[0] != g) {
    shape_error(OpKind::affine, "input " + x.shape().str() + ", weight " + w.shape().str() + ", bias " + b.shape().str());
  }
  Tensor out(Shape{batch, g});
  RowMap o(out.data.data(), batch, g);
  o.noalias() = ConstRowMap(x.value().data.data(), batch, f) * ConstRowMap(w.value().data.data(), g, f).transpose();
  o.rowwise() += b.value().data.matrix().transpose();
  return t.record(OpKind::affine, {x.id(), w.id(), b.id()}, std::move(out),
                  [x, w, batch, f, g](const Tensor& up, std::span<Tensor* const> gi) {
                    ConstRowMap go(up.data.data(), batch, g);
                    if (gi[0]) RowMap(gi[0]->data.data(), batch, f).noalias() += go * ConstRowMap(w.value().data.data(), g, f);
                    if (gi[1]) RowMap(gi[1]->data.data(), g, f).noalias() += go.transpose() * ConstRowMap(x.value().data.data(), batch, f);
                    if (gi[2]) gi[2]->data += go.colwise().sum().transpose().array();
                  });
}

Var silu(Var x) {
  Tape& t = same_tape(OpKind::silu, {x});
  Eigen::ArrayXd sig = 1.0 / (1.0 + (-x.value().data).exp());
  Tensor out(x.shape(), x.value().data * sig);
  return t.record(OpKind::silu, {x.id()}, std::move(out), [x, sig = std::move(sig)](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) gi[0]->data += g.data * sig * (1.0 + x.value().data * (1.0 - sig));
  });
}

Var downsample2(Var x) {
  Tape& t = same_tape(OpKind::downsample2, {x});
  require_rank(OpKind::downsample2, x.shape(), 4);
  const Index planes = x.shape()[0] * x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  if (h % 2 || w % 2) shape_error(OpKind::downsample2, "odd spatial extents " + x.shape().str());
  const Index oh = h / 2, ow = w / 2;
  Tensor out(Shape{x.shape()[0], x.shape()[1], oh, ow});
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < oh; ++y)
      for (Index xx = 0; xx < ow; ++xx) out.data[(p * oh + y) * ow + xx] = x.value().data[(p * h + 2 * y) * w + 2 * xx];
  return t.record(OpKind::downsample2, {x.id()}, std::move(out), [planes, h, w, oh, ow](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    for (Index p = 0; p < planes; ++p)
      for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx) gi[0]->data[(p * h + 2 * y) * w + 2 * xx] += g.data[(p * oh + y) * ow + xx];
  });
}

Var upsample2(Var x) {
  Tape& t = same_tape(OpKind::upsample2, {x});
  require_rank(OpKind::upsample2, x.shape(), 4);
  const Index planes = x.shape()[0] * x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const Index oh = 2 * h, ow = 2 * w;
  Tensor out(Shape{x.shape()[0], x.shape()[1], oh, ow});
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < oh; ++y)
      for (Index xx = 0; xx < ow; ++xx) out.data[(p * oh + y) * ow + xx] = x.value().data[(p * h + y / 2) * w + xx / 2];
  return t.record(OpKind::upsample2, {x.id()}, std::move(out), [planes, h, w, oh, ow](const Tensor& g, std::span<Tensor* const> gi) {
    if (!gi[0]) return;
    for (Index p = 0; p < planes; ++p)
      for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx) gi[0]->data[(p * h + y / 2) * w + xx / 2] += g.data[(p * oh + y) * ow + xx];
  });
}

Var sum(Var x) {
  Tape& t = same_tape(OpKind::sum, {x});
  return t.record(OpKind::sum, {x.id()}, Tensor::scalar(x.value().data.sum()), [](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) gi[0]->data += g.data[0];
  });
}

Var mean(Var x) {
  Tape& t = same_tape(OpKind::mean, {x});
  const double n = static_cast<double>(x.value().numel());
  return t.record(OpKind::mean, {x.id()}, Tensor::scalar(x.value().data.sum() / n), [n](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) gi[0]->data += g.data[0] / n;
  });
}

Var sq_diff_sum(Var a, Var b) {
  Tape& t = same_tape(OpKind::sq_diff_sum, {a, b});
  require_same(OpKind::sq_diff_sum, a.shape(), b.shape());
  Eigen::ArrayXd d = a.value().data - b.value().data;
  const double s = d.square().sum();
  return t.record(OpKind::sq_diff_sum, {a.id(), b.id()}, Tensor::scalar(s), [d = std::move(d)](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) gi[0]->data += 2.0 * g.data[0] * d;
    if (gi[1]) gi[1]->data -= 2.0 * g.data[0] * d;
  });
}

Var stop_gradient(Var x) {
  Tape& t = same_tape(OpKind::stop_gradient, {x});
  return t.record(OpKind::stop_gradient, {x.id()}, x.value(), nullptr);
}

Var shift(Var x, Index dy, Index dx, bool periodic) {
  Tape& t = same_tape(OpKind::shift, {x});
  if (x.shape().rank() < 2) shape_error(OpKind::shift, "needs rank >= 2, got " + x.shape().str());
  return t.record(OpKind::shift, {x.id()}, shifted(x.value(), dy, dx, periodic), [dy, dx, periodic](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) gi[0]->data += shifted(g, -dy, -dx, periodic).data;
  });
}

Var slice_channels(Var x, Index begin, Index end) {
  Tape& t = same_tape(OpKind::slice_channels, {x});
  require_rank(OpKind::slice_channels, x.shape(), 4);
  if (begin < 0 || end > x.shape()[1] || begin >= end) {
    shape_error(OpKind::slice_channels, "range [" + std::to_string(begin) + "," + std::to_string(end) + ") for " + x.shape().str());
  }
  const Index batch = x.shape()[0], c = x.shape()[1], plane = x.shape()[2] * x.shape()[3], nc = end - begin;
  return t.record(OpKind::slice_channels, {x.id()}, physinstruct::slice_channels(x.value(), begin, end),
                  [batch, c, plane, nc, begin](const Tensor& g, std::span<Tensor* const> gi) {
                    if (!gi[0]) return;
                    for (Index n = 0; n < batch; ++n) {
                      gi[0]->data.segment((n * c + begin) * plane, nc * plane) += g.data.segment(n * nc * plane, nc * plane);
                    }
                  });
}

Var concat_channels(std::span<const Var> parts) {
  if (parts.empty()) shape_error(OpKind::concat_channels, "no inputs");
  Tape& t = parts[0].tape();
  const Shape& s0 = parts[0].shape();
  require_rank(OpKind::concat_channels, s0, 4);
  Index total = 0;
  std::vector<int> ids;
  std::vector<Index> counts;
  for (const auto& p : parts) {
    if (&p.tape() != &t) shape_error(OpKind::concat_channels, "operands live on different tapes");
    const Shape& s = p.shape();
    if (s.rank() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      shape_error(OpKind::concat_channels, "extents " + s.str() + " vs " + s0.str());
    }
    total += s[1];
    ids.push_back(p.id());
    counts.push_back(s[1]);
  }
  const Index batch = s0[0], plane = s0[2] * s0[3];
  Tensor out(Shape{batch, total, s0[2], s0[3]});
  for (Index n = 0; n < batch; ++n) {
    Index c0 = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      out.data.segment((n * total + c0) * plane, counts[i] * plane) = parts[i].value().data.segment(n * counts[i] * plane, counts[i] * plane);
      c0 += counts[i];
    }
  }
  return t.record(OpKind::concat_channels, std::move(ids), std::move(out),
                  [counts, batch, total, plane](const Tensor& g, std::span<Tensor* const> gi) {
                    for (Index n = 0; n < batch; ++n) {
                      Index c0 = 0;
                      for (std::size_t i = 0; i < counts.size(); ++i) {
                        if (gi[i]) gi[i]->data.segment(n * counts[i] * plane, counts[i] * plane) += g.data.segment((n * total + c0) * plane, counts[i] * plane);
                        c0 += counts[i];
                      }
                    }
                  });
}

Var add_channel_bias(Var x, Var bias) {
  Tape& t = same_tape(OpKind::add_channel_bias, {x, bias});
  require_rank(OpKind::add_channel_bias, x.shape(), 4);
  require_rank(OpKind::add_channel_bias, bias.shape(), 2);
  const Index batch = x.shape()[0], c = x.shape()[1], plane = x.shape()[2] * x.shape()[3];
  if (bias.shape()[0] != batch || bias.shape()[1] != c) {
    shape_error(OpKind::add_channel_bias, "bias " + bias.shape().str() + " vs input " + x.shape().str());
  }
  Tensor out = x.value();
  for (Index i = 0; i < batch * c; ++i) out.data.segment(i * plane, plane) += bias.value().data[i];
  return t.record(OpKind::add_channel_bias, {x.id(), bias.id()}, std::move(out), [batch, c, plane](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) gi[0]->data += g.data;
    if (gi[1]) {
      for (Index i = 0; i < batch * c; ++i) gi[1]->data[i] += g.data.segment(i * plane, plane).sum();
    }
  });
}

Var forward_op(OpKind kind, std::span<const Var> in, const OpAttrs& attrs) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) shape_error(kind, "expected " + std::to_string(n) + " inputs, got " + std::to_string(in.size()));
  };
  auto constant = [&]() -> const Tensor& {
    if (!attrs.constant) shape_error(kind, "missing constant attribute");
    return *attrs.constant;
  };
  switch (kind) {
    case OpKind::add: need(2); return add(in[0], in[1]);
    case OpKind::sub: need(2); return sub(in[0], in[1]);
    case OpKind::scale: need(1); return scale(in[0], attrs.alpha);
    case OpKind::mul: need(2); return mul(in[0], in[1]);
    case OpKind::mul_const: need(1); return mul_const(in[0], constant());
    case OpKind::add_const: need(1); return add_const(in[0], constant());
    case OpKind::scale_samples: need(1); return scale_samples(in[0], attrs.per_sample);
    case OpKind::conv2d: need(3); return conv2d(in[0], in[1], in[2]);
    case OpKind::affine: need(3); return affine(in[0], in[1], in[2]);
    case OpKind::silu: need(1); return silu(in[0]);
    case OpKind::downsample2: need(1); return downsample2(in[0]);
    case OpKind::upsample2: need(1); return upsample2(in[0]);
    case OpKind::sum: need(1); return sum(in[0]);
    case OpKind::mean: need(1); return mean(in[0]);
    case OpKind::sq_diff_sum: need(2); return sq_diff_sum(in[0], in[1]);
    case OpKind::stop_gradient: need(1); return stop_gradient(in[0]);
    case OpKind::shift: need(1); return shift(in[0], attrs.dy, attrs.dx, attrs.periodic);
    case OpKind::slice_channels: need(1); return slice_channels(in[0], attrs.begin, attrs.end);
    case OpKind::concat_channels: return concat_channels(in);
    case OpKind::add_channel_bias: need(2); return add_channel_bias(in[0], in[1]);
    case OpKind::leaf: break;
  }
  shape_error(kind, "not a forward operation");
}

}  // namespace physinstruct
