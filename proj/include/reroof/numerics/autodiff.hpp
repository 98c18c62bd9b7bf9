#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "reroof/numerics/kernels.hpp"
#include "reroof/numerics/rng.hpp"
#include "reroof/numerics/tensor.hpp"

namespace reroof::nn {

/// One vertex of the reverse-mode tape. Parameters are long-lived leaf nodes
/// shared by every graph that reads them; intermediate nodes die with the
/// graph.
template <class T>
struct Node {
  BasicTensor<T> value;
  BasicTensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  BasicTensor<T>& grad_buffer() {
    if (grad.empty()) grad = BasicTensor<T>(value.shape(), T(0));
    return grad;
  }
};

template <class T>
class Var {
public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const BasicTensor<T>& value() const { return node_->value; }
  BasicTensor<T>& mutable_value() { return node_->value; }
  const BasicTensor<T>& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node<T>>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

private:
  std::shared_ptr<Node<T>> node_;
};

template <class T>
Var<T> constant(BasicTensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return Var<T>(std::move(n));
}

template <class T>
Var<T> parameter(BasicTensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var<T>(std::move(n));
}

/// While alive, ops on this thread record no tape (inference mode).
class NoGradGuard {
public:
  NoGradGuard() : previous_(enabled()) { enabled() = false; }
  ~NoGradGuard() { enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }

private:
  bool previous_;
};

namespace detail {

template <class T>
Var<T> make_result(BasicTensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  const bool needs = NoGradGuard::enabled() && std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var<T>& v) { return v.requires_grad(); });
  if (needs) {
    n->requires_grad = true;
    for (auto& v : inputs) n->inputs.push_back(v.node());
    n->backward_fn = std::move(backward_fn);
  }
  return Var<T>(std::move(n));
}

}  // namespace detail

/// Runs reverse accumulation from a scalar loss. Gradients add into the
/// `grad` buffers of every reachable node; callers zero parameter
/// gradients beforehand (see ParamStore::zero_grad).
template <class T>
void backward(const Var<T>& loss) {
  if (loss.size() != 1) {
    throw DimensionError("backward requires a scalar loss, got shape " +
                         shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_shape(b.shape(), a.shape(), "add");
  BasicTensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (auto& in : n.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_shape(b.shape(), a.shape(), "sub");
  BasicTensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (n.inputs[0]->requires_grad) {
      auto& g = n.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
    if (n.inputs[1]->requires_grad) {
      auto& g = n.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_shape(b.shape(), a.shape(), "mul");
  BasicTensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    auto& A = n.inputs[0];
    auto& B = n.inputs[1];
    if (A->requires_grad) {
      auto& g = A->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * B->value[i];
    }
    if (B->requires_grad) {
      auto& g = B->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * A->value[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  BasicTensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  return detail::make_result<T>(std::move(out), {a}, [s](Node<T>& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * s;
  });
}

template <class T>
Var<T> exp(const Var<T>& a) {
  BasicTensor<T> out = a.value();
  for (auto& v : out.values()) v = std::exp(v);
  return detail::make_result<T>(std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.value[i];
  });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  BasicTensor<T> out = a.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  return detail::make_result<T>(std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (n.value[i] > T(0)) g[i] += n.grad[i];
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  BasicTensor<T> out = a.value();
  for (auto& v : out.values()) {
    v = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  return detail::make_result<T>(std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = n.value[i];
      g[i] += n.grad[i] * s * (T(1) - s);
    }
  });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  BasicTensor<T> out = a.value();
  for (auto& v : out.values()) v = std::tanh(v);
  return detail::make_result<T>(std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += n.grad[i] * (T(1) - n.value[i] * n.value[i]);
  });
}

/// Clamp with zero gradient outside [lo, hi].
template <class T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  BasicTensor<T> out = a.value();
  for (auto& v : out.values()) v = std::clamp(v, lo, hi);
  return detail::make_result<T>(std::move(out), {a}, [lo, hi](Node<T>& n) {
    auto& in = *n.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = in.value[i];
      if (x >= lo && x <= hi) g[i] += n.grad[i];
    }
  });
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  BasicTensor<T> out = a.value().reshaped(std::move(shape));
  return detail::make_result<T>(std::move(out), {a}, [](Node<T>& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
  });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T s = T(0);
  for (T v : a.value().values()) s += v;
  return detail::make_result<T>(BasicTensor<T>::scalar(s), {a}, [](Node<T>& n) {
    auto& g = n.inputs[0]->grad_buffer();
    const T up = n.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up;
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

/// Columns [start, start+len) of a [B, D] matrix.
template <class T>
Var<T> slice_cols(const Var<T>& a, std::size_t start, std::size_t len) {
  if (a.value().rank() != 2 || start + len > a.shape()[1] || len == 0) {
    throw DimensionError("slice_cols: cannot take columns [" + std::to_string(start) +
                         ", " + std::to_string(start + len) + ") of " +
                         shape_string(a.shape()));
  }
  const std::size_t rows = a.shape()[0], cols = a.shape()[1];
  BasicTensor<T> out(Shape{rows, len});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < len; ++c) out[r * len + c] = a.value()[r * cols + start + c];
  return detail::make_result<T>(std::move(out), {a}, [start, len, rows, cols](Node<T>& n) {
    auto& g = n.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < len; ++c) g[r * cols + start + c] += n.grad[r * len + c];
  });
}

/// [B, Da] ++ [B, Db] -> [B, Da+Db].
template <class T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[0] != b.shape()[0]) {
    throw DimensionError("concat_cols: incompatible shapes " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  const std::size_t rows = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  BasicTensor<T> out(Shape{rows, ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < ca; ++c) out[r * (ca + cb) + c] = a.value()[r * ca + c];
    for (std::size_t c = 0; c < cb; ++c) out[r * (ca + cb) + ca + c] = b.value()[r * cb + c];
  }
  return detail::make_result<T>(std::move(out), {a, b}, [rows, ca, cb](Node<T>& n) {
    if (n.inputs[0]->requires_grad) {
      auto& g = n.inputs[0]->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < ca; ++c) g[r * ca + c] += n.grad[r * (ca + cb) + c];
    }
    if (n.inputs[1]->requires_grad) {
      auto& g = n.inputs[1]->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cb; ++c) g[r * cb + c] += n.grad[r * (ca + cb) + ca + c];
    }
  });
}

/// Inverted dropout: at train time keeps each element with probability 1-p
/// and scales survivors by 1/(1-p); identity otherwise. Consumes one
/// uniform draw per element in row-major order when training.
template <class T>
Var<T> dropout(const Var<T>& a, double p, Rng* rng, bool training) {
  if (!training || p <= 0.0) return a;
  if (p >= 1.0) throw PreconditionError("dropout rate must be < 1");
  if (rng == nullptr) throw PreconditionError("training-mode dropout needs a generator");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  BasicTensor<T> mask(a.shape());
  for (auto& m : mask.values()) m = rng->uniform() >= p ? keep_scale : T(0);
  BasicTensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return detail::make_result<T>(std::move(out), {a},
                                [mask = std::move(mask)](Node<T>& n) {
                                  auto& g = n.inputs[0]->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i)
                                    g[i] += n.grad[i] * mask[i];
                                });
}

// ---------------------------------------------------------------------------
// Layers

/// x[B,In] * W[In,Out] + b[Out].
template <class T>
Var<T> dense(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[0]) {
    throw DimensionError("dense: input " + shape_string(xs) + " incompatible with weight " +
                         shape_string(ws));
  }
  require_shape(b.shape(), Shape{ws[1]}, "dense bias");
  const std::size_t batch = xs[0], in = ws[0], out_dim = ws[1];
  BasicTensor<T> out(Shape{batch, out_dim});
  kernels::gemm<T>(false, false, batch, out_dim, in, x.value().data(), w.value().data(),
                   out.data(), false);
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t c = 0; c < out_dim; ++c) out[r * out_dim + c] += b.value()[c];

  return detail::make_result<T>(std::move(out), {x, w, b}, [batch, in, out_dim](Node<T>& n) {
    auto& X = *n.inputs[0];
    auto& W = *n.inputs[1];
    auto& Bv = *n.inputs[2];
    if (X.requires_grad) {
      kernels::gemm<T>(false, true, batch, in, out_dim, n.grad.data(), W.value.data(),
                       X.grad_buffer().data(), true);
    }
    if (W.requires_grad) {
      kernels::gemm<T>(true, false, in, out_dim, batch, X.value.data(), n.grad.data(),
                       W.grad_buffer().data(), true);
    }
    if (Bv.requires_grad) {
      auto& g = Bv.grad_buffer();
      for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t c = 0; c < out_dim; ++c) g[c] += n.grad[r * out_dim + c];
    }
  });
}

/// NCHW convolution; weight [O, C, K, K], bias [O].
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::size_t stride,
              std::size_t padding) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (stride == 0) throw PreconditionError("conv2d: stride must be >= 1");
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3]) {
    throw DimensionError("conv2d: input " + shape_string(xs) + " incompatible with weight " +
                         shape_string(ws));
  }
  if (xs[2] + 2 * padding < ws[2] || xs[3] + 2 * padding < ws[3]) {
    throw DimensionError("conv2d: kernel " + shape_string(ws) + " larger than padded input " +
                         shape_string(xs));
  }
  require_shape(b.shape(), Shape{ws[0]}, "conv2d bias");
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3], O = ws[0], K = ws[2];
  kernels::ConvGeometry g{C, H, W, K, stride, padding, kernels::conv_out_size(H, K, stride, padding),
                          kernels::conv_out_size(W, K, stride, padding)};
  const std::size_t in_sz = C * H * W, out_sp = g.col_cols(), out_sz = O * out_sp;
  BasicTensor<T> out(Shape{N, O, g.out_h, g.out_w});
  std::vector<T> col(g.col_rows() * g.col_cols());
  for (std::size_t n = 0; n < N; ++n) {
    kernels::im2col(x.value().data() + n * in_sz, g, col.data());
    T* dst = out.data() + n * out_sz;
    kernels::gemm<T>(false, false, O, out_sp, g.col_rows(), w.value().data(), col.data(), dst,
                     false);
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t p = 0; p < out_sp; ++p) dst[o * out_sp + p] += b.value()[o];
  }

  return detail::make_result<T>(std::move(out), {x, w, b}, [g, N, O, in_sz, out_sp, out_sz](Node<T>& n) {
    auto& X = *n.inputs[0];
    auto& Wt = *n.inputs[1];
    auto& Bv = *n.inputs[2];
    std::vector<T> col(g.col_rows() * g.col_cols());
    for (std::size_t s = 0; s < N; ++s) {
      const T* dy = n.grad.data() + s * out_sz;
      if (Wt.requires_grad) {
        kernels::im2col(X.value.data() + s * in_sz, g, col.data());
        kernels::gemm<T>(false, true, O, g.col_rows(), out_sp, dy, col.data(),
                         Wt.grad_buffer().data(), true);
      }
      if (X.requires_grad) {
        kernels::gemm<T>(true, false, g.col_rows(), out_sp, O, Wt.value.data(), dy, col.data(),
                         false);
        kernels::col2im(col.data(), g, X.grad_buffer().data() + s * in_sz);
      }
      if (Bv.requires_grad) {
        auto& gb = Bv.grad_buffer();
        for (std::size_t o = 0; o < O; ++o) {
          T acc = T(0);
          for (std::size_t p = 0; p < out_sp; ++p) acc += dy[o * out_sp + p];
          gb[o] += acc;
        }
      }
    }
  });
}

/// NCHW transposed convolution (adjoint of conv2d in its input); weight
/// [C_in, C_out, K, K], bias [C_out]. Output size (H-1)*stride - 2*padding + K.
template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::size_t stride,
                        std::size_t padding) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (stride == 0) throw PreconditionError("conv_transpose2d: stride must be >= 1");
  if (xs.size() != 4 || ws.size() != 4 || ws[0] != xs[1] || ws[2] != ws[3]) {
    throw DimensionError("conv_transpose2d: input " + shape_string(xs) +
                         " incompatible with weight " + shape_string(ws));
  }
  const std::size_t N = xs[0], Cin = xs[1], H = xs[2], W = xs[3], Cout = ws[1], K = ws[2];
  if ((H - 1) * stride + K <= 2 * padding || (W - 1) * stride + K <= 2 * padding) {
    throw DimensionError("conv_transpose2d: padding too large for input " + shape_string(xs));
  }
  require_shape(b.shape(), Shape{Cout}, "conv_transpose2d bias");
  const std::size_t OH = (H - 1) * stride + K - 2 * padding;
  const std::size_t OW = (W - 1) * stride + K - 2 * padding;
  // Geometry of the equivalent forward convolution on the output image.
  kernels::ConvGeometry g{Cout, OH, OW, K, stride, padding, H, W};
  const std::size_t in_sp = H * W, in_sz = Cin * in_sp, out_sz = Cout * OH * OW;
  BasicTensor<T> out(Shape{N, Cout, OH, OW});
  std::vector<T> col(g.col_rows() * g.col_cols());
  for (std::size_t n = 0; n < N; ++n) {
    kernels::gemm<T>(true, false, g.col_rows(), in_sp, Cin, w.value().data(),
                     x.value().data() + n * in_sz, col.data(), false);
    T* dst = out.data() + n * out_sz;
    kernels::col2im(col.data(), g, dst);
    for (std::size_t c = 0; c < Cout; ++c)
      for (std::size_t p = 0; p < OH * OW; ++p) dst[c * OH * OW + p] += b.value()[c];
  }

  return detail::make_result<T>(std::move(out), {x, w, b}, [g, N, Cin, Cout, in_sp, in_sz, out_sz](Node<T>& n) {
    auto& X = *n.inputs[0];
    auto& Wt = *n.inputs[1];
    auto& Bv = *n.inputs[2];
    std::vector<T> col(g.col_rows() * g.col_cols());
    const std::size_t out_sp = g.height * g.width;
    for (std::size_t s = 0; s < N; ++s) {
      const T* dy = n.grad.data() + s * out_sz;
      if (X.requires_grad || Wt.requires_grad) kernels::im2col(dy, g, col.data());
      if (X.requires_grad) {
        kernels::gemm<T>(false, false, Cin, in_sp, g.col_rows(), Wt.value.data(), col.data(),
                         X.grad_buffer().data() + s * in_sz, true);
      }
      if (Wt.requires_grad) {
        kernels::gemm<T>(false, true, Cin, g.col_rows(), in_sp, X.value.data() + s * in_sz,
                         col.data(), Wt.grad_buffer().data(), true);
      }
      if (Bv.requires_grad) {
        auto& gb = Bv.grad_buffer();
        for (std::size_t c = 0; c < Cout; ++c) {
          T acc = T(0);
          for (std::size_t p = 0; p < out_sp; ++p) acc += dy[c * out_sp + p];
          gb[c] += acc;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Losses

/// Sum of squared errors per example, averaged over the batch (leading dim).
template <class T>
Var<T> sse_per_example(const Var<T>& pred, const BasicTensor<T>& target) {
  require_shape(target.shape(), pred.shape(), "sse_per_example target");
  const std::size_t batch = pred.shape()[0];
  T s = T(0);
  for (std::size_t i = 0; i < target.size(); ++i) {
    const T d = pred.value()[i] - target[i];
    s += d * d;
  }
  s /= static_cast<T>(batch);
  return detail::make_result<T>(BasicTensor<T>::scalar(s), {pred}, [target, batch](Node<T>& n) {
    auto& in = *n.inputs[0];
    auto& g = in.grad_buffer();
    const T k = T(2) * n.grad[0] / static_cast<T>(batch);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (in.value[i] - target[i]);
  });
}

/// Closed-form KL(N(mu, exp(logvar)) || N(0, I)) summed over latent
/// dimensions and averaged over the batch.
template <class T>
Var<T> gaussian_kl(const Var<T>& mu, const Var<T>& logvar) {
  require_shape(logvar.shape(), mu.shape(), "gaussian_kl logvar");
  const std::size_t batch = mu.shape()[0];
  T s = T(0);
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const T m = mu.value()[i], lv = logvar.value()[i];
    s += T(0.5) * (m * m + std::exp(lv) - T(1) - lv);
  }
  s /= static_cast<T>(batch);
  return detail::make_result<T>(BasicTensor<T>::scalar(s), {mu, logvar}, [batch](Node<T>& n) {
    auto& M = *n.inputs[0];
    auto& L = *n.inputs[1];
    const T k = n.grad[0] / static_cast<T>(batch);
    if (M.requires_grad) {
      auto& g = M.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * M.value[i];
    }
    if (L.requires_grad) {
      auto& g = L.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * T(0.5) * (std::exp(L.value[i]) - T(1));
    }
  });
}

/// Weighted binary cross-entropy on logits: sum_i w_i * l_i / sum_i w_i.
template <class T>
Var<T> bce_with_logits(const Var<T>& logits, const BasicTensor<T>& targets,
                       const BasicTensor<T>& weights) {
  if (logits.size() != targets.size() || logits.size() != weights.size()) {
    throw DimensionError("bce_with_logits: logits " + shape_string(logits.shape()) +
                         ", targets " + shape_string(targets.shape()) + ", weights " +
                         shape_string(weights.shape()));
  }
  T wsum = T(0), s = T(0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const T x = logits.value()[i], y = targets[i];
    const T l = std::max(x, T(0)) - x * y + std::log1p(std::exp(-std::abs(x)));
    s += weights[i] * l;
    wsum += weights[i];
  }
  if (!(wsum > T(0))) throw PreconditionError("bce_with_logits: weights sum to zero");
  s /= wsum;
  return detail::make_result<T>(BasicTensor<T>::scalar(s), {logits}, [targets, weights, wsum](Node<T>& n) {
    auto& in = *n.inputs[0];
    auto& g = in.grad_buffer();
    const T up = n.grad[0] / wsum;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = in.value[i];
      const T p = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
      g[i] += up * weights[i] * (p - targets[i]);
    }
  });
}

}  // namespace reroof::nn
