#pragma once

// Minimal reverse-mode engine. A Var is a shared handle to a node holding a
// value and (lazily) a gradient buffer of the same shape. Operations append
// a backward closure to the Tape when any input requires a gradient; the
// reverse pass runs the closures in reverse recording order.

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "dglr/kernels.hpp"
#include "dglr/tensor.hpp"

namespace dglr {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;

  // Gradient buffer, zero-initialized on first use.
  Tensor& grad_ref() {
    if (grad.shape() != value.shape()) grad = Tensor::zeros_like(value);
    return grad;
  }
  bool has_grad() const { return grad.shape() == value.shape(); }
  void zero_grad() { grad = Tensor::zeros_like(value); }
};

using Var = std::shared_ptr<Node>;

inline Var make_var(Tensor value, bool requires_grad = false) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return node;
}

class Tape {
 public:
  enum class Mode { record, inference };

  explicit Tape(Mode mode = Mode::record) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return mode_ == Mode::record; }
  std::size_t size() const { return ops_.size(); }

  // True when an op with these inputs must record a backward closure.
  template <typename... Vars>
  bool needs_grad(const Vars&... inputs) const {
    return recording() && ((inputs && inputs->requires_grad) || ...);
  }

  void push(std::function<void()> backward) {
    if (consumed_) {
      throw UsageError("tape already consumed by a reverse pass; start a new one");
    }
    ops_.push_back(std::move(backward));
  }

  // Seeds d(loss)/d(loss) = 1 and propagates to every recorded node.
  void backward(const Var& loss) {
    if (consumed_) {
      throw UsageError("reverse pass invoked twice without a new forward pass");
    }
    if (!loss || loss->value.size() != 1) {
      throw UsageError("reverse pass requires a scalar loss");
    }
    consumed_ = true;
    loss->grad_ref()[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    ops_.clear();
  }

 private:
  Mode mode_;
  bool consumed_ = false;
  std::vector<std::function<void()>> ops_;
};

namespace ops {

using kernels::Padding;

inline Var conv2d(Tape& tape, const Var& x, const Var& w, const Var& b,
                  std::size_t stride = 1, Padding padding = Padding::same) {
  Var y = make_var(kernels::conv2d_forward(x->value, w->value,
                                           b ? &b->value : nullptr, stride,
                                           padding));
  if (tape.needs_grad(x, w, b)) {
    y->requires_grad = true;
    tape.push([x, w, b, y, stride, padding] {
      if (!y->has_grad()) return;
      kernels::conv2d_backward(
          x->value, w->value, y->grad, stride, padding,
          x->requires_grad ? &x->grad_ref() : nullptr,
          w->requires_grad ? &w->grad_ref() : nullptr,
          (b && b->requires_grad) ? &b->grad_ref() : nullptr);
    });
  }
  return y;
}

inline Var transposed_conv2d(Tape& tape, const Var& x, const Var& w,
                             const Var& b, std::size_t stride = 2) {
  Var y = make_var(kernels::transposed_conv2d_forward(
      x->value, w->value, b ? &b->value : nullptr, stride));
  if (tape.needs_grad(x, w, b)) {
    y->requires_grad = true;
    tape.push([x, w, b, y, stride] {
      if (!y->has_grad()) return;
      kernels::transposed_conv2d_backward(
          x->value, w->value, y->grad, stride,
          x->requires_grad ? &x->grad_ref() : nullptr,
          w->requires_grad ? &w->grad_ref() : nullptr,
          (b && b->requires_grad) ? &b->grad_ref() : nullptr);
    });
  }
  return y;
}

// Gradient at exactly zero input is zero.
inline Var relu(Tape& tape, const Var& x) {
  Tensor out = x->value;
  for (double& v : out.vec()) v = v > 0.0 ? v : 0.0;
  Var y = make_var(std::move(out));
  if (tape.needs_grad(x)) {
    y->requires_grad = true;
    tape.push([x, y] {
      if (!y->has_grad()) return;
      Tensor& gx = x->grad_ref();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (x->value[i] > 0.0) gx[i] += y->grad[i];
      }
    });
  }
  return y;
}

inline Var max_pool_2x2(Tape& tape, const Var& x) {
  std::vector<std::size_t> argmax;
  Var y = make_var(kernels::max_pool_2x2_forward(x->value, argmax));
  if (tape.needs_grad(x)) {
    y->requires_grad = true;
    tape.push([x, y, argmax = std::move(argmax)] {
      if (!y->has_grad()) return;
      Tensor& gx = x->grad_ref();
      for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += y->grad[o];
    });
  }
  return y;
}

inline Var fully_connected(Tape& tape, const Var& x, const Var& w,
                           const Var& b) {
  Var y = make_var(kernels::fully_connected_forward(x->value, w->value,
                                                    b ? &b->value : nullptr));
  if (tape.needs_grad(x, w, b)) {
    y->requires_grad = true;
    tape.push([x, w, b, y] {
      if (!y->has_grad()) return;
      const std::size_t batch = x->value.dim(0), in = x->value.dim(1),
                        out = w->value.dim(0);
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t o = 0; o < out; ++o) {
          const double g = y->grad[n * out + o];
          if (b && b->requires_grad) b->grad_ref()[o] += g;
          if (w->requires_grad) {
            Tensor& gw = w->grad_ref();
            for (std::size_t i = 0; i < in; ++i) {
              gw[o * in + i] += g * x->value[n * in + i];
            }
          }
          if (x->requires_grad) {
            Tensor& gx = x->grad_ref();
            for (std::size_t i = 0; i < in; ++i) {
              gx[n * in + i] += g * w->value[o * in + i];
            }
          }
        }
      }
    });
  }
  return y;
}

inline Var reshape(Tape& tape, const Var& x, Shape shape) {
  Var y = make_var(x->value.reshaped(std::move(shape)));
  if (tape.needs_grad(x)) {
    y->requires_grad = true;
    tape.push([x, y] {
      if (!y->has_grad()) return;
      Tensor& gx = x->grad_ref();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += y->grad[i];
    });
  }
  return y;
}

// [N, ...] -> [N, prod(rest)]
inline Var flatten(Tape& tape, const Var& x) {
  const std::size_t n = x->value.dim(0);
  return reshape(tape, x, {n, x->value.size() / n});
}

inline Var add(Tape& tape, const Var& a, const Var& b) {
  a->value.require_same_shape(b->value, "add");
  Tensor out = a->value;
  out += b->value;
  Var y = make_var(std::move(out));
  if (tape.needs_grad(a, b)) {
    y->requires_grad = true;
    tape.push([a, b, y] {
      if (!y->has_grad()) return;
      if (a->requires_grad) a->grad_ref() += y->grad;
      if (b->requires_grad) b->grad_ref() += y->grad;
    });
  }
  return y;
}

inline Var scale(Tape& tape, const Var& x, double factor) {
  Tensor out = x->value;
  for (double& v : out.vec()) v *= factor;
  Var y = make_var(std::move(out));
  if (tape.needs_grad(x)) {
    y->requires_grad = true;
    tape.push([x, y, factor] {
      if (!y->has_grad()) return;
      Tensor& gx = x->grad_ref();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * y->grad[i];
    });
  }
  return y;
}

// Channel concatenation of two NCHW tensors with equal N, H, W.
inline Var concat_channels(Tape& tape, const Var& a, const Var& b) {
  const Shape& sa = a->value.shape();
  const Shape& sb = b->value.shape();
  if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] ||
      sa[3] != sb[3]) {
    throw ConfigError("concat_channels: incompatible shapes " + shape_str(sa) +
                      " and " + shape_str(sb));
  }
  const std::size_t n = sa[0], ca = sa[1], cb = sb[1], plane = sa[2] * sa[3];
  Tensor out({n, ca + cb, sa[2], sa[3]});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a->value.data().begin() + i * ca * plane, ca * plane,
                out.data().begin() + i * (ca + cb) * plane);
    std::copy_n(b->value.data().begin() + i * cb * plane, cb * plane,
                out.data().begin() + (i * (ca + cb) + ca) * plane);
  }
  Var y = make_var(std::move(out));
  if (tape.needs_grad(a, b)) {
    y->requires_grad = true;
    tape.push([a, b, y, n, ca, cb, plane] {
      if (!y->has_grad()) return;
      for (std::size_t i = 0; i < n; ++i) {
        const double* g = y->grad.data().data() + i * (ca + cb) * plane;
        if (a->requires_grad) {
          double* ga = a->grad_ref().data().data() + i * ca * plane;
          for (std::size_t k = 0; k < ca * plane; ++k) ga[k] += g[k];
        }
        if (b->requires_grad) {
          double* gb = b->grad_ref().data().data() + i * cb * plane;
          for (std::size_t k = 0; k < cb * plane; ++k) gb[k] += g[ca * plane + k];
        }
      }
    });
  }
  return y;
}

inline Var sum(Tape& tape, const Var& x) {
  double s = 0.0;
  for (double v : x->value.data()) s += v;
  Var y = make_var(Tensor({1}, s));
  if (tape.needs_grad(x)) {
    y->requires_grad = true;
    tape.push([x, y] {
      if (!y->has_grad()) return;
      const double g = y->grad[0];
      for (double& v : x->grad_ref().vec()) v += g;
    });
  }
  return y;
}

// 0.5 * ||x||^2
inline Var half_squared_norm(Tape& tape, const Var& x) {
  double s = 0.0;
  for (double v : x->value.data()) s += v * v;
  Var y = make_var(Tensor({1}, 0.5 * s));
  if (tape.needs_grad(x)) {
    y->requires_grad = true;
    tape.push([x, y] {
      if (!y->has_grad()) return;
      const double g = y->grad[0];
      Tensor& gx = x->grad_ref();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * x->value[i];
    });
  }
  return y;
}

// Mean squared error over all elements; gradient flows to `out` only.
inline Var mse(Tape& tape, const Var& out, const Tensor& target) {
  out->value.require_same_shape(target, "mse");
  const std::size_t n = target.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = out->value[i] - target[i];
    s += d * d;
  }
  Var y = make_var(Tensor({1}, s / static_cast<double>(n)));
  if (tape.needs_grad(out)) {
    y->requires_grad = true;
    tape.push([out, y, target, n] {
      if (!y->has_grad()) return;
      const double g = y->grad[0] * 2.0 / static_cast<double>(n);
      Tensor& go = out->grad_ref();
      for (std::size_t i = 0; i < n; ++i) go[i] += g * (out->value[i] - target[i]);
    });
  }
  return y;
}

}  // namespace ops
}  // namespace dglr
