#pragma once

// Tape-free forward/backward kernels for the layers the denoising networks
// use. All image tensors are NCHW; conv weights are [O, C, K, K]; transposed
// conv weights are [Cin, Cout, K, K].

#include <cstddef>
#include <string>
#include <vector>

#include "dglr/tensor.hpp"

namespace dglr::kernels {

enum class Padding { same, valid };

struct ConvGeometry {
  std::size_t batch, in_ch, in_h, in_w;
  std::size_t out_ch, ksize, stride, pad;
  std::size_t out_h, out_w;
};

inline ConvGeometry conv_geometry(const Shape& input, const Shape& weight,
                                  std::size_t stride, Padding padding) {
  if (input.size() != 4) {
    throw ConfigError("conv2d: input must be NCHW, got " + shape_str(input));
  }
  if (weight.size() != 4 || weight[2] != weight[3]) {
    throw ConfigError("conv2d: weight must be [O,C,K,K], got " +
                      shape_str(weight));
  }
  if (weight[1] != input[1]) {
    throw ConfigError("conv2d: weight input channels " +
                      std::to_string(weight[1]) + " != input channels " +
                      std::to_string(input[1]));
  }
  if (stride != 1 && stride != 2) {
    throw ConfigError("conv2d: stride must be 1 or 2, got " +
                      std::to_string(stride));
  }
  ConvGeometry g{};
  g.batch = input[0];
  g.in_ch = input[1];
  g.in_h = input[2];
  g.in_w = input[3];
  g.out_ch = weight[0];
  g.ksize = weight[2];
  g.stride = stride;
  if (padding == Padding::same) {
    if (g.ksize % 2 == 0) {
      throw ConfigError("conv2d: same padding needs an odd kernel, got " +
                        std::to_string(g.ksize));
    }
    g.pad = (g.ksize - 1) / 2;
    g.out_h = (g.in_h + stride - 1) / stride;
    g.out_w = (g.in_w + stride - 1) / stride;
  } else {
    if (g.in_h < g.ksize || g.in_w < g.ksize) {
      throw ConfigError("conv2d: valid padding with kernel " +
                        std::to_string(g.ksize) + " on input " +
                        shape_str(input));
    }
    g.pad = 0;
    g.out_h = (g.in_h - g.ksize) / stride + 1;
    g.out_w = (g.in_w - g.ksize) / stride + 1;
  }
  return g;
}

namespace detail {

// Output index range [lo, hi) such that o*stride + k - pad lies in [0, n).
inline void tap_range(std::size_t n, std::size_t out_n, std::size_t k,
                      std::size_t stride, std::size_t pad, std::size_t& lo,
                      std::size_t& hi) {
  const long kk = static_cast<long>(k) - static_cast<long>(pad);
  const long s = static_cast<long>(stride);
  long l = 0;
  if (kk < 0) l = (-kk + s - 1) / s;
  long h = (static_cast<long>(n) - 1 - kk);
  h = h < 0 ? 0 : h / s + 1;
  if (h > static_cast<long>(out_n)) h = static_cast<long>(out_n);
  if (l > h) l = h;
  lo = static_cast<std::size_t>(l);
  hi = static_cast<std::size_t>(h);
}

}  // namespace detail

inline Tensor conv2d_forward(const Tensor& input, const Tensor& weight,
                             const Tensor* bias, std::size_t stride,
                             Padding padding) {
  const ConvGeometry g =
      conv_geometry(input.shape(), weight.shape(), stride, padding);
  if (bias && bias->size() != g.out_ch) {
    throw ConfigError("conv2d: bias length " + std::to_string(bias->size()) +
                      " != output channels " + std::to_string(g.out_ch));
  }
  Tensor out({g.batch, g.out_ch, g.out_h, g.out_w});
  const double* in = input.data().data();
  const double* w = weight.data().data();
  double* o = out.data().data();
  const std::size_t in_plane = g.in_h * g.in_w;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t kk = g.ksize * g.ksize;

  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
      double* op = o + (n * g.out_ch + oc) * out_plane;
      if (bias) {
        const double b = (*bias)[oc];
        for (std::size_t i = 0; i < out_plane; ++i) op[i] = b;
      }
      for (std::size_t ic = 0; ic < g.in_ch; ++ic) {
        const double* ip = in + (n * g.in_ch + ic) * in_plane;
        const double* wp = w + (oc * g.in_ch + ic) * kk;
        for (std::size_t ky = 0; ky < g.ksize; ++ky) {
          std::size_t oy0, oy1;
          detail::tap_range(g.in_h, g.out_h, ky, g.stride, g.pad, oy0, oy1);
          for (std::size_t kx = 0; kx < g.ksize; ++kx) {
            const double wv = wp[ky * g.ksize + kx];
            if (wv == 0.0) continue;
            std::size_t ox0, ox1;
            detail::tap_range(g.in_w, g.out_w, kx, g.stride, g.pad, ox0, ox1);
            const std::size_t len = ox1 - ox0;
            const std::size_t ix0 = ox0 * g.stride + kx - g.pad;
            for (std::size_t oy = oy0; oy < oy1; ++oy) {
              const std::size_t iy = oy * g.stride + ky - g.pad;
              const double* irow = ip + iy * g.in_w + ix0;
              double* orow = op + oy * g.out_w + ox0;
              if (g.stride == 1) {
                for (std::size_t t = 0; t < len; ++t) orow[t] += wv * irow[t];
              } else {
                for (std::size_t t = 0; t < len; ++t) {
                  orow[t] += wv * irow[t * g.stride];
                }
              }
            }
          }
        }
      }
    }
  }
  return out;
}

// Accumulates dL/dinput, dL/dweight, dL/dbias into the given buffers. Any
// of the output pointers may be null when that gradient is not needed.
inline void conv2d_backward(const Tensor& input, const Tensor& weight,
                            const Tensor& grad_out, std::size_t stride,
                            Padding padding, Tensor* grad_input,
                            Tensor* grad_weight, Tensor* grad_bias) {
  const ConvGeometry g =
      conv_geometry(input.shape(), weight.shape(), stride, padding);
  const double* in = input.data().data();
  const double* w = weight.data().data();
  const double* go = grad_out.data().data();
  const std::size_t in_plane = g.in_h * g.in_w;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t kk = g.ksize * g.ksize;

  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t oc = 0; oc < g.out_ch; ++oc) {
      const double* gop = go + (n * g.out_ch + oc) * out_plane;
      if (grad_bias) {
        double s = 0.0;
        for (std::size_t i = 0; i < out_plane; ++i) s += gop[i];
        (*grad_bias)[oc] += s;
      }
      for (std::size_t ic = 0; ic < g.in_ch; ++ic) {
        const double* ip = in + (n * g.in_ch + ic) * in_plane;
        const double* wp = w + (oc * g.in_ch + ic) * kk;
        double* gip =
            grad_input ? grad_input->data().data() + (n * g.in_ch + ic) * in_plane
                       : nullptr;
        double* gwp =
            grad_weight ? grad_weight->data().data() + (oc * g.in_ch + ic) * kk
                        : nullptr;
        for (std::size_t ky = 0; ky < g.ksize; ++ky) {
          std::size_t oy0, oy1;
          detail::tap_range(g.in_h, g.out_h, ky, g.stride, g.pad, oy0, oy1);
          for (std::size_t kx = 0; kx < g.ksize; ++kx) {
            const double wv = wp[ky * g.ksize + kx];
            std::size_t ox0, ox1;
            detail::tap_range(g.in_w, g.out_w, kx, g.stride, g.pad, ox0, ox1);
            const std::size_t len = ox1 - ox0;
            const std::size_t ix0 = ox0 * g.stride + kx - g.pad;
            double gw = 0.0;
            for (std::size_t oy = oy0; oy < oy1; ++oy) {
              const std::size_t iy = oy * g.stride + ky - g.pad;
              const std::size_t base = iy * g.in_w + ix0;
              const double* irow = ip + base;
              const double* grow = gop + oy * g.out_w + ox0;
              const std::size_t s = g.stride;
              if (gip) {
                double* girow = gip + base;
                for (std::size_t t = 0; t < len; ++t) girow[t * s] += wv * grow[t];
              }
              for (std::size_t t = 0; t < len; ++t) gw += grow[t] * irow[t * s];
            }
            if (gwp) gwp[ky * g.ksize + kx] += gw;
          }
        }
      }
    }
  }
}

// Scatter-accumulate adjoint of a valid-padding strided convolution. With a
// 2x2 kernel and stride 2 every output extent is exactly twice the input.
inline Tensor transposed_conv2d_forward(const Tensor& input,
                                        const Tensor& weight,
                                        const Tensor* bias,
                                        std::size_t stride) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (is.size() != 4 || ws.size() != 4 || ws[2] != ws[3]) {
    throw ConfigError("transposed_conv2d: expected NCHW input and [Cin,Cout,K,K] "
                      "weight, got " + shape_str(is) + " and " + shape_str(ws));
  }
  if (ws[0] != is[1]) {
    throw ConfigError("transposed_conv2d: weight input channels " +
                      std::to_string(ws[0]) + " != input channels " +
                      std::to_string(is[1]));
  }
  if (is[2] < 1 || is[3] < 1) {
    throw ConfigError("transposed_conv2d: empty input " + shape_str(is));
  }
  const std::size_t batch = is[0], cin = is[1], h = is[2], w = is[3];
  const std::size_t cout = ws[1], k = ws[2];
  const std::size_t oh = (h - 1) * stride + k, ow = (w - 1) * stride + k;
  if (bias && bias->size() != cout) {
    throw ConfigError("transposed_conv2d: bias length mismatch");
  }
  Tensor out({batch, cout, oh, ow});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* op = out.plane(n, o);
      if (bias) {
        for (std::size_t i = 0; i < oh * ow; ++i) op[i] = (*bias)[o];
      }
      for (std::size_t c = 0; c < cin; ++c) {
        const double* ip = input.plane(n, c);
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const double wv = weight[((c * cout + o) * k + ky) * k + kx];
            for (std::size_t y = 0; y < h; ++y) {
              double* orow = op + (y * stride + ky) * ow + kx;
              const double* irow = ip + y * w;
              for (std::size_t x = 0; x < w; ++x) {
                orow[x * stride] += wv * irow[x];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

inline void transposed_conv2d_backward(const Tensor& input, const Tensor& weight,
                                       const Tensor& grad_out,
                                       std::size_t stride, Tensor* grad_input,
                                       Tensor* grad_weight, Tensor* grad_bias) {
  const std::size_t batch = input.dim(0), cin = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  const std::size_t cout = weight.dim(1), k = weight.dim(2);
  const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      const double* gp = grad_out.plane(n, o);
      if (grad_bias) {
        double s = 0.0;
        for (std::size_t i = 0; i < oh * ow; ++i) s += gp[i];
        (*grad_bias)[o] += s;
      }
      for (std::size_t c = 0; c < cin; ++c) {
        const double* ip = input.plane(n, c);
        double* gip = grad_input ? grad_input->plane(n, c) : nullptr;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::size_t widx = ((c * cout + o) * k + ky) * k + kx;
            const double wv = weight[widx];
            double gw = 0.0;
            for (std::size_t y = 0; y < h; ++y) {
              const double* grow = gp + (y * stride + ky) * ow + kx;
              const double* irow = ip + y * w;
              if (gip) {
                double* girow = gip + y * w;
                for (std::size_t x = 0; x < w; ++x) {
                  girow[x] += wv * grow[x * stride];
                }
              }
              for (std::size_t x = 0; x < w; ++x) gw += irow[x] * grow[x * stride];
            }
            if (grad_weight) (*grad_weight)[widx] += gw;
          }
        }
      }
    }
  }
}

// Non-overlapping 2x2 max pooling; odd trailing rows/columns are dropped.
// argmax receives the flat input index of each window's winner, the first
// maximal element in row-major order.
inline Tensor max_pool_2x2_forward(const Tensor& input,
                                   std::vector<std::size_t>& argmax) {
  if (input.rank() != 4) {
    throw ConfigError("max_pool_2x2: input must be NCHW, got " +
                      shape_str(input.shape()));
  }
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  argmax.assign(out.size(), 0);
  std::size_t o = 0;
  for (std::size_t b = 0; b < n * c; ++b) {
    const std::size_t base = b * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x, ++o) {
        std::size_t best = base + 2 * y * w + 2 * x;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t idx : cand) {
          if (input[idx] > input[best]) best = idx;
        }
        out[o] = input[best];
        argmax[o] = best;
      }
    }
  }
  return out;
}

// x: [B, In], weight: [Out, In], bias: [Out] -> [B, Out].
inline Tensor fully_connected_forward(const Tensor& input, const Tensor& weight,
                                      const Tensor* bias) {
  if (input.rank() != 2 || weight.rank() != 2) {
    throw ConfigError("fully_connected: expected [B,In] input and [Out,In] "
                      "weight, got " + shape_str(input.shape()) + " and " +
                      shape_str(weight.shape()));
  }
  const std::size_t batch = input.dim(0), in = input.dim(1),
                    out_n = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ConfigError("fully_connected: weight columns " +
                      std::to_string(weight.dim(1)) + " != input length " +
                      std::to_string(in));
  }
  if (bias && bias->size() != out_n) {
    throw ConfigError("fully_connected: bias length " +
                      std::to_string(bias->size()) + " != outputs " +
                      std::to_string(out_n));
  }
  Tensor out({batch, out_n});
  for (std::size_t b = 0; b < batch; ++b) {
    const auto x = input.data().subspan(b * in, in);
    for (std::size_t o = 0; o < out_n; ++o) {
      out[b * out_n + o] =
          dot(weight.data().subspan(o * in, in), x) + (bias ? (*bias)[o] : 0.0);
    }
  }
  return out;
}

}  // namespace dglr::kernels
