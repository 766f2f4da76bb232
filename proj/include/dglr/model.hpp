#pragma once

// The three trainable sub-networks of one denoising block:
//   exemplar net  - hourglass encoder/decoder with skip connections that
//                   maps the whole image to N exemplar planes;
//   prefilter net - 4-conv residual filter producing the data-term target;
//   weight net    - conv/pool/fc stack mapping each patch to mu_k >= 0.
// One ModelParams instance is shared by every cascade stage.

#include <cmath>
#include <string>
#include <vector>

#include "dglr/autodiff.hpp"
#include "dglr/params.hpp"

namespace dglr::model {

struct NetworkWidths {
  std::size_t exemplar1 = 16;
  std::size_t exemplar2 = 32;
  std::size_t exemplar3 = 64;
  std::size_t prefilter = 16;
  std::size_t mu1 = 8;
  std::size_t mu2 = 16;
  std::size_t mu_hidden = 32;
};

struct ModelShape {
  std::size_t channels = 1;   // image channels (1 gray, 3 color)
  std::size_t exemplars = 3;  // N
  std::size_t patch = 26;     // side of the patches seen by the weight net
  NetworkWidths widths{};
};

enum class Init { glorot, zeros };

// Initial bias of the last weight-net layer; keeps the final ReLU active
// at the start of training.
inline constexpr double kMuHeadBias = 1.0;
// The prefilter's last conv starts at zero so the block initially sees the
// noisy input itself; a Glorot residual shifts the image by O(1).

class ModelParams {
 public:
  explicit ModelParams(const ModelShape& shape, std::uint64_t seed = 0,
                       Init init = Init::glorot)
      : shape_(shape) {
    if (shape.channels == 0 || shape.exemplars == 0) {
      throw ConfigError("model needs at least one channel and one exemplar");
    }
    if (shape.patch / 4 == 0) {
      throw ConfigError("weight net needs patches of side >= 4");
    }
    Rng rng(seed);
    const auto& w = shape.widths;
    const std::size_t c = shape.channels;
    auto conv = [&](const std::string& name, std::size_t in, std::size_t out,
                    std::size_t k) {
      add_weight(name + ".w", {out, in, k, k}, in * k * k, out * k * k, rng, init);
      params_.add(name + ".b", Tensor({out}));
    };
    auto tconv = [&](const std::string& name, std::size_t in, std::size_t out) {
      add_weight(name + ".w", {in, out, 2, 2}, in * 4, out * 4, rng, init);
      params_.add(name + ".b", Tensor({out}));
    };
    auto fc = [&](const std::string& name, std::size_t in, std::size_t out) {
      add_weight(name + ".w", {out, in}, in, out, rng, init);
      params_.add(name + ".b", Tensor({out}));
    };

    conv("cnn_f/enc1a", c, w.exemplar1, 3);
    conv("cnn_f/enc1b", w.exemplar1, w.exemplar1, 3);
    conv("cnn_f/down1", w.exemplar1, w.exemplar2, 3);
    conv("cnn_f/enc2", w.exemplar2, w.exemplar2, 3);
    conv("cnn_f/down2", w.exemplar2, w.exemplar3, 3);
    conv("cnn_f/enc3", w.exemplar3, w.exemplar3, 3);
    tconv("cnn_f/up2", w.exemplar3, w.exemplar2);
    conv("cnn_f/merge2", 2 * w.exemplar2, w.exemplar2, 3);
    tconv("cnn_f/up1", w.exemplar2, w.exemplar1);
    conv("cnn_f/merge1", 2 * w.exemplar1, w.exemplar1, 3);
    conv("cnn_f/out", w.exemplar1, shape.exemplars, 3);

    conv("cnn_y/c1", c, w.prefilter, 3);
    conv("cnn_y/c2", w.prefilter, w.prefilter, 3);
    conv("cnn_y/c3", w.prefilter, w.prefilter, 3);
    conv("cnn_y/c4", w.prefilter, c, 3);

    conv("cnn_mu/c1", c, w.mu1, 3);
    conv("cnn_mu/c2", w.mu1, w.mu1, 3);
    conv("cnn_mu/c3", w.mu1, w.mu2, 3);
    conv("cnn_mu/c4", w.mu2, w.mu2, 3);
    const std::size_t pooled = (shape.patch / 2) / 2;
    fc("cnn_mu/fc1", w.mu2 * pooled * pooled, w.mu_hidden);
    fc("cnn_mu/fc2", w.mu_hidden, 1);
    if (init == Init::glorot) {
      params_.get("cnn_mu/fc2.b")->value[0] = kMuHeadBias;
      params_.get("cnn_y/c4.w")->value.fill(0.0);
    }
  }

  const ModelShape& shape() const { return shape_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const Var& operator[](const std::string& name) const { return params_.get(name); }

  // Receptive field of the exemplar net along its deepest path, in pixels.
  // A k-tap conv adds (k-1)*jump; stride-2 convs double the jump and the
  // 2x2/stride-2 transposed convs halve it without widening the field.
  static std::size_t exemplar_receptive_field() {
    struct Layer { std::size_t k; bool down; bool up; };
    const Layer path[] = {{3, false, false}, {3, false, false}, {3, true, false},
                          {3, false, false}, {3, true, false},  {3, false, false},
                          {2, false, true},  {3, false, false}, {2, false, true},
                          {3, false, false}, {3, false, false}};
    std::size_t r = 1, jump = 1;
    for (const Layer& l : path) {
      if (l.up) {
        jump /= 2;
        continue;
      }
      r += (l.k - 1) * jump;
      if (l.down) jump *= 2;
    }
    return r;
  }

 private:
  void add_weight(const std::string& name, Shape shape, std::size_t fan_in,
                  std::size_t fan_out, Rng& rng, Init init) {
    Tensor t(std::move(shape));
    if (init == Init::glorot) {
      const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (double& v : t.vec()) v = rng.uniform(-a, a);
    }
    params_.add(name, std::move(t));
  }

  ModelShape shape_;
  ParamSet params_;
};

namespace detail {
inline Var conv(Tape& tape, const ModelParams& p, const std::string& name,
                const Var& x, std::size_t stride = 1) {
  return ops::conv2d(tape, x, p[name + ".w"], p[name + ".b"], stride);
}
inline Var conv_relu(Tape& tape, const ModelParams& p, const std::string& name,
                     const Var& x, std::size_t stride = 1) {
  return ops::relu(tape, conv(tape, p, name, x, stride));
}
}  // namespace detail

// [1,C,H,W] -> [1,N,H,W]; H and W must be multiples of 4.
inline Var cnn_f_forward(Tape& tape, const ModelParams& p, const Var& image) {
  const Shape& s = image->value.shape();
  if (s.size() != 4 || s[2] % 4 != 0 || s[3] % 4 != 0) {
    throw SizingError("exemplar net input " + shape_str(s) +
                      " must have height and width that are multiples of 4; "
                      "pad or crop the image first");
  }
  using detail::conv;
  using detail::conv_relu;
  Var e1 = conv_relu(tape, p, "cnn_f/enc1b", conv_relu(tape, p, "cnn_f/enc1a", image));
  Var e2 = conv_relu(tape, p, "cnn_f/enc2", conv_relu(tape, p, "cnn_f/down1", e1, 2));
  Var e3 = conv_relu(tape, p, "cnn_f/enc3", conv_relu(tape, p, "cnn_f/down2", e2, 2));
  Var u2 = ops::transposed_conv2d(tape, e3, p["cnn_f/up2.w"], p["cnn_f/up2.b"]);
  Var d2 = conv_relu(tape, p, "cnn_f/merge2", ops::concat_channels(tape, u2, e2));
  Var u1 = ops::transposed_conv2d(tape, d2, p["cnn_f/up1.w"], p["cnn_f/up1.b"]);
  Var d1 = conv_relu(tape, p, "cnn_f/merge1", ops::concat_channels(tape, u1, e1));
  return conv(tape, p, "cnn_f/out", d1);
}

// Y + residual(Y).
inline Var cnn_prefilter_forward(Tape& tape, const ModelParams& p, const Var& image) {
  using detail::conv;
  using detail::conv_relu;
  Var h = conv_relu(tape, p, "cnn_y/c1", image);
  h = conv_relu(tape, p, "cnn_y/c2", h);
  h = conv_relu(tape, p, "cnn_y/c3", h);
  return ops::add(tape, image, conv(tape, p, "cnn_y/c4", h));
}

// [K,C,s,s] patches -> [K,1] nonnegative weights.
inline Var cnn_mu_forward(Tape& tape, const ModelParams& p, const Var& patches) {
  const Shape& s = patches->value.shape();
  const std::size_t side = p.shape().patch;
  if (s.size() != 4 || s[1] != p.shape().channels || s[2] != side || s[3] != side) {
    throw SizingError("weight net expects [K," + std::to_string(p.shape().channels) +
                      "," + std::to_string(side) + "," + std::to_string(side) +
                      "] patches, got " + shape_str(s));
  }
  using detail::conv_relu;
  Var h = conv_relu(tape, p, "cnn_mu/c2", conv_relu(tape, p, "cnn_mu/c1", patches));
  h = ops::max_pool_2x2(tape, h);
  h = conv_relu(tape, p, "cnn_mu/c4", conv_relu(tape, p, "cnn_mu/c3", h));
  h = ops::max_pool_2x2(tape, h);
  h = ops::flatten(tape, h);
  h = ops::relu(tape, ops::fully_connected(tape, h, p["cnn_mu/fc1.w"], p["cnn_mu/fc1.b"]));
  h = ops::fully_connected(tape, h, p["cnn_mu/fc2.w"], p["cnn_mu/fc2.b"]);
  return ops::relu(tape, h);
}

}  // namespace dglr::model
