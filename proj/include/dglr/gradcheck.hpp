#pragma once

// Central finite differences against the analytic backward passes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "dglr/glrnet.hpp"
#include "dglr/graph.hpp"
#include "dglr/model.hpp"
#include "dglr/qp.hpp"

namespace dglr::gradcheck {

inline constexpr double kStep = 1e-6;
inline constexpr double kComponentThreshold = 1e-5;
inline constexpr double kCascadeThreshold = 1e-4;
inline constexpr double kLinearThreshold = 1e-9;

// Finite differences divide solver error by 2h. The checks therefore run
// a fixed, generous step count that leaves the iterate at rounding level
// instead of stopping wherever the tolerance happens to be crossed.
inline graph::SolverOptions check_solver() {
  graph::SolverOptions o;
  o.tolerance = 1e-13;
  o.max_iter_per_vertex = 50;
  o.min_iterations = 300;
  return o;
}

// ||a - f|| / max(||a||, ||f||, floor); 0 when everything vanishes. The
// floor keeps gradients that are exactly zero (both sides at rounding
// level) from reading as a 100% mismatch.
inline double relative_error(std::span<const double> analytic, std::span<const double> fd,
                             double floor = 0.0) {
  double diff = 0.0, na = 0.0, nf = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - fd[i]) * (analytic[i] - fd[i]);
    na += analytic[i] * analytic[i];
    nf += fd[i] * fd[i];
  }
  const double denom = std::max(std::sqrt(std::max(na, nf)), floor);
  return denom < 1e-300 ? 0.0 : std::sqrt(diff) / denom;
}

inline double relative_error(double analytic, double fd, double floor = 0.0) {
  return relative_error(std::span<const double>(&analytic, 1), std::span<const double>(&fd, 1),
                        floor);
}

struct Entry {
  std::string name;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  bool pass() const { return max_rel_error < threshold; }
};

struct Report {
  std::vector<Entry> entries;
  bool pass() const {
    return std::all_of(entries.begin(), entries.end(), [](const Entry& e) { return e.pass(); });
  }
  std::string str() const {
    std::string out;
    for (const auto& e : entries) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%-4s %-34s max_rel_err %.3e (threshold %.0e)\n",
                    e.pass() ? "PASS" : "FAIL", e.name.c_str(), e.max_rel_error, e.threshold);
      out += buf;
    }
    return out;
  }
};

// ---- tape ops -------------------------------------------------------------

// Checks d loss / d v element by element for every listed var. `build`
// must record a fresh forward pass and return the scalar loss.
inline double check_tape_function(const std::vector<Var>& vars,
                                  const std::function<Var(Tape&)>& build,
                                  double h = kStep) {
  for (const Var& v : vars) {
    v->requires_grad = true;
    v->zero_grad();
  }
  {
    Tape tape;
    tape.backward(build(tape));
  }
  auto eval = [&] {
    Tape tape(Tape::Mode::inference);
    return build(tape)->value[0];
  };
  double worst = 0.0;
  for (const Var& v : vars) {
    std::vector<double> fd(v->value.size());
    for (std::size_t i = 0; i < fd.size(); ++i) {
      const double orig = v->value[i];
      v->value[i] = orig + h;
      const double up = eval();
      v->value[i] = orig - h;
      const double down = eval();
      v->value[i] = orig;
      fd[i] = (up - down) / (2.0 * h);
    }
    worst = std::max(worst, relative_error(v->grad.data(), fd));
  }
  return worst;
}

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.vec()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero so +-h never crosses a ReLU kink.
inline Tensor kink_free_tensor(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.vec()) {
    const double mag = rng.uniform(0.05, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

// Quadratic readout so every op is checked through a nonlinear loss.
inline Var readout(Tape& tape, const Var& y, const Tensor& target) {
  return ops::mse(tape, y, target);
}

inline std::vector<Entry> check_ops(Rng& rng) {
  std::vector<Entry> out;
  auto entry = [&](const std::string& name, double err) {
    out.push_back({"op/" + name, err, kComponentThreshold});
  };
  {
    Var x = make_var(random_tensor(rng, {2, 3, 5, 6}));
    Var w = make_var(random_tensor(rng, {4, 3, 3, 3}));
    Var b = make_var(random_tensor(rng, {4}));
    const Tensor t = random_tensor(rng, {2, 4, 5, 6});
    entry("conv2d", check_tape_function({x, w, b}, [&](Tape& tp) {
            return readout(tp, ops::conv2d(tp, x, w, b), t);
          }));
  }
  {
    Var x = make_var(random_tensor(rng, {1, 2, 7, 6}));
    Var w = make_var(random_tensor(rng, {3, 2, 3, 3}));
    Var b = make_var(random_tensor(rng, {3}));
    const Tensor t = random_tensor(rng, {1, 3, 4, 3});
    entry("conv2d_stride2", check_tape_function({x, w, b}, [&](Tape& tp) {
            return readout(tp, ops::conv2d(tp, x, w, b, 2), t);
          }));
  }
  {
    Var x = make_var(random_tensor(rng, {1, 3, 3, 4}));
    Var w = make_var(random_tensor(rng, {3, 2, 2, 2}));
    Var b = make_var(random_tensor(rng, {2}));
    const Tensor t = random_tensor(rng, {1, 2, 6, 8});
    entry("transposed_conv2d", check_tape_function({x, w, b}, [&](Tape& tp) {
            return readout(tp, ops::transposed_conv2d(tp, x, w, b), t);
          }));
  }
  {
    Var x = make_var(kink_free_tensor(rng, {2, 2, 4, 4}));
    const Tensor t = random_tensor(rng, {2, 2, 4, 4});
    entry("relu", check_tape_function({x}, [&](Tape& tp) {
            return readout(tp, ops::relu(tp, x), t);
          }));
  }
  {
    // Distinct values spaced well beyond h, so the argmax is stable.
    Tensor v({1, 2, 5, 6});
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.01 * static_cast<double>(i);
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
    Var x = make_var(v);
    const Tensor t = random_tensor(rng, {1, 2, 2, 3});
    entry("max_pool_2x2", check_tape_function({x}, [&](Tape& tp) {
            return readout(tp, ops::max_pool_2x2(tp, x), t);
          }));
  }
  {
    Var x = make_var(random_tensor(rng, {3, 7}));
    Var w = make_var(random_tensor(rng, {4, 7}));
    Var b = make_var(random_tensor(rng, {4}));
    const Tensor t = random_tensor(rng, {3, 4});
    entry("fully_connected", check_tape_function({x, w, b}, [&](Tape& tp) {
            return readout(tp, ops::fully_connected(tp, x, w, b), t);
          }));
  }
  {
    Var a = make_var(random_tensor(rng, {1, 2, 3, 3}));
    Var b = make_var(random_tensor(rng, {1, 3, 3, 3}));
    const Tensor t = random_tensor(rng, {1, 5, 3, 3});
    entry("concat_channels", check_tape_function({a, b}, [&](Tape& tp) {
            return readout(tp, ops::concat_channels(tp, a, b), t);
          }));
  }
  {
    Var a = make_var(random_tensor(rng, {2, 3}));
    Var b = make_var(random_tensor(rng, {2, 3}));
    const Tensor t = random_tensor(rng, {6});
    entry("add_scale_reshape", check_tape_function({a, b}, [&](Tape& tp) {
            Var s = ops::scale(tp, ops::add(tp, a, b), 0.7);
            return readout(tp, ops::reshape(tp, s, {6}), t);
          }));
  }
  {
    Var a = make_var(random_tensor(rng, {2, 5}));
    entry("sum_half_squared_norm", check_tape_function({a}, [&](Tape& tp) {
            return ops::add(tp, ops::sum(tp, a), ops::half_squared_norm(tp, a));
          }));
  }
  return out;
}

// A network with no nonlinearity read out linearly: every parameter enters
// multilinearly, so central differences are exact up to rounding for any
// step. A large step keeps that rounding well under the threshold.
inline Entry check_linear_network(Rng& rng) {
  Var x = make_var(random_tensor(rng, {1, 2, 6, 6}));
  Var w1 = make_var(random_tensor(rng, {3, 2, 3, 3}));
  Var b1 = make_var(random_tensor(rng, {3}));
  Var w2 = make_var(random_tensor(rng, {3, 2, 2, 2}));
  Var b2 = make_var(random_tensor(rng, {2}));
  Var r = make_var(random_tensor(rng, {1, 2 * 6 * 6}));
  Var rb = make_var(Tensor({1}));
  const double err = check_tape_function({x, w1, b1, w2, b2}, [&](Tape& tp) {
    Var h = ops::conv2d(tp, x, w1, b1, 2);           // 3x3x3
    h = ops::transposed_conv2d(tp, h, w2, b2);        // 2x6x6
    return ops::sum(tp, ops::fully_connected(tp, ops::flatten(tp, h), r, rb));
  }, 1e-2);
  return {"linear_network", err, kLinearThreshold};
}

// ---- the graph layer ------------------------------------------------------

// One random patch problem: N exemplar maps, a weight, a data target and a
// quadratic readout e(x) = 1/2 ||x - t||^2.
struct QpInstance {
  graph::ExemplarPatch ex;
  double mu = 0.0;
  std::vector<double> rhs;
  std::vector<double> target;
};

inline QpInstance random_qp_instance(Rng& rng, std::size_t rows = 6, std::size_t cols = 6,
                                     std::size_t n = 2, double mu_hi = 10.0) {
  QpInstance q;
  q.ex.rows = rows;
  q.ex.cols = cols;
  q.ex.count = n;
  q.ex.features.resize(n * rows * cols);
  for (double& f : q.ex.features) f = rng.uniform();
  do {
    q.mu = rng.uniform(0.0, mu_hi);
  } while (q.mu == 0.0);
  q.rhs.resize(rows * cols);
  q.target.resize(rows * cols);
  for (double& v : q.rhs) v = rng.uniform();
  for (double& v : q.target) v = rng.uniform();
  return q;
}

inline double qp_loss(const std::vector<double>& x, const std::vector<double>& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += 0.5 * (x[i] - t[i]) * (x[i] - t[i]);
  return s;
}

struct QpErrors {
  double mu = 0.0, rhs = 0.0, weights = 0.0, features = 0.0;
};

// Gradients of e(x*(mu, rhs, w(f))) checked against central differences.
// The clamp is applied as in the forward pass (kappa_max = 250).
inline QpErrors check_qp_instance(const QpInstance& q, double h = kStep,
                                  double kappa_max = glrnet::kDefaultKappaMax) {
  const auto opt = check_solver();
  auto pattern = graph::grid_pattern(q.ex.rows, q.ex.cols);
  auto solve_w = [&](double mu_raw, const std::vector<double>& rhs,
                     const std::vector<double>& w) {
    auto lap = std::make_shared<const graph::SparseLaplacian8>(pattern, w);
    return graph::solve_qp(lap, graph::clamp_mu(mu_raw, *lap, kappa_max), rhs, opt);
  };
  auto solve_f = [&](double mu_raw, const std::vector<double>& rhs,
                     const graph::ExemplarPatch& ex) {
    return solve_w(mu_raw, rhs, graph::compute_edge_weights(ex, *pattern));
  };

  const auto weights = graph::compute_edge_weights(q.ex, *pattern);
  const auto cache = solve_w(q.mu, q.rhs, weights);
  std::vector<double> upstream(cache.x.size());
  for (std::size_t i = 0; i < upstream.size(); ++i) upstream[i] = cache.x[i] - q.target[i];
  const auto g = graph::backward_qp(cache, upstream);
  const auto gf = graph::backward_graph(q.ex, *pattern, weights, g.grad_weights);

  QpErrors err;
  // mu is a single scalar of order 1-10 with an O(1) loss on top of it, where
  // h = 1e-6 leaves rounding noise near 1e-10 against derivatives that can be
  // 1e-4. Use the usual central-difference step cbrt(eps) * scale instead.
  const double hm = std::cbrt(std::numeric_limits<double>::epsilon()) * std::max(1.0, q.mu);
  const double fd_mu = (qp_loss(solve_w(q.mu + hm, q.rhs, weights).x, q.target) -
                        qp_loss(solve_w(q.mu - hm, q.rhs, weights).x, q.target)) /
                       (2.0 * hm);
  err.mu = relative_error(g.grad_mu_raw, fd_mu);

  std::vector<double> fd(q.rhs.size());
  auto rhs = q.rhs;
  for (std::size_t i = 0; i < rhs.size(); ++i) {
    rhs[i] = q.rhs[i] + h;
    const double up = qp_loss(solve_w(q.mu, rhs, weights).x, q.target);
    rhs[i] = q.rhs[i] - h;
    const double down = qp_loss(solve_w(q.mu, rhs, weights).x, q.target);
    rhs[i] = q.rhs[i];
    fd[i] = (up - down) / (2.0 * h);
  }
  err.rhs = relative_error(g.grad_rhs, fd);

  fd.assign(weights.size(), 0.0);
  auto w = weights;
  for (std::size_t e = 0; e < w.size(); ++e) {
    w[e] = weights[e] + h;
    const double up = qp_loss(solve_w(q.mu, q.rhs, w).x, q.target);
    w[e] = weights[e] - h;
    const double down = qp_loss(solve_w(q.mu, q.rhs, w).x, q.target);
    w[e] = weights[e];
    fd[e] = (up - down) / (2.0 * h);
  }
  err.weights = relative_error(g.grad_weights, fd);

  fd.assign(q.ex.features.size(), 0.0);
  auto ex = q.ex;
  for (std::size_t k = 0; k < ex.features.size(); ++k) {
    ex.features[k] = q.ex.features[k] + h;
    const double up = qp_loss(solve_f(q.mu, q.rhs, ex).x, q.target);
    ex.features[k] = q.ex.features[k] - h;
    const double down = qp_loss(solve_f(q.mu, q.rhs, ex).x, q.target);
    ex.features[k] = q.ex.features[k];
    fd[k] = (up - down) / (2.0 * h);
  }
  err.features = relative_error(gf, fd);
  return err;
}

// Two pixels joined by one unit-weight edge, mu = 1, rhs = (1, 0) and
// e(x) = 1/2 ||x - (1/2, 1/2)||^2: x* = (2/3, 1/3), de/dmu = -1/27.
inline double two_vertex_grad_mu() {
  auto pattern = graph::grid_pattern(1, 2);
  auto lap = std::make_shared<const graph::SparseLaplacian8>(pattern, std::vector<double>{1.0});
  const std::vector<double> rhs = {1.0, 0.0};
  const auto cache = graph::solve_qp(lap, graph::clamp_mu(1.0, *lap, glrnet::kDefaultKappaMax),
                                     rhs, check_solver());
  const std::vector<double> upstream = {cache.x[0] - 0.5, cache.x[1] - 0.5};
  return graph::backward_qp(cache, upstream).grad_mu_raw;
}

// ---- full cascade ---------------------------------------------------------

inline constexpr double kExemplarGain = 10.0;
inline constexpr double kNoiseUlps = 64.0;
inline constexpr double kSmoothness = 1e-5;
inline constexpr std::size_t kStepReductions = 3;

struct TinyCascade {
  model::ModelShape shape;
  glrnet::CascadeConfig cfg;
  Tensor noisy;
  Tensor clean;
};

// 16x16 image, 8x8 patches at stride 6, N = 2, T = 2, reduced widths.
inline TinyCascade tiny_cascade(Rng& rng) {
  TinyCascade t;
  t.shape.channels = 1;
  t.shape.exemplars = 2;
  t.shape.patch = 8;
  t.shape.widths = {4, 4, 4, 4, 2, 2, 4};
  t.cfg.cascades = 2;
  t.cfg.patch = 8;
  t.cfg.stride = 6;
  t.cfg.exemplars = 2;
  t.cfg.solver = check_solver();
  t.clean = Tensor({1, 1, 16, 16});
  for (std::size_t y = 0; y < 16; ++y) {
    for (std::size_t x = 0; x < 16; ++x) {
      t.clean.at(0, 0, y, x) = (x < 8 ? 0.25 : 0.75) + 0.01 * static_cast<double>(y);
    }
  }
  t.noisy = t.clean;
  for (double& v : t.noisy.vec()) v += 0.1 * rng.normal();
  return t;
}

// Per parameter tensor: the analytic directional derivative along a random
// direction vs the central difference of the loss along it. Returns the
// worst relative error; `per_tensor` receives each tensor's error.
inline double check_cascade(std::uint64_t seed,
                            std::vector<std::pair<std::string, double>>* per_tensor = nullptr,
                            double h = kStep) {
  Rng rng(seed);
  TinyCascade t = tiny_cascade(rng);
  model::ModelParams params(t.shape, seed);
  // Zero biases put dead-input ReLUs exactly on their kink; move off it.
  for (const auto& e : params.params().entries()) {
    if (e.name.ends_with(".b") && e.name != "cnn_mu/fc2.b") {
      for (double& v : e.var->value.vec()) v = rng.uniform(-0.1, 0.1);
    }
  }
  // Glorot-sized exemplars barely differ, leaving every w_ij near 1 and the
  // exemplar-net gradients at the solver's noise floor.
  for (double& v : params["cnn_f/out.w"]->value.vec()) v *= kExemplarGain;
  // The zero-initialized prefilter head would block every prefilter gradient.
  for (double& v : params["cnn_y/c4.w"]->value.vec()) v = rng.uniform(-0.1, 0.1);
  auto loss_of = [&](Tape& tape) {
    auto out = glrnet::cascade_forward(tape, make_var(t.noisy), &params, t.cfg);
    return glrnet::loss_mse(tape, t.clean, out.output);
  };
  params.params().zero_grad();
  double loss0 = 0.0;
  {
    Tape tape;
    Var l = loss_of(tape);
    loss0 = l->value[0];
    tape.backward(l);
  }
  double worst = 0.0;
  for (const auto& e : params.params().entries()) {
    const Tensor orig = e.var->value;
    const Tensor dir = random_tensor(rng, orig.shape());
    const double analytic = dot(e.var->grad.data(), dir.data());
    auto shifted = [&](double s) {
      for (std::size_t i = 0; i < orig.size(); ++i) e.var->value[i] = orig[i] + s * dir[i];
      Tape tape(Tape::Mode::inference);
      return loss_of(tape)->value[0];
    };
    double err = 0.0;
    double step = h;
    for (std::size_t attempt = 0; attempt < kStepReductions; ++attempt, step *= 0.1) {
      // Rounding in the loss alone limits a central difference to about
      // eps * |loss| / step; a derivative below that is compared absolutely.
      const double floor = kNoiseUlps * std::numeric_limits<double>::epsilon() *
                           std::abs(loss0) / step / kCascadeThreshold;
      const double fd = (shifted(step) - shifted(-step)) / (2.0 * step);
      const double fd_half = (shifted(0.5 * step) - shifted(-0.5 * step)) / step;
      err = relative_error(analytic, fd, floor);
      // A ReLU or pooling switch inside the stencil shows up as the two
      // step sizes disagreeing; the base point sits within a step of a
      // kink, so shrink the stencil.
      if (relative_error(fd_half, fd, floor) < kSmoothness) break;
    }
    e.var->value = orig;
    if (per_tensor) per_tensor->push_back({e.name, err});
    worst = std::max(worst, err);
  }
  return worst;
}

// ---- suite ----------------------------------------------------------------

inline Report gradcheck_suite(std::uint64_t seed, std::size_t qp_instances = 10) {
  Report r;
  Rng rng(seed);
  for (auto& e : check_ops(rng)) r.entries.push_back(std::move(e));
  r.entries.push_back(check_linear_network(rng));

  QpErrors worst;
  for (std::size_t k = 0; k < qp_instances; ++k) {
    const QpErrors e = check_qp_instance(random_qp_instance(rng));
    worst.mu = std::max(worst.mu, e.mu);
    worst.rhs = std::max(worst.rhs, e.rhs);
    worst.weights = std::max(worst.weights, e.weights);
    worst.features = std::max(worst.features, e.features);
  }
  r.entries.push_back({"backward_qp/mu", worst.mu, kComponentThreshold});
  r.entries.push_back({"backward_qp/rhs", worst.rhs, kComponentThreshold});
  r.entries.push_back({"backward_qp/weights", worst.weights, kComponentThreshold});
  r.entries.push_back({"backward_graph/exemplars", worst.features, kComponentThreshold});
  r.entries.push_back(
      {"backward_qp/two_vertex", std::abs(two_vertex_grad_mu() + 1.0 / 27.0) * 27.0, 1e-9});
  r.entries.push_back({"cascade/tiny", check_cascade(rng.next_u64()), kCascadeThreshold});
  return r;
}

}  // namespace dglr::gradcheck
