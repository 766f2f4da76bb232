#pragma once

// One denoising block: exemplars from the whole image, a prefiltered data
// target, a per-patch regularization weight, and a graph-regularized QP per
// patch whose solutions are averaged back into an image. Blocks are cascaded
// with shared parameters.

#include <algorithm>
#include <memory>
#include <optional>
#include <thread>
#include <vector>

#include "dglr/autodiff.hpp"
#include "dglr/filter.hpp"
#include "dglr/graph.hpp"
#include "dglr/model.hpp"
#include "dglr/patch.hpp"
#include "dglr/qp.hpp"

namespace dglr::glrnet {

enum class ExemplarMode { learned, classic };

inline constexpr double kDefaultKappaMax = 250.0;
inline constexpr double kClassicBlurSigma = 1.0;

struct CascadeConfig {
  std::size_t cascades = 2;
  std::size_t patch = patch::kDefaultSide;
  std::size_t stride = patch::kDefaultStride;
  double kappa_max = kDefaultKappaMax;
  std::size_t exemplars = 3;
  ExemplarMode mode = ExemplarMode::learned;
  double two_eps_sq = 1.0;   // learned mode keeps this at 1
  double classic_mu = 8.0;
  double classic_two_eps_sq = 0.001;
  graph::SolverOptions solver{};
  std::size_t threads = 1;   // 1 = deterministic single-threaded

  void validate() const {
    if (cascades < 1) throw ConfigError("cascades must be >= 1");
    if (!(kappa_max > 1.0)) throw ConfigError("kappa_max must exceed 1");
    if (exemplars < 1) throw ConfigError("exemplar count must be >= 1");
    if (!(two_eps_sq > 0.0) || !(classic_two_eps_sq > 0.0)) {
      throw ConfigError("2*eps^2 must be positive");
    }
    if (!(classic_mu >= 0.0)) throw ConfigError("classic mu must be >= 0");
  }
};

// Per-block diagnostics.
struct BlockStats {
  std::size_t patches = 0;
  std::size_t clamped = 0;
  std::size_t max_iterations = 0;
  double max_residual = 0.0;
  std::vector<double> mu;  // effective per-patch weights
};

template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t k = t; k < count; k += threads) fn(k);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// [1,C,H,W] -> [K,C,s,s]
inline Var extract_patches(Tape& tape, const Var& plane, const patch::PatchPlan& plan) {
  const Shape& s = plane->value.shape();
  if (s.size() != 4 || s[0] != 1 || s[2] != plan.height || s[3] != plan.width) {
    throw ConfigError("extract_patches: plane " + shape_str(s) + " does not match plan " +
                      std::to_string(plan.height) + "x" + std::to_string(plan.width));
  }
  const std::size_t c_count = s[1], hw = plan.height * plan.width;
  const std::size_t k_count = plan.count(), m = plan.pixels_per_patch();
  Tensor out({k_count, c_count, plan.side, plan.side});
  for (std::size_t c = 0; c < c_count; ++c) {
    const auto ps = patch::extract_patches(plane->value.data().subspan(c * hw, hw), plan);
    for (std::size_t k = 0; k < k_count; ++k) {
      std::copy_n(ps.values.begin() + k * m, m, out.vec().begin() + (k * c_count + c) * m);
    }
  }
  Var y = make_var(std::move(out));
  if (tape.needs_grad(plane)) {
    y->requires_grad = true;
    tape.push([plane, y, plan, c_count, hw, k_count, m] {
      if (!y->has_grad()) return;
      Tensor& g = plane->grad_ref();
      for (std::size_t c = 0; c < c_count; ++c) {
        patch::PatchSet ps{k_count, m, std::vector<double>(k_count * m)};
        for (std::size_t k = 0; k < k_count; ++k) {
          std::copy_n(y->grad.vec().begin() + (k * c_count + c) * m, m,
                      ps.values.begin() + k * m);
        }
        const auto plane_grad = patch::scatter_add_patches(ps, plan);
        for (std::size_t i = 0; i < hw; ++i) g[c * hw + i] += plane_grad[i];
      }
    });
  }
  return y;
}

struct GlrLayerOptions {
  double kappa_max = kDefaultKappaMax;
  double two_eps_sq = 1.0;
  graph::SolverOptions solver{};
  std::size_t threads = 1;
};

// The graph Laplacian regularization layer.
//   exemplars [1,N,H,W], rhs [1,C,H,W], mu [K,1] (raw, pre-clamp)
//   -> [1,C,H,W], the equal-weight aggregate of per-patch QP solutions.
// All channels of a patch share one graph and one weight.
inline Var glr_layer(Tape& tape, const Var& exemplars, const Var& rhs, const Var& mu,
                     const patch::PatchPlan& plan, const GlrLayerOptions& opt,
                     BlockStats* stats = nullptr) {
  const Shape& es = exemplars->value.shape();
  const Shape& rs = rhs->value.shape();
  if (es.size() != 4 || rs.size() != 4 || es[0] != 1 || rs[0] != 1 ||
      es[2] != plan.height || es[3] != plan.width || rs[2] != plan.height ||
      rs[3] != plan.width) {
    throw ConfigError("glr_layer: exemplars " + shape_str(es) + " / rhs " +
                      shape_str(rs) + " do not match the patch plan");
  }
  const std::size_t k_count = plan.count();
  if (mu->value.size() != k_count) {
    throw ConfigError("glr_layer: " + std::to_string(mu->value.size()) +
                      " weights for " + std::to_string(k_count) + " patches");
  }
  const std::size_t n_ex = es[1], channels = rs[1];
  const std::size_t hw = plan.height * plan.width, m = plan.pixels_per_patch();
  auto pattern = graph::grid_pattern(plan.side, plan.side);

  std::vector<patch::PatchSet> ex_patches, rhs_patches;
  for (std::size_t n = 0; n < n_ex; ++n) {
    ex_patches.push_back(
        patch::extract_patches(exemplars->value.data().subspan(n * hw, hw), plan));
  }
  for (std::size_t c = 0; c < channels; ++c) {
    rhs_patches.push_back(
        patch::extract_patches(rhs->value.data().subspan(c * hw, hw), plan));
  }

  struct PatchState {
    graph::ExemplarPatch ex;
    std::vector<graph::GlrCache> caches;  // one per channel
  };
  auto states = std::make_shared<std::vector<PatchState>>(k_count);

  parallel_for(k_count, opt.threads, [&](std::size_t k) {
    PatchState& st = (*states)[k];
    st.ex.rows = st.ex.cols = plan.side;
    st.ex.count = n_ex;
    st.ex.two_eps_sq = opt.two_eps_sq;
    st.ex.features.resize(n_ex * m);
    for (std::size_t n = 0; n < n_ex; ++n) {
      const auto src = ex_patches[n].patch(k);
      std::copy(src.begin(), src.end(), st.ex.features.begin() + n * m);
    }
    auto lap = std::make_shared<const graph::SparseLaplacian8>(
        pattern, graph::compute_edge_weights(st.ex, *pattern));
    const graph::MuClamp mc = graph::clamp_mu(mu->value[k], *lap, opt.kappa_max);
    std::vector<std::vector<double>> rhs_ch;
    for (std::size_t c = 0; c < channels; ++c) {
      const auto src = rhs_patches[c].patch(k);
      rhs_ch.emplace_back(src.begin(), src.end());
    }
    st.caches = graph::solve_qp_multichannel(lap, mc, rhs_ch, opt.solver);
  });

  Tensor out({1, channels, plan.height, plan.width});
  for (std::size_t c = 0; c < channels; ++c) {
    patch::PatchSet sol{k_count, m, std::vector<double>(k_count * m)};
    for (std::size_t k = 0; k < k_count; ++k) {
      std::copy((*states)[k].caches[c].x.begin(), (*states)[k].caches[c].x.end(),
                sol.values.begin() + k * m);
    }
    const auto plane = patch::aggregate_patches(sol, plan);
    std::copy(plane.begin(), plane.end(), out.vec().begin() + c * hw);
  }

  if (stats) {
    stats->patches = k_count;
    stats->clamped = 0;
    stats->mu.clear();
    for (const auto& st : *states) {
      stats->clamped += st.caches.front().mu.clamped ? 1 : 0;
      stats->mu.push_back(st.caches.front().mu.mu);
      for (const auto& c : st.caches) {
        stats->max_iterations = std::max(stats->max_iterations, c.stats.iterations);
        stats->max_residual = std::max(stats->max_residual, c.stats.residual);
      }
    }
  }

  Var y = make_var(std::move(out));
  if (tape.needs_grad(exemplars, rhs, mu)) {
    y->requires_grad = true;
    tape.push([exemplars, rhs, mu, y, states, plan, pattern, opt, n_ex, channels, hw,
               m, k_count] {
      if (!y->has_grad()) return;
      std::vector<patch::PatchSet> g_patches;
      for (std::size_t c = 0; c < channels; ++c) {
        g_patches.push_back(
            patch::aggregate_backward(y->grad.data().subspan(c * hw, hw), plan));
      }
      struct PatchGrad {
        double mu = 0.0;
        std::vector<double> rhs;       // channel-major, channels * m
        std::vector<double> features;  // exemplar-major, N * m
      };
      std::vector<PatchGrad> grads(k_count);
      parallel_for(k_count, opt.threads, [&](std::size_t k) {
        const PatchState& st = (*states)[k];
        PatchGrad& pg = grads[k];
        pg.rhs.assign(channels * m, 0.0);
        std::vector<double> gw(pattern->edges.size(), 0.0);
        for (std::size_t c = 0; c < channels; ++c) {
          const auto qg = graph::backward_qp(st.caches[c], g_patches[c].patch(k));
          pg.mu += qg.grad_mu_raw;
          std::copy(qg.grad_rhs.begin(), qg.grad_rhs.end(), pg.rhs.begin() + c * m);
          for (std::size_t e = 0; e < gw.size(); ++e) gw[e] += qg.grad_weights[e];
        }
        pg.features = graph::backward_graph(
            st.ex, *pattern, st.caches.front().laplacian->weights(), gw);
      });
      // Sequential scatter in anchor order keeps the sums deterministic.
      if (mu->requires_grad) {
        Tensor& gmu = mu->grad_ref();
        for (std::size_t k = 0; k < k_count; ++k) gmu[k] += grads[k].mu;
      }
      auto scatter = [&](const Var& target, std::size_t planes, auto member) {
        Tensor& g = target->grad_ref();
        for (std::size_t c = 0; c < planes; ++c) {
          patch::PatchSet ps{k_count, m, std::vector<double>(k_count * m)};
          for (std::size_t k = 0; k < k_count; ++k) {
            const auto& src = grads[k].*member;
            std::copy_n(src.begin() + c * m, m, ps.values.begin() + k * m);
          }
          const auto plane = patch::scatter_add_patches(ps, plan);
          for (std::size_t i = 0; i < hw; ++i) g[c * hw + i] += plane[i];
        }
      };
      if (rhs->requires_grad) scatter(rhs, channels, &PatchGrad::rhs);
      if (exemplars->requires_grad) scatter(exemplars, n_ex, &PatchGrad::features);
    });
  }
  return y;
}

struct BlockOutput {
  Var output;
  BlockStats stats;
};

// Classic exemplars: one Gaussian-blurred copy of each input channel.
inline Tensor classic_exemplars(const Tensor& image) {
  const std::size_t c_count = image.dim(1), h = image.dim(2), w = image.dim(3);
  Tensor out(image.shape());
  for (std::size_t c = 0; c < c_count; ++c) {
    const auto blurred =
        filter::gaussian_blur(image.data().subspan(c * h * w, h * w), h, w, kClassicBlurSigma);
    std::copy(blurred.begin(), blurred.end(), out.vec().begin() + c * h * w);
  }
  return out;
}

// One block. `params` may be null in classic mode.
inline BlockOutput glrnet_block_forward(Tape& tape, const Var& image,
                                        const model::ModelParams* params,
                                        const CascadeConfig& cfg) {
  cfg.validate();
  const Shape& s = image->value.shape();
  if (s.size() != 4 || s[0] != 1) {
    throw ConfigError("block input must be [1,C,H,W], got " + shape_str(s));
  }
  const auto plan = patch::plan_patches(s[2], s[3], cfg.patch, cfg.stride);
  GlrLayerOptions opt;
  opt.kappa_max = cfg.kappa_max;
  opt.solver = cfg.solver;
  opt.threads = cfg.threads;

  BlockOutput out;
  if (cfg.mode == ExemplarMode::classic) {
    Var ex = make_var(classic_exemplars(image->value));
    Var mu = make_var(Tensor({plan.count(), 1}, cfg.classic_mu));
    opt.two_eps_sq = cfg.classic_two_eps_sq;
    out.output = glr_layer(tape, ex, image, mu, plan, opt, &out.stats);
    return out;
  }
  if (!params) throw UsageError("learned mode requires model parameters");
  if (params->shape().patch != cfg.patch) {
    throw ConfigError("model was built for patch side " +
                      std::to_string(params->shape().patch) + ", config uses " +
                      std::to_string(cfg.patch));
  }
  opt.two_eps_sq = cfg.two_eps_sq;
  Var ex = model::cnn_f_forward(tape, *params, image);
  Var yhat = model::cnn_prefilter_forward(tape, *params, image);
  Var mu = model::cnn_mu_forward(tape, *params, extract_patches(tape, image, plan));
  out.output = glr_layer(tape, ex, yhat, mu, plan, opt, &out.stats);
  return out;
}

struct CascadeOutput {
  Var output;
  std::vector<BlockStats> blocks;
};

// Applies the same block T times; every stage reads the same parameters.
inline CascadeOutput cascade_forward(Tape& tape, const Var& image,
                                     const model::ModelParams* params,
                                     const CascadeConfig& cfg) {
  cfg.validate();
  CascadeOutput out;
  Var x = image;
  for (std::size_t t = 0; t < cfg.cascades; ++t) {
    BlockOutput b = glrnet_block_forward(tape, x, params, cfg);
    x = b.output;
    out.blocks.push_back(std::move(b.stats));
  }
  out.output = x;
  return out;
}

// (1/(HW)) * sum (gt - out)^2 over one plane (all channels for color).
inline Var loss_mse(Tape& tape, const Tensor& ground_truth, const Var& output) {
  if (ground_truth.shape() != output->value.shape()) {
    throw ConfigError("loss: ground truth " + shape_str(ground_truth.shape()) +
                      " vs output " + shape_str(output->value.shape()));
  }
  return ops::mse(tape, output, ground_truth);
}

// Forward-only convenience: denoise one image.
inline Tensor denoise(const Tensor& noisy, const model::ModelParams* params,
                      const CascadeConfig& cfg, std::vector<BlockStats>* stats = nullptr) {
  Tape tape(Tape::Mode::inference);
  auto out = cascade_forward(tape, make_var(noisy), params, cfg);
  if (stats) *stats = out.blocks;
  return out.output->value;
}

}  // namespace dglr::glrnet
