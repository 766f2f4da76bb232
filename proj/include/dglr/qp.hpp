#pragma once

// Solving (I + mu L) x = y for one patch and differentiating through the
// solution. Backward uses the implicit-function form: with M = I + mu L and
// z = M^-1 g,
//   dE/dy   = z
//   dE/dmu  = -z^T L x
//   dE/dw_e = -mu (z_i - z_j)(x_i - x_j)      for edge e = (i, j)
// so one extra sparse solve per patch suffices.

#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "dglr/graph.hpp"
#include "dglr/tensor.hpp"

namespace dglr::graph {

struct SolverOptions {
  double tolerance = 1e-10;          // on ||M x - y|| / ||y||
  std::size_t max_iter_per_vertex = 10;
  // Keep iterating past the tolerance until this many steps have run. A
  // fixed step count makes the iterate a smooth function of the inputs,
  // which finite-difference probes need.
  std::size_t min_iterations = 0;
};

struct SolveStats {
  std::size_t iterations = 0;
  double residual = 0.0;  // relative, ||M x - b|| / ||b||
};

namespace detail {

inline double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

// Jacobi-preconditioned CG on (I + mu L) x = b, warm-started at x = b.
// inv_diag holds 1 / (1 + mu d_i).
inline SolveStats pcg(const SparseLaplacian8& lap, double mu,
                      std::span<const double> inv_diag,
                      std::span<const double> b, std::vector<double>& x,
                      const SolverOptions& opt) {
  const std::size_t m = lap.size();
  x.assign(b.begin(), b.end());
  SolveStats st;
  const double bnorm = norm2(b);
  if (bnorm == 0.0 || mu == 0.0) return st;

  std::vector<double> r(m), z(m), p(m), q(m);
  auto true_residual = [&] {
    lap.multiply_system(mu, x, q);
    for (std::size_t i = 0; i < m; ++i) r[i] = b[i] - q[i];
    return norm2(r);
  };

  const double target = opt.tolerance * bnorm;
  double rnorm = true_residual();
  const std::size_t cap = opt.max_iter_per_vertex * m + opt.min_iterations;
  while (rnorm > target) {
    // (Re)start from the current true residual.
    for (std::size_t i = 0; i < m; ++i) z[i] = inv_diag[i] * r[i];
    p = z;
    double rz = dot(r, z);
    while (true) {
      if (st.iterations >= cap) {
        throw SolverError("PCG hit its iteration cap", rnorm / bnorm,
                          st.iterations);
      }
      lap.multiply_system(mu, p, q);
      const double pq = dot(p, q);
      if (!(pq > 0.0)) break;  // search direction vanished
      const double alpha = rz / pq;
      for (std::size_t i = 0; i < m; ++i) {
        x[i] += alpha * p[i];
        r[i] -= alpha * q[i];
      }
      ++st.iterations;
      rnorm = norm2(r);
      if (rnorm <= target && st.iterations >= opt.min_iterations) break;
      for (std::size_t i = 0; i < m; ++i) z[i] = inv_diag[i] * r[i];
      const double rz_next = dot(r, z);
      if (rz_next == 0.0) break;
      const double beta = rz_next / rz;
      rz = rz_next;
      for (std::size_t i = 0; i < m; ++i) p[i] = z[i] + beta * p[i];
    }
    rnorm = true_residual();
  }
  st.residual = rnorm / bnorm;
  return st;
}

inline std::vector<double> jacobi_inverse(const SparseLaplacian8& lap, double mu) {
  std::vector<double> d(lap.size());
  for (std::size_t v = 0; v < d.size(); ++v) d[v] = 1.0 / (1.0 + mu * lap.degrees()[v]);
  return d;
}

}  // namespace detail

// Everything the backward pass needs from one forward solve.
struct GlrCache {
  std::shared_ptr<const SparseLaplacian8> laplacian;
  MuClamp mu;
  std::vector<double> rhs;
  std::vector<double> x;
  SolveStats stats;
  SolverOptions options;
};

inline GlrCache solve_qp(std::shared_ptr<const SparseLaplacian8> lap,
                         const MuClamp& mu, std::span<const double> rhs,
                         const SolverOptions& opt = {}) {
  if (!(mu.mu >= 0.0)) throw ConfigError("solve_qp: mu must be >= 0");
  if (rhs.size() != lap->size()) {
    throw ConfigError("solve_qp: rhs length " + std::to_string(rhs.size()) +
                      " != vertex count " + std::to_string(lap->size()));
  }
  GlrCache c;
  c.mu = mu;
  c.options = opt;
  c.rhs.assign(rhs.begin(), rhs.end());
  const auto inv_diag = detail::jacobi_inverse(*lap, mu.mu);
  c.stats = detail::pcg(*lap, mu.mu, inv_diag, rhs, c.x, opt);
  c.laplacian = std::move(lap);
  return c;
}

// Convenience overload for an unclamped weight.
inline GlrCache solve_qp(std::shared_ptr<const SparseLaplacian8> lap, double mu,
                         std::span<const double> rhs,
                         const SolverOptions& opt = {}) {
  MuClamp mc;
  mc.mu = mc.mu_raw = mu;
  return solve_qp(std::move(lap), mc, rhs, opt);
}

// One graph and one mu shared by every channel; the Jacobi preconditioner
// is built once.
inline std::vector<GlrCache> solve_qp_multichannel(
    std::shared_ptr<const SparseLaplacian8> lap, const MuClamp& mu,
    const std::vector<std::vector<double>>& rhs_channels,
    const SolverOptions& opt = {}) {
  const auto inv_diag = detail::jacobi_inverse(*lap, mu.mu);
  std::vector<GlrCache> out;
  out.reserve(rhs_channels.size());
  for (const auto& rhs : rhs_channels) {
    if (rhs.size() != lap->size()) {
      throw ConfigError("solve_qp_multichannel: channel length mismatch");
    }
    GlrCache c;
    c.laplacian = lap;
    c.mu = mu;
    c.options = opt;
    c.rhs = rhs;
    c.stats = detail::pcg(*lap, mu.mu, inv_diag, rhs, c.x, opt);
    out.push_back(std::move(c));
  }
  return out;
}

struct QpGradients {
  double grad_mu_raw = 0.0;        // through the clamp subgradient
  double grad_mu_effective = 0.0;  // d loss / d (mu handed to the solver)
  std::vector<double> grad_rhs;
  std::vector<double> grad_weights;  // per pattern edge
};

inline double relative_residual(const GlrCache& c) {
  std::vector<double> mx(c.x.size());
  c.laplacian->multiply_system(c.mu.mu, c.x, mx);
  double rr = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    rr += (mx[i] - c.rhs[i]) * (mx[i] - c.rhs[i]);
    bb += c.rhs[i] * c.rhs[i];
  }
  return bb == 0.0 ? std::sqrt(rr) : std::sqrt(rr) / std::sqrt(bb);
}

// upstream = dE/dx*. When the clamp is active, mu = (kappa-1)/(2 d_max)
// depends on the weights through d_max; that path is included so the
// weight gradient stays exact.
inline QpGradients backward_qp(const GlrCache& c, std::span<const double> upstream) {
  const SparseLaplacian8& lap = *c.laplacian;
  const std::size_t m = lap.size();
  if (upstream.size() != m) {
    throw ConfigError("backward_qp: upstream gradient length mismatch");
  }
  if (c.x.size() != m || c.rhs.size() != m ||
      relative_residual(c) > c.options.tolerance) {
    throw StaleCacheError("backward_qp: cached solution no longer satisfies "
                          "the system to tolerance");
  }
  const double mu = c.mu.mu;
  QpGradients g;
  g.grad_rhs.assign(m, 0.0);
  g.grad_weights.assign(lap.pattern().edges.size(), 0.0);

  bool any = false;
  for (double v : upstream) any = any || v != 0.0;
  if (!any) return g;

  std::vector<double> z;
  detail::pcg(lap, mu, detail::jacobi_inverse(lap, mu), upstream, z, c.options);
  g.grad_rhs = z;

  std::vector<double> lx(m);
  lap.multiply(c.x, lx);
  g.grad_mu_effective = -dot(z, lx);
  g.grad_mu_raw = c.mu.clamped ? 0.0 : g.grad_mu_effective;

  const auto& edges = lap.pattern().edges;
  if (mu != 0.0) {
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const auto [i, j] = edges[e];
      g.grad_weights[e] = -mu * (z[i] - z[j]) * (c.x[i] - c.x[j]);
    }
  }
  if (c.mu.clamped) {
    const double dmu_ddmax = -c.mu.mu_max / lap.d_max();
    for (std::size_t e : lap.pattern().incident[lap.d_max_vertex()]) {
      g.grad_weights[e] += g.grad_mu_effective * dmu_ddmax;
    }
  }
  return g;
}

// dE/df_n(i) = sum_{j in N(i)} dE/dw_ij * w_ij * (f_n(j) - f_n(i)) / eps^2
// Output is exemplar-major like ExemplarPatch::features.
inline std::vector<double> backward_graph(const ExemplarPatch& ex,
                                          const GridPattern& pattern,
                                          std::span<const double> weights,
                                          std::span<const double> grad_weights) {
  if (weights.size() != pattern.edges.size() ||
      grad_weights.size() != pattern.edges.size()) {
    throw ConfigError("backward_graph: edge list length mismatch");
  }
  const std::size_t m = ex.pixels();
  const double eps_sq = 0.5 * ex.two_eps_sq;
  std::vector<double> grad(ex.count * m, 0.0);
  for (std::size_t e = 0; e < pattern.edges.size(); ++e) {
    const double coef = grad_weights[e] * weights[e] / eps_sq;
    if (coef == 0.0) continue;
    const auto [i, j] = pattern.edges[e];
    for (std::size_t n = 0; n < ex.count; ++n) {
      const double diff = ex.features[n * m + j] - ex.features[n * m + i];
      grad[n * m + i] += coef * diff;
      grad[n * m + j] -= coef * diff;
    }
  }
  return grad;
}

// Rayleigh-quotient power iteration for lambda_max(I + mu L).
inline double estimate_lambda_max(const SparseLaplacian8& lap, double mu,
                                  Rng& rng, std::size_t max_iter = 2000,
                                  double rel_tol = 1e-12) {
  const std::size_t m = lap.size();
  std::vector<double> v(m), w(m);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  double nv = detail::norm2(v);
  for (double& x : v) x /= nv;
  double lambda = 0.0;
  for (std::size_t it = 0; it < max_iter; ++it) {
    lap.multiply_system(mu, v, w);
    const double next = dot(v, w);
    const double nw = detail::norm2(w);
    for (std::size_t i = 0; i < m; ++i) v[i] = w[i] / nw;
    if (it > 0 && std::abs(next - lambda) <= rel_tol * std::abs(next)) {
      return next;
    }
    lambda = next;
  }
  return lambda;
}

}  // namespace dglr::graph
