#pragma once

// Graph construction for one patch: an 8-connected pixel grid whose edge
// weights come from exemplar feature distances, assembled into the
// combinatorial Laplacian L = D - A with a fixed sparsity pattern.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dglr/common.hpp"

namespace dglr::graph {

struct Edge {
  std::uint32_t i;
  std::uint32_t j;  // i < j, row-major pixel indices
};

// The fixed 8-connected sparsity of a rows x cols pixel grid.
struct GridPattern {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Edge> edges;  // sorted by (i, j)

  // CSR over the full Laplacian (diagonal included, columns ascending).
  // csr_edge[k] is the edge feeding off-diagonal entry k, or kDiagonal.
  std::vector<std::size_t> row_ptr;
  std::vector<std::uint32_t> col;
  std::vector<std::size_t> csr_edge;
  static constexpr std::size_t kDiagonal = std::numeric_limits<std::size_t>::max();

  // incident[v] lists the edges touching vertex v.
  std::vector<std::vector<std::size_t>> incident;

  std::size_t vertices() const { return rows * cols; }
};

inline GridPattern make_grid_pattern(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) {
    throw ConfigError("grid pattern needs positive extents");
  }
  GridPattern p;
  p.rows = rows;
  p.cols = cols;
  const std::size_t m = rows * cols;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const auto i = static_cast<std::uint32_t>(r * cols + c);
      if (c + 1 < cols) p.edges.push_back({i, i + 1});
      if (r + 1 < rows) {
        const auto below = static_cast<std::uint32_t>((r + 1) * cols + c);
        if (c > 0) p.edges.push_back({i, below - 1});
        p.edges.push_back({i, below});
        if (c + 1 < cols) p.edges.push_back({i, below + 1});
      }
    }
  }
  std::sort(p.edges.begin(), p.edges.end(), [](const Edge& a, const Edge& b) {
    return a.i != b.i ? a.i < b.i : a.j < b.j;
  });

  std::vector<std::vector<std::pair<std::uint32_t, std::size_t>>> rows_tmp(m);
  p.incident.assign(m, {});
  for (std::size_t e = 0; e < p.edges.size(); ++e) {
    const Edge& ed = p.edges[e];
    rows_tmp[ed.i].push_back({ed.j, e});
    rows_tmp[ed.j].push_back({ed.i, e});
    p.incident[ed.i].push_back(e);
    p.incident[ed.j].push_back(e);
  }
  p.row_ptr.assign(m + 1, 0);
  for (std::size_t v = 0; v < m; ++v) {
    auto& row = rows_tmp[v];
    row.push_back({static_cast<std::uint32_t>(v), GridPattern::kDiagonal});
    std::sort(row.begin(), row.end());
    for (const auto& [c, e] : row) {
      p.col.push_back(c);
      p.csr_edge.push_back(e);
    }
    p.row_ptr[v + 1] = p.col.size();
  }
  return p;
}

// Patterns are immutable; one instance per grid size is shared.
inline std::shared_ptr<const GridPattern> grid_pattern(std::size_t rows,
                                                       std::size_t cols) {
  static std::mutex mutex;
  static std::map<std::pair<std::size_t, std::size_t>,
                  std::shared_ptr<const GridPattern>>
      cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[{rows, cols}];
  if (!slot) slot = std::make_shared<const GridPattern>(make_grid_pattern(rows, cols));
  return slot;
}

// N feature maps over one rows x cols patch, stored exemplar-major:
// features[n * m + i] = f_n(i).
struct ExemplarPatch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t count = 0;
  std::vector<double> features;
  double two_eps_sq = 1.0;  // the 2*eps^2 bandwidth

  std::size_t pixels() const { return rows * cols; }
  double at(std::size_t n, std::size_t i) const { return features[n * pixels() + i]; }
};

inline void validate(const ExemplarPatch& ex) {
  if (ex.count < 1) throw ConfigError("exemplar patch needs N >= 1");
  if (ex.features.size() != ex.count * ex.pixels()) {
    throw ConfigError("exemplar patch holds " + std::to_string(ex.features.size()) +
                      " values, expected N*m = " +
                      std::to_string(ex.count * ex.pixels()));
  }
  if (!(ex.two_eps_sq > 0.0)) throw ConfigError("2*eps^2 must be positive");
  for (std::size_t k = 0; k < ex.features.size(); ++k) {
    if (!std::isfinite(ex.features[k])) {
      throw DataError("non-finite exemplar value at exemplar " +
                      std::to_string(k / ex.pixels()) + ", pixel " +
                      std::to_string(k % ex.pixels()));
    }
  }
}

// w_ij = exp(-sum_n (f_n(i) - f_n(j))^2 / (2 eps^2)) for every pattern edge.
inline std::vector<double> compute_edge_weights(const ExemplarPatch& ex,
                                                const GridPattern& pattern) {
  validate(ex);
  if (pattern.rows != ex.rows || pattern.cols != ex.cols) {
    throw ConfigError("exemplar patch extents do not match the grid pattern");
  }
  const std::size_t m = ex.pixels();
  std::vector<double> w(pattern.edges.size());
  for (std::size_t e = 0; e < pattern.edges.size(); ++e) {
    const Edge& ed = pattern.edges[e];
    double dist = 0.0;
    for (std::size_t n = 0; n < ex.count; ++n) {
      const double d = ex.features[n * m + ed.i] - ex.features[n * m + ed.j];
      dist += d * d;
    }
    w[e] = std::exp(-dist / ex.two_eps_sq);
  }
  return w;
}

class SparseLaplacian8 {
 public:
  SparseLaplacian8(std::shared_ptr<const GridPattern> pattern,
                   std::vector<double> weights)
      : pattern_(std::move(pattern)), weights_(std::move(weights)) {
    if (weights_.size() != pattern_->edges.size()) {
      throw ConfigError("laplacian: " + std::to_string(weights_.size()) +
                        " weights for " + std::to_string(pattern_->edges.size()) +
                        " pattern edges");
    }
    const std::size_t m = pattern_->vertices();
    degree_.assign(m, 0.0);
    for (std::size_t e = 0; e < weights_.size(); ++e) {
      degree_[pattern_->edges[e].i] += weights_[e];
      degree_[pattern_->edges[e].j] += weights_[e];
    }
    d_max_ = 0.0;
    argmax_ = 0;
    for (std::size_t v = 0; v < m; ++v) {
      if (degree_[v] > d_max_) {
        d_max_ = degree_[v];
        argmax_ = v;
      }
    }
    values_.resize(pattern_->col.size());
    for (std::size_t v = 0; v < m; ++v) {
      for (std::size_t k = pattern_->row_ptr[v]; k < pattern_->row_ptr[v + 1]; ++k) {
        const std::size_t e = pattern_->csr_edge[k];
        values_[k] = e == GridPattern::kDiagonal ? degree_[v] : -weights_[e];
      }
    }
  }

  const GridPattern& pattern() const { return *pattern_; }
  const std::shared_ptr<const GridPattern>& pattern_ptr() const { return pattern_; }
  std::size_t size() const { return pattern_->vertices(); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& degrees() const { return degree_; }
  double d_max() const { return d_max_; }
  // First vertex (row-major) attaining d_max.
  std::size_t d_max_vertex() const { return argmax_; }
  const std::vector<double>& csr_values() const { return values_; }

  // y = L x
  void multiply(std::span<const double> x, std::span<double> y) const {
    const auto& p = *pattern_;
    for (std::size_t v = 0; v < p.vertices(); ++v) {
      double s = 0.0;
      for (std::size_t k = p.row_ptr[v]; k < p.row_ptr[v + 1]; ++k) {
        s += values_[k] * x[p.col[k]];
      }
      y[v] = s;
    }
  }

  // y = (I + mu L) x
  void multiply_system(double mu, std::span<const double> x,
                       std::span<double> y) const {
    multiply(x, y);
    for (std::size_t v = 0; v < size(); ++v) y[v] = x[v] + mu * y[v];
  }

  double entry(std::size_t r, std::size_t c) const {
    const auto& p = *pattern_;
    for (std::size_t k = p.row_ptr[r]; k < p.row_ptr[r + 1]; ++k) {
      if (p.col[k] == c) return values_[k];
    }
    return 0.0;
  }

  // Row-major dense copy; for small-m oracles and diagnostics only.
  std::vector<double> to_dense() const {
    const std::size_t m = size();
    std::vector<double> d(m * m, 0.0);
    const auto& p = *pattern_;
    for (std::size_t v = 0; v < m; ++v) {
      for (std::size_t k = p.row_ptr[v]; k < p.row_ptr[v + 1]; ++k) {
        d[v * m + p.col[k]] = values_[k];
      }
    }
    return d;
  }

 private:
  std::shared_ptr<const GridPattern> pattern_;
  std::vector<double> weights_;
  std::vector<double> degree_;
  std::vector<double> values_;
  double d_max_ = 0.0;
  std::size_t argmax_ = 0;
};

inline SparseLaplacian8 assemble_laplacian(std::shared_ptr<const GridPattern> pattern,
                                           std::vector<double> weights) {
  return SparseLaplacian8(std::move(pattern), std::move(weights));
}

// x^T L x evaluated edge by edge.
inline double regularizer_value(const SparseLaplacian8& lap,
                                std::span<const double> x) {
  double s = 0.0;
  const auto& edges = lap.pattern().edges;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const double d = x[edges[e].i] - x[edges[e].j];
    s += lap.weights()[e] * d * d;
  }
  return s;
}

struct MuClamp {
  double mu = 0.0;       // effective weight handed to the solver
  double mu_raw = 0.0;
  double mu_max = std::numeric_limits<double>::infinity();
  bool clamped = false;
  bool degenerate = false;  // d_max == 0: L = 0, system is the identity
};

// mu_max = (kappa_max - 1) / (2 d_max) keeps cond(I + mu L) <= kappa_max.
inline MuClamp clamp_mu(double mu_raw, const SparseLaplacian8& lap,
                        double kappa_max) {
  if (!(mu_raw >= 0.0) || !std::isfinite(mu_raw)) {
    throw ConfigError("clamp_mu: mu must be finite and >= 0, got " +
                      std::to_string(mu_raw));
  }
  if (!(kappa_max > 1.0)) {
    throw ConfigError("clamp_mu: kappa_max must exceed 1, got " +
                      std::to_string(kappa_max));
  }
  MuClamp out;
  out.mu_raw = mu_raw;
  if (lap.d_max() <= 0.0) {
    out.degenerate = true;
    out.mu = mu_raw;
    return out;
  }
  out.mu_max = (kappa_max - 1.0) / (2.0 * lap.d_max());
  if (mu_raw >= out.mu_max) {
    out.mu = out.mu_max;
    out.clamped = true;
  } else {
    out.mu = mu_raw;
  }
  return out;
}

}  // namespace dglr::graph
