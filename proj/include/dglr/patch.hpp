#pragma once

// Overlapping square patches over an image plane and their equal-weight
// reassembly. Anchors step by `stride`; when the stride does not tile the
// image exactly, one extra anchor is clamped to the far border so the last
// patch still fits.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dglr/common.hpp"

namespace dglr::patch {

inline constexpr std::size_t kDefaultSide = 26;
inline constexpr std::size_t kDefaultStride = 22;

struct Anchor {
  std::size_t row;
  std::size_t col;
  friend bool operator==(const Anchor&, const Anchor&) = default;
};

struct PatchPlan {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t side = kDefaultSide;
  std::size_t stride = kDefaultStride;
  std::vector<std::size_t> row_anchors;
  std::vector<std::size_t> col_anchors;
  std::vector<Anchor> anchors;          // row-major over (row, col) anchors
  std::vector<std::uint32_t> coverage;  // patches covering each pixel

  std::size_t count() const { return anchors.size(); }
  std::size_t pixels_per_patch() const { return side * side; }
};

inline std::vector<std::size_t> axis_anchors(std::size_t extent, std::size_t side,
                                             std::size_t stride) {
  std::vector<std::size_t> a;
  for (std::size_t p = 0; p + side <= extent; p += stride) a.push_back(p);
  if (a.back() != extent - side) a.push_back(extent - side);
  return a;
}

inline PatchPlan plan_patches(std::size_t height, std::size_t width,
                              std::size_t side = kDefaultSide,
                              std::size_t stride = kDefaultStride) {
  if (side == 0 || stride == 0) throw ConfigError("patch side and stride must be positive");
  if (stride > side) {
    throw ConfigError("patch stride " + std::to_string(stride) +
                      " exceeds side " + std::to_string(side) +
                      "; pixels would be left uncovered");
  }
  if (height < side || width < side) {
    throw SizingError("image " + std::to_string(height) + "x" +
                      std::to_string(width) + " is smaller than the " +
                      std::to_string(side) + "x" + std::to_string(side) + " patch");
  }
  PatchPlan plan;
  plan.height = height;
  plan.width = width;
  plan.side = side;
  plan.stride = stride;
  plan.row_anchors = axis_anchors(height, side, stride);
  plan.col_anchors = axis_anchors(width, side, stride);
  for (std::size_t r : plan.row_anchors) {
    for (std::size_t c : plan.col_anchors) plan.anchors.push_back({r, c});
  }
  plan.coverage.assign(height * width, 0);
  for (const Anchor& a : plan.anchors) {
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        ++plan.coverage[(a.row + y) * width + a.col + x];
      }
    }
  }
  return plan;
}

// K patches of m = side^2 values, patch-major and row-major within a patch.
struct PatchSet {
  std::size_t count = 0;
  std::size_t pixels = 0;
  std::vector<double> values;

  std::span<double> patch(std::size_t k) { return {values.data() + k * pixels, pixels}; }
  std::span<const double> patch(std::size_t k) const {
    return {values.data() + k * pixels, pixels};
  }
};

inline void check_plane(std::span<const double> plane, const PatchPlan& plan) {
  if (plane.size() != plan.height * plan.width) {
    throw ConfigError("plane has " + std::to_string(plane.size()) +
                      " pixels, plan expects " + std::to_string(plan.height) + "x" +
                      std::to_string(plan.width));
  }
}

inline PatchSet extract_patches(std::span<const double> plane, const PatchPlan& plan) {
  check_plane(plane, plan);
  PatchSet ps{plan.count(), plan.pixels_per_patch(), {}};
  ps.values.resize(ps.count * ps.pixels);
  for (std::size_t k = 0; k < plan.count(); ++k) {
    const Anchor a = plan.anchors[k];
    double* dst = ps.values.data() + k * ps.pixels;
    for (std::size_t y = 0; y < plan.side; ++y) {
      const double* src = plane.data() + (a.row + y) * plan.width + a.col;
      for (std::size_t x = 0; x < plan.side; ++x) dst[y * plan.side + x] = src[x];
    }
  }
  return ps;
}

inline void check_set(const PatchSet& patches, const PatchPlan& plan) {
  if (patches.count != plan.count() || patches.pixels != plan.pixels_per_patch() ||
      patches.values.size() != patches.count * patches.pixels) {
    throw ConfigError("patch set (" + std::to_string(patches.count) + " x " +
                      std::to_string(patches.pixels) + ") does not match plan (" +
                      std::to_string(plan.count()) + " x " +
                      std::to_string(plan.pixels_per_patch()) + ")");
  }
}

// Adjoint of extract_patches: scatter-add patches into a plane.
inline std::vector<double> scatter_add_patches(const PatchSet& patches,
                                               const PatchPlan& plan) {
  check_set(patches, plan);
  std::vector<double> plane(plan.height * plan.width, 0.0);
  for (std::size_t k = 0; k < plan.count(); ++k) {
    const Anchor a = plan.anchors[k];
    const double* src = patches.values.data() + k * patches.pixels;
    for (std::size_t y = 0; y < plan.side; ++y) {
      double* dst = plane.data() + (a.row + y) * plan.width + a.col;
      for (std::size_t x = 0; x < plan.side; ++x) dst[x] += src[y * plan.side + x];
    }
  }
  return plane;
}

// Per-pixel mean over covering patches, accumulated as a running mean so that
// identical contributions reproduce the value bit for bit. Anchor order is
// fixed, so the result is deterministic.
inline std::vector<double> aggregate_patches(const PatchSet& patches,
                                             const PatchPlan& plan) {
  check_set(patches, plan);
  std::vector<double> plane(plan.height * plan.width, 0.0);
  std::vector<std::uint16_t> seen(plane.size(), 0);
  for (std::size_t k = 0; k < plan.count(); ++k) {
    const Anchor a = plan.anchors[k];
    const double* src = patches.values.data() + k * patches.pixels;
    for (std::size_t y = 0; y < plan.side; ++y) {
      const std::size_t row = (a.row + y) * plan.width + a.col;
      for (std::size_t x = 0; x < plan.side; ++x) {
        const std::size_t i = row + x;
        const double n = ++seen[i];
        plane[i] += (src[y * plan.side + x] - plane[i]) / n;
      }
    }
  }
  return plane;
}

// Backward of aggregate_patches: each contributor receives grad / count.
inline PatchSet aggregate_backward(std::span<const double> grad_plane,
                                   const PatchPlan& plan) {
  check_plane(grad_plane, plan);
  std::vector<double> scaled(grad_plane.begin(), grad_plane.end());
  for (std::size_t i = 0; i < scaled.size(); ++i) {
    scaled[i] /= static_cast<double>(plan.coverage[i]);
  }
  return extract_patches(scaled, plan);
}

}  // namespace dglr::patch
