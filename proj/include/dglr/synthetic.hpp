#pragma once

// Piecewise-smooth test scenes: a linear intensity ramp overlaid with a few
// flat disks and rectangles. Fully determined by the seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dglr/common.hpp"
#include "dglr/image.hpp"

namespace dglr::synthetic {

inline image::ImagePlane scene(std::size_t height, std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  image::ImagePlane p(height, width, 1);
  p.provenance = "synthetic(" + std::to_string(height) + "x" + std::to_string(width) +
                 ",seed=" + std::to_string(seed) + ")";
  const double base = rng.uniform(0.2, 0.8);
  const double gy = rng.uniform(-0.3, 0.3) / static_cast<double>(height);
  const double gx = rng.uniform(-0.3, 0.3) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      p.at(0, y, x) = base + gy * static_cast<double>(y) + gx * static_cast<double>(x);
    }
  }
  const std::size_t shapes = 3 + rng.below(4);
  const double hd = static_cast<double>(height), wd = static_cast<double>(width);
  for (std::size_t s = 0; s < shapes; ++s) {
    const double level = rng.uniform(0.05, 0.95);
    const double cy = rng.uniform(0.0, hd), cx = rng.uniform(0.0, wd);
    if (rng.below(2) == 0) {
      const double r = rng.uniform(0.08, 0.3) * std::min(hd, wd);
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          if (dy * dy + dx * dx <= r * r) p.at(0, y, x) = level;
        }
      }
    } else {
      const double hh = rng.uniform(0.05, 0.25) * hd, hw = rng.uniform(0.05, 0.25) * wd;
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          if (std::abs(static_cast<double>(y) - cy) <= hh &&
              std::abs(static_cast<double>(x) - cx) <= hw) {
            p.at(0, y, x) = level;
          }
        }
      }
    }
  }
  for (double& v : p.values) v = std::clamp(v, 0.0, 1.0);
  return p;
}

// `count` scenes with seeds seed, seed+1, ...
inline std::vector<image::ImagePlane> scenes(std::size_t count, std::size_t height,
                                             std::size_t width, std::uint64_t seed) {
  std::vector<image::ImagePlane> out;
  for (std::size_t k = 0; k < count; ++k) out.push_back(scene(height, width, seed + k));
  return out;
}

}  // namespace dglr::synthetic
