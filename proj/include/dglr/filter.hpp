#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "dglr/common.hpp"

namespace dglr::filter {

// Normalized 1-D Gaussian taps for offsets -radius..radius.
inline std::vector<double> gaussian_kernel(double sigma, std::size_t radius) {
  std::vector<double> k(2 * radius + 1);
  double s = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    s += k[i];
  }
  for (double& v : k) v /= s;
  return k;
}

// Separable filter keeping only fully supported windows:
// output is (h - 2r) x (w - 2r).
inline std::vector<double> separable_valid(std::span<const double> in, std::size_t h,
                                           std::size_t w, std::span<const double> taps) {
  const std::size_t n = taps.size();
  if (h < n || w < n) throw SizingError("image smaller than the filter window");
  const std::size_t oh = h - n + 1, ow = w - n + 1;
  std::vector<double> rows(h * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t) s += taps[t] * in[y * w + x + t];
      rows[y * ow + x] = s;
    }
  }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t) s += taps[t] * rows[(y + t) * ow + x];
      out[y * ow + x] = s;
    }
  }
  return out;
}

// Same-size Gaussian blur with replicated borders.
inline std::vector<double> gaussian_blur(std::span<const double> in, std::size_t h,
                                         std::size_t w, double sigma) {
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  const auto taps = gaussian_kernel(sigma, radius);
  const long r = static_cast<long>(radius);
  auto clampi = [](long v, std::size_t n) {
    return static_cast<std::size_t>(v < 0 ? 0 : (v >= static_cast<long>(n) ? n - 1 : v));
  };
  std::vector<double> tmp(h * w), out(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (long t = -r; t <= r; ++t) {
        s += taps[t + r] * in[y * w + clampi(static_cast<long>(x) + t, w)];
      }
      tmp[y * w + x] = s;
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (long t = -r; t <= r; ++t) {
        s += taps[t + r] * tmp[clampi(static_cast<long>(y) + t, h) * w + x];
      }
      out[y * w + x] = s;
    }
  }
  return out;
}

}  // namespace dglr::filter
