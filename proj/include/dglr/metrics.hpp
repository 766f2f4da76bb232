#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "dglr/filter.hpp"
#include "dglr/image.hpp"

namespace dglr::metrics {

inline void require_same_extents(const image::ImagePlane& a, const image::ImagePlane& b) {
  if (!image::same_extents(a, b)) {
    throw ConfigError("metric inputs differ in extents: " + std::to_string(a.height) +
                      "x" + std::to_string(a.width) + "x" + std::to_string(a.channels) +
                      " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) +
                      "x" + std::to_string(b.channels));
  }
}

inline double mse(const image::ImagePlane& a, const image::ImagePlane& b) {
  require_same_extents(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    s += d * d;
  }
  return s / static_cast<double>(a.values.size());
}

// Peak 1.0. Identical inputs give +infinity.
inline double psnr(const image::ImagePlane& ref, const image::ImagePlane& test) {
  const double e = mse(ref, test);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / e);
}

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// Single-scale SSIM of one channel: Gaussian-weighted local statistics,
// averaged over every fully supported window position.
inline double ssim_channel(std::span<const double> a, std::span<const double> b,
                           std::size_t h, std::size_t w, const SsimParams& prm = {}) {
  if (h < prm.window || w < prm.window) {
    throw SizingError("SSIM: image " + std::to_string(h) + "x" + std::to_string(w) +
                      " is smaller than the " + std::to_string(prm.window) + "x" +
                      std::to_string(prm.window) + " window");
  }
  const auto taps = filter::gaussian_kernel(prm.sigma, prm.window / 2);
  const std::size_t n = h * w;
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter::separable_valid(a, h, w, taps);
  const auto mu_b = filter::separable_valid(b, h, w, taps);
  const auto e_aa = filter::separable_valid(aa, h, w, taps);
  const auto e_bb = filter::separable_valid(bb, h, w, taps);
  const auto e_ab = filter::separable_valid(ab, h, w, taps);
  const double c1 = std::pow(prm.k1 * prm.dynamic_range, 2);
  const double c2 = std::pow(prm.k2 * prm.dynamic_range, 2);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

inline std::vector<double> ssim_per_channel(const image::ImagePlane& ref,
                                            const image::ImagePlane& test,
                                            const SsimParams& prm = {}) {
  require_same_extents(ref, test);
  std::vector<double> out;
  for (std::size_t c = 0; c < ref.channels; ++c) {
    out.push_back(ssim_channel(ref.channel(c), test.channel(c), ref.height, ref.width, prm));
  }
  return out;
}

// Mean of the per-channel values (the value itself for grayscale).
inline double ssim(const image::ImagePlane& ref, const image::ImagePlane& test,
                   const SsimParams& prm = {}) {
  const auto v = ssim_per_channel(ref, test, prm);
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace dglr::metrics
