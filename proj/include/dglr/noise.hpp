#pragma once

#include <cstdint>
#include <string>

#include "dglr/common.hpp"
#include "dglr/image.hpp"

namespace dglr::noise {

// Additive white Gaussian noise; sigma is on the 0-255 scale.
struct NoiseSpec {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

// Adds N(0, (sigma/255)^2) to every value in storage order, drawing from
// Rng(seed). The result is not clipped.
inline image::ImagePlane add_awgn(const image::ImagePlane& clean, const NoiseSpec& spec) {
  if (!(spec.sigma >= 0.0)) {
    throw ConfigError("noise sigma must be >= 0, got " + std::to_string(spec.sigma));
  }
  image::ImagePlane out = clean;
  out.provenance = clean.provenance + " +awgn(sigma=" + std::to_string(spec.sigma) +
                   ",seed=" + std::to_string(spec.seed) + ")";
  if (spec.sigma == 0.0) return out;
  Rng rng(spec.seed);
  const double sd = spec.sigma / 255.0;
  for (double& v : out.values) v += sd * rng.normal();
  return out;
}

}  // namespace dglr::noise
