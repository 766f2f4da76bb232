#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace dglr {

// Error taxonomy shared by every module. Callers that only care about
// "something went wrong" catch dglr::Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or parameter mismatch detected before any work is done.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input data is unusable (non-finite values, empty dataset, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// Image or patch geometry does not satisfy a size contract.
class SizingError : public Error {
 public:
  using Error::Error;
};

// API called in the wrong order (e.g. reverse pass twice on one tape).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Unsupported or malformed file.
class FormatError : public Error {
 public:
  using Error::Error;
};

class SolverError : public Error {
 public:
  SolverError(const std::string& what, double residual, std::size_t iterations)
      : Error(what), residual_(residual), iterations_(iterations) {}
  double residual() const { return residual_; }
  std::size_t iterations() const { return iterations_; }

 private:
  double residual_;
  std::size_t iterations_;
};

class StaleCacheError : public Error {
 public:
  using Error::Error;
};

// Platform-independent random source. std::mt19937_64 has a fully specified
// output sequence; the standard distributions do not, so uniform and normal
// variates are derived here by hand.
//
//  - uniform(): top 53 bits of one 64-bit draw, scaled by 2^-53, in [0, 1).
//  - normal():  Marsaglia polar method, caching the second variate.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), unbiased by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw UsageError("Rng::below called with n = 0");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double factor = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * factor;
    has_spare_ = true;
    return u * factor;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dglr
