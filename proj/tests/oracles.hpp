#pragma once

// Second implementations used only by the tests. Each is written the slow,
// obvious way so it shares no code path with the library.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

namespace oracle {

// Direct NCHW convolution with explicit zero padding, any stride.
inline std::vector<double> conv2d(const std::vector<double>& in, std::size_t n, std::size_t c,
                                  std::size_t h, std::size_t w, const std::vector<double>& wt,
                                  std::size_t o, std::size_t k, const std::vector<double>* bias,
                                  std::size_t stride, std::size_t pad, std::size_t& oh,
                                  std::size_t& ow) {
  oh = (h + 2 * pad - k) / stride + 1;
  ow = (w + 2 * pad - k) / stride + 1;
  std::vector<double> out(n * o * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double s = bias ? (*bias)[oc] : 0.0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(x * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w))
                  continue;
                s += wt[((oc * c + ic) * k + ky) * k + kx] *
                     in[((b * c + ic) * h + iy) * w + ix];
              }
          out[((b * o + oc) * oh + y) * ow + x] = s;
        }
  return out;
}

// Gaussian elimination with partial pivoting on a dense row-major system.
inline std::vector<double> dense_solve(std::vector<double> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (a[piv * n + col] == 0.0) throw std::runtime_error("singular");
    if (piv != col) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a[col * n + k], a[piv * n + k]);
      std::swap(b[col], b[piv]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / a[col * n + col];
      for (std::size_t k = col; k < n; ++k) a[r * n + k] -= f * a[col * n + k];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i * n + k] * x[k];
    x[i] = s / a[i * n + i];
  }
  return x;
}

// Dense 8-neighbour Laplacian straight from the definition.
inline std::vector<double> dense_laplacian(const std::vector<double>& f, std::size_t count,
                                           std::size_t rows, std::size_t cols,
                                           double two_eps_sq) {
  const std::size_t m = rows * cols;
  std::vector<double> l(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      const long di = static_cast<long>(i / cols) - static_cast<long>(j / cols);
      const long dj = static_cast<long>(i % cols) - static_cast<long>(j % cols);
      if (std::abs(di) > 1 || std::abs(dj) > 1) continue;
      double d = 0.0;
      for (std::size_t n = 0; n < count; ++n) {
        const double t = f[n * m + i] - f[n * m + j];
        d += t * t;
      }
      const double wij = std::exp(-d / two_eps_sq);
      l[i * m + j] = -wij;
      l[i * m + i] += wij;
    }
  return l;
}

// SSIM with an explicit 2-D Gaussian window evaluated at every fully
// supported position.
inline double ssim(const std::vector<double>& a, const std::vector<double>& b, std::size_t h,
                   std::size_t w, std::size_t win = 11, double sigma = 1.5, double k1 = 0.01,
                   double k2 = 0.03, double range = 1.0) {
  const long r = static_cast<long>(win / 2);
  std::vector<double> g(win * win);
  double gs = 0.0;
  for (long dy = -r; dy <= r; ++dy)
    for (long dx = -r; dx <= r; ++dx) {
      const double v = std::exp(-static_cast<double>(dy * dy + dx * dx) / (2 * sigma * sigma));
      g[(dy + r) * win + (dx + r)] = v;
      gs += v;
    }
  for (double& v : g) v /= gs;
  const double c1 = (k1 * range) * (k1 * range), c2 = (k2 * range) * (k2 * range);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y = r; y + r < h; ++y)
    for (std::size_t x = r; x + r < w; ++x) {
      double ma = 0, mb = 0;
      for (long dy = -r; dy <= r; ++dy)
        for (long dx = -r; dx <= r; ++dx) {
          const double gw = g[(dy + r) * win + (dx + r)];
          ma += gw * a[(y + dy) * w + x + dx];
          mb += gw * b[(y + dy) * w + x + dx];
        }
      double va = 0, vb = 0, cov = 0;
      for (long dy = -r; dy <= r; ++dy)
        for (long dx = -r; dx <= r; ++dx) {
          const double gw = g[(dy + r) * win + (dx + r)];
          const double da = a[(y + dy) * w + x + dx] - ma;
          const double db = b[(y + dy) * w + x + dx] - mb;
          va += gw * da * da;
          vb += gw * db * db;
          cov += gw * da * db;
        }
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

// A deterministic 32x32 pair reproducible in any language:
// a = ((7y + 3x) mod 17) / 16, b = ((5y + 11x + 3) mod 13) / 12 blended
// 3:1 with a.
inline std::pair<std::vector<double>, std::vector<double>> ssim_fixture() {
  std::vector<double> a(32 * 32), b(32 * 32);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) {
      a[y * 32 + x] = static_cast<double>((7 * y + 3 * x) % 17) / 16.0;
      b[y * 32 + x] =
          0.75 * a[y * 32 + x] + 0.25 * static_cast<double>((5 * y + 11 * x + 3) % 13) / 12.0;
    }
  return {a, b};
}

}  // namespace oracle
