#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dglr/dglr.hpp"
#include "dglr/gradcheck.hpp"
#include "oracles.hpp"

using namespace dglr;
namespace fs = std::filesystem;

namespace {

// scikit-image 0.2x structural_similarity(a, b, gaussian_weights=True,
// sigma=1.5, use_sample_covariance=False, data_range=1.0) on
// oracle::ssim_fixture().
constexpr double kFixtureSsim = 0.9221647723878412;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dglr_harness_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

image::ImagePlane plane_from(const std::vector<double>& v, std::size_t h, std::size_t w) {
  image::ImagePlane p(h, w, 1);
  p.values = v;
  return p;
}

image::ImagePlane random_plane(Rng& rng, std::size_t h, std::size_t w, std::size_t c) {
  image::ImagePlane p(h, w, c);
  for (double& v : p.values) v = rng.uniform();
  return p;
}

}  // namespace

TEST(ImageIo, HandBuiltPgm) {
  const auto path = scratch("hand.pgm");
  write_bytes(path, std::string("P5\n# comment\n2 2\n255\n") + std::string("\x00\x80\xff\x40", 4));
  const auto p = image::load_image(path.string());
  ASSERT_EQ(p.height, 2u);
  ASSERT_EQ(p.width, 2u);
  EXPECT_EQ(p.values, (std::vector<double>{0.0, 128 / 255.0, 1.0, 64 / 255.0}));
  EXPECT_EQ(p.provenance, path.string());
}

TEST(ImageIo, SixteenBitRejected) {
  const auto path = scratch("deep.pgm");
  write_bytes(path, std::string("P5 1 1 65535\n") + std::string("\x00\x01", 2));
  EXPECT_THROW(image::load_image(path.string()), FormatError);
}

TEST(ImageIo, UnknownFormatShowsHeader) {
  const auto path = scratch("junk.bin");
  write_bytes(path, "GIF89a....");
  try {
    image::load_image(path.string());
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("GIF89a"), std::string::npos);
  }
}

TEST(ImageIo, QuantizationRoundTrip) {
  Rng rng(51);
  for (const char* ext : {".pgm", ".png"}) {
    const auto p = random_plane(rng, 13, 17, 1);
    const auto path = scratch(std::string("rt") + ext);
    image::save_image(p, path.string());
    const auto q = image::load_image(path.string());
    ASSERT_TRUE(image::same_extents(p, q));
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      EXPECT_LE(std::abs(p.values[i] - q.values[i]), 1.0 / 510.0 + 1e-15);
    }
  }
}

TEST(ImageIo, ColorPng) {
  Rng rng(52);
  const auto p = random_plane(rng, 9, 11, 3);
  const auto path = scratch("rgb.png");
  image::save_image(p, path.string());
  const auto q = image::load_image(path.string());
  ASSERT_EQ(q.channels, 3u);
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    EXPECT_EQ(q.values[i], image::quantize(p.values[i]) / 255.0);
  }
  EXPECT_THROW(image::save_image(p, scratch("rgb.pgm").string()), FormatError);
  EXPECT_THROW(image::save_image(p, scratch("rgb.tif").string()), FormatError);
}

TEST(ImageIo, RoundsHalfAwayAndClamps) {
  EXPECT_EQ(image::quantize(0.5 / 255.0), 1);
  EXPECT_EQ(image::quantize(-0.2), 0);
  EXPECT_EQ(image::quantize(1.7), 255);
}

TEST(ImageIo, FixtureLoads) {
  const auto p = image::load_image(std::string(DGLR_TEST_DATA) + "/camera180.pgm");
  EXPECT_EQ(p.height, 180u);
  EXPECT_EQ(p.width, 180u);
}

TEST(Noise, ZeroSigmaIdentity) {
  Rng rng(53);
  const auto p = random_plane(rng, 8, 8, 1);
  EXPECT_EQ(noise::add_awgn(p, {0.0, 7}).values, p.values);
  EXPECT_THROW(noise::add_awgn(p, {-1.0, 7}), ConfigError);
}

TEST(Noise, Statistics) {
  const image::ImagePlane flat(512, 512, 1, 0.5);
  const double sd = 25.0 / 255.0;
  const auto noisy = noise::add_awgn(flat, {25.0, 99});
  double s = 0, ss = 0;
  for (double v : noisy.values) {
    s += v - 0.5;
    ss += (v - 0.5) * (v - 0.5);
  }
  const double n = static_cast<double>(noisy.values.size());
  const double mean = s / n;
  const double std = std::sqrt(ss / n - mean * mean);
  EXPECT_LT(std::abs(mean), 3 * sd / 512);
  EXPECT_LT(std::abs(std - sd) / sd, 0.02);
}

TEST(Noise, Reproducible) {
  const image::ImagePlane flat(32, 32, 1, 0.5);
  EXPECT_EQ(noise::add_awgn(flat, {25, 3}).values, noise::add_awgn(flat, {25, 3}).values);
  EXPECT_NE(noise::add_awgn(flat, {25, 3}).values, noise::add_awgn(flat, {25, 4}).values);
}

TEST(Psnr, ClosedFormAndInfinity) {
  const image::ImagePlane a(16, 16, 1, 0.4);
  image::ImagePlane b = a;
  for (double& v : b.values) v += 25.0 / 255.0;
  EXPECT_NEAR(metrics::psnr(a, b), 20.0 * std::log10(255.0 / 25.0), 1e-9);
  EXPECT_NEAR(metrics::psnr(a, b), 20.17, 0.01);
  EXPECT_TRUE(std::isinf(metrics::psnr(a, a)));
  EXPECT_EQ(metrics::psnr(a, b), metrics::psnr(b, a));
  EXPECT_THROW(metrics::psnr(a, image::ImagePlane(16, 15, 1)), ConfigError);
}

TEST(Psnr, AwgnOnMidGray) {
  const image::ImagePlane flat(256, 256, 1, 0.5);
  EXPECT_NEAR(metrics::psnr(flat, noise::add_awgn(flat, {25.0, 5})), 20.2, 0.1);
}

TEST(Psnr, MseMatchesDirectLoop) {
  Rng rng(54);
  const auto a = random_plane(rng, 20, 30, 3), b = random_plane(rng, 20, 30, 3);
  double s = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 20; ++y)
      for (std::size_t x = 0; x < 30; ++x) s += std::pow(a.at(c, y, x) - b.at(c, y, x), 2);
  EXPECT_NEAR(metrics::mse(a, b), s / 1800.0, 1e-15);
}

TEST(Ssim, IdenticalIsOne) {
  Rng rng(55);
  const auto a = random_plane(rng, 24, 24, 1);
  EXPECT_NEAR(metrics::ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, AnticorrelatedIsNegative) {
  image::ImagePlane a(32, 32, 1);
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) a.at(0, y, x) = ((x / 3 + y / 2) % 2) ? 1.0 : 0.0;
  image::ImagePlane b = a;
  for (double& v : b.values) v = 1.0 - v;
  EXPECT_LT(metrics::ssim(a, b), 0.0);
}

TEST(Ssim, FixtureMatchesIndependentImplementations) {
  const auto [a, b] = oracle::ssim_fixture();
  const double lib = metrics::ssim(plane_from(a, 32, 32), plane_from(b, 32, 32));
  EXPECT_NEAR(lib, oracle::ssim(a, b, 32, 32), 1e-6);
  EXPECT_NEAR(lib, kFixtureSsim, 1e-6);
}

TEST(Ssim, RandomPairsMatchDirectWindows) {
  Rng rng(56);
  for (int k = 0; k < 3; ++k) {
    const auto a = random_plane(rng, 20, 27, 1), b = random_plane(rng, 20, 27, 1);
    EXPECT_NEAR(metrics::ssim(a, b), oracle::ssim(a.values, b.values, 20, 27), 1e-10);
  }
}

TEST(Ssim, SymmetricAndColor) {
  Rng rng(57);
  const auto a = random_plane(rng, 16, 16, 3), b = random_plane(rng, 16, 16, 3);
  EXPECT_NEAR(metrics::ssim(a, b), metrics::ssim(b, a), 1e-14);
  const auto per = metrics::ssim_per_channel(a, b);
  ASSERT_EQ(per.size(), 3u);
  EXPECT_NEAR(metrics::ssim(a, b), (per[0] + per[1] + per[2]) / 3.0, 1e-15);
}

TEST(Ssim, TooSmall) {
  const image::ImagePlane a(10, 30, 1);
  EXPECT_THROW(metrics::ssim(a, a), SizingError);
}

TEST(Gradcheck, SuiteDeterministicAndPassing) {
  const auto r1 = gradcheck::gradcheck_suite(5, 2);
  const auto r2 = gradcheck::gradcheck_suite(5, 2);
  EXPECT_EQ(r1.str(), r2.str());
  EXPECT_TRUE(r1.pass()) << r1.str();
}

TEST(Gradcheck, TwoVertex) {
  EXPECT_NEAR(gradcheck::two_vertex_grad_mu(), -1.0 / 27.0, 1e-10);
}
