#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <regex>
#include <sstream>

#include "dglr/cli.hpp"

using namespace dglr;
namespace fs = std::filesystem;

namespace {

// One scratch directory per test so tests can run in any order or in
// parallel.
fs::path dir() {
  const fs::path p = fs::temp_directory_path() / "dglr_cli_tests" /
                     ::testing::UnitTest::GetInstance()->current_test_info()->name();
  fs::create_directories(p);
  return p;
}

std::string at(const std::string& name) { return (dir() / name).string(); }

struct Result {
  int code;
  std::string out;
  std::string err;
};

// Runs the real binary; stdout and stderr are captured through files.
Result run(const std::string& args) {
  const std::string o = at("stdout.txt"), e = at("stderr.txt");
  const std::string cmd = std::string(DGLR_CLI_PATH) + " " + args + " >" + o + " 2>" + e;
  const int status = std::system(cmd.c_str());
  auto slurp = [](const std::string& p) {
    std::ifstream is(p);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(o), slurp(e)};
}

// In-process dispatch for cheap argument-handling checks.
Result call(std::vector<std::string> args) {
  args.insert(args.begin(), "dglr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

double psnr_of(const std::string& eval_out) {
  std::smatch m;
  if (!std::regex_search(eval_out, m, std::regex(R"(PSNR: ([0-9.]+) dB)"))) return -1;
  return std::stod(m[1]);
}

const std::string kCamera = std::string(DGLR_TEST_DATA) + "/camera180.pgm";

}  // namespace

TEST(Cli, CorruptIsDeterministic) {
  ASSERT_EQ(run("corrupt --in " + kCamera + " --out " + at("n1.pgm") + " --sigma 25 --seed 7").code, 0);
  ASSERT_EQ(run("corrupt --in " + kCamera + " --out " + at("n2.pgm") + " --sigma 25 --seed 7").code, 0);
  ASSERT_EQ(run("corrupt --in " + kCamera + " --out " + at("n3.pgm") + " --sigma 25 --seed 8").code, 0);
  EXPECT_EQ(bytes(at("n1.pgm")), bytes(at("n2.pgm")));
  EXPECT_NE(bytes(at("n1.pgm")), bytes(at("n3.pgm")));
}

TEST(Cli, ClassicDenoiseAndEval) {
  ASSERT_EQ(run("corrupt --in " + kCamera + " --out " + at("noisy.png") + " --sigma 25 --seed 2024").code, 0);
  const Result d = run("denoise --classic --mu 8 --in " + at("noisy.png") + " --out " + at("clean.png"));
  ASSERT_EQ(d.code, 0) << d.err;
  const Result en = run("eval --ref " + kCamera + " --test " + at("noisy.png"));
  const Result ed = run("eval --ref " + kCamera + " --test " + at("clean.png"));
  ASSERT_EQ(en.code, 0) << en.err;
  EXPECT_TRUE(std::regex_match(ed.out, std::regex(R"(PSNR: \d+\.\d{4} dB\nSSIM: -?\d\.\d{4}\n)")))
      << ed.out;
  EXPECT_GT(psnr_of(ed.out), psnr_of(en.out) + 1.0);
  // Same file twice: infinite PSNR, unit SSIM.
  EXPECT_EQ(run("eval --ref " + kCamera + " --test " + kCamera).out, "PSNR: inf dB\nSSIM: 1.0000\n");
}

TEST(Cli, EvalColorAddsPerChannelLine) {
  image::ImagePlane a(16, 16, 3, 0.5), b(16, 16, 3, 0.5);
  b.values[5] = 0.9;
  image::save_image(a, at("a.png"));
  image::save_image(b, at("b.png"));
  const Result r = run("eval --ref " + at("a.png") + " --test " + at("b.png"));
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("SSIM R/G/B: "), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(call({}).code, cli::kUsage);
  EXPECT_EQ(call({"bogus"}).code, cli::kUsage);
  EXPECT_EQ(call({"corrupt", "--in", "x.png"}).code, cli::kUsage);
  EXPECT_EQ(call({"corrupt", "--in", "x", "--out", "y", "--sigma", "-3"}).code, cli::kUsage);
  EXPECT_EQ(call({"denoise", "--in", "a.png", "--out", "b.png"}).code, cli::kUsage);
  EXPECT_EQ(call({"denoise", "--model", "m", "--classic", "--in", "a", "--out", "b"}).code,
            cli::kUsage);
  EXPECT_EQ(call({"denoise", "--model", "m", "--mu", "3", "--in", "a", "--out", "b"}).code,
            cli::kUsage);
  const Result r = call({"eval", "--ref", "a.png"});
  EXPECT_NE(r.err.find("--test"), std::string::npos);
  EXPECT_EQ(run("").code, cli::kUsage);
}

TEST(Cli, OperationalErrorsExitOne) {
  EXPECT_EQ(call({"eval", "--ref", at("missing.png"), "--test", at("missing.png")}).code,
            cli::kFailure);
  EXPECT_EQ(call({"corrupt", "--in", kCamera, "--out", at("x.bmp"), "--sigma", "5"}).code,
            cli::kFailure);
  EXPECT_EQ(call({"denoise", "--model", at("nomodel"), "--in", kCamera, "--out", at("o.png")}).code,
            cli::kFailure);
}

TEST(Cli, HelpExitsZero) {
  const Result r = call({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("gradcheck"), std::string::npos);
}

TEST(Cli, TrainThenDenoise) {
  for (int k = 0; k < 3; ++k) {
    image::save_image(synthetic::scene(16, 16, 60 + k), at("t" + std::to_string(k) + ".png"));
  }
  {
    std::ofstream m(at("manifest.txt"));
    m << "t0.png\nt1.png\nt2.png\n";
    std::ofstream c(at("train.cfg"));
    c << "sigma=25\nepochs=2\nbatch_size=2\ncascades=2\npatch=8\nstride=6\nexemplars=2\n"
         "lr_schedule=1e-3\nlr_epochs=\nseed=4\n";
  }
  const std::string args = "train --data " + at("manifest.txt") + " --config " + at("train.cfg");
  const Result r1 = run(args + " --out-model " + at("m1.dglr") + " --log " + at("log1.txt"));
  ASSERT_EQ(r1.code, 0) << r1.err;
  const Result r2 = run(args + " --out-model " + at("m2.dglr") + " --log " + at("log2.txt"));
  ASSERT_EQ(r2.code, 0) << r2.err;
  const std::string log = bytes(at("log1.txt"));
  EXPECT_TRUE(std::regex_match(
      log, std::regex(R"((epoch \d+ loss \d\.\d{10}e[-+]\d+ lr [0-9.e-]+\n){2})")))
      << log;
  EXPECT_EQ(log, bytes(at("log2.txt")));
  EXPECT_EQ(bytes(at("m1.dglr")), bytes(at("m2.dglr")));

  // Odd-sized input exercises the pad/crop path.
  image::save_image(noise::add_awgn(synthetic::scene(18, 17, 70), {25, 1}), at("odd.png"));
  const Result d = run("denoise --model " + at("m1.dglr") + " --in " + at("odd.png") + " --out " +
                    at("odd_out.png") + " --threads 2");
  ASSERT_EQ(d.code, 0) << d.err;
  const auto out = image::load_image(at("odd_out.png"));
  EXPECT_EQ(out.height, 18u);
  EXPECT_EQ(out.width, 17u);

  image::save_image(image::ImagePlane(16, 16, 3, 0.5), at("rgb.png"));
  const Result bad = run("denoise --model " + at("m1.dglr") + " --in " + at("rgb.png") + " --out " +
                      at("c.png"));
  EXPECT_EQ(bad.code, cli::kFailure);  // color image, gray model
}

TEST(Cli, GradcheckPasses) {
  const Result r = run("gradcheck --seed 3");
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("backward_qp/mu"), std::string::npos);
  EXPECT_NE(r.out.find("cascade/tiny"), std::string::npos);
}
