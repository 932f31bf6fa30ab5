#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "phlat/harness.hpp"
#include "phlat/image.hpp"
#include "phlat/metrics.hpp"
#include "phlat/synth.hpp"
#include "phlat/tensor_io.hpp"

using namespace phlat;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("tensor files round-trip byte-exactly") {
  io::TensorData t;
  t.dims = {3, 2, 4};
  std::mt19937_64 rng(1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < 24; ++i) t.values.push_back(gauss(rng));

  const std::string a = temp_path("phlat_t1.phlt");
  const std::string b = temp_path("phlat_t2.phlt");
  io::write_tensor(a, t);
  const io::TensorData back = io::read_tensor(a);
  CHECK(back.dims == t.dims);
  CHECK(back.values == t.values);
  io::write_tensor(b, back);
  CHECK(slurp(a) == slurp(b));
  std::remove(a.c_str());
  std::remove(b.c_str());
}

TEST_CASE("tensor format errors carry byte offsets") {
  const std::string path = temp_path("phlat_bad.phlt");
  {
    std::ofstream out(path, std::ios::binary);
    out << "PHLTxx";
  }
  CHECK_THROWS_WITH_AS(io::read_tensor(path),
                       doctest::Contains("at byte"), std::runtime_error);
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE";
  }
  CHECK_THROWS_WITH_AS(io::read_tensor(path), doctest::Contains("bad magic"),
                       std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("matrix helpers preserve row-major order") {
  Eigen::MatrixXd m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  const std::string path = temp_path("phlat_m.phlt");
  io::write_matrix(path, m);
  const io::TensorData t = io::read_tensor(path);
  CHECK(t.values == std::vector<double>{1, 2, 3, 4, 5, 6});
  CHECK(io::read_matrix(path) == m);
  std::remove(path.c_str());
}

TEST_CASE("kernel checkpoints restore geometry, scales and weights") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> gauss(0.0, 1.0);
  PermutohedralKernel kernel(3, 2, 2, 1);
  for (Eigen::Index i = 0; i < kernel.weights().size(); ++i)
    kernel.weights().data()[i] = gauss(rng);
  Eigen::VectorXd scales(3);
  scales << 0.06, 0.06, 0.17;

  const std::string path = temp_path("phlat_k.phlk");
  io::write_kernel_checkpoint(path, kernel, scales);
  const io::KernelCheckpoint back = io::read_kernel_checkpoint(path);
  CHECK(back.kernel.d() == 3);
  CHECK(back.kernel.s() == 2);
  CHECK(back.kernel.c_in() == 2);
  CHECK(back.kernel.c_out() == 1);
  CHECK(back.kernel.weights() == kernel.weights());
  CHECK(back.scales == scales);
  std::remove(path.c_str());
}

TEST_CASE("pnm images survive a write/read/write cycle byte-exactly") {
  const img::Image scene = synth::scene(7, 33, 21, 3);
  const std::string a = temp_path("phlat_a.ppm");
  const std::string b = temp_path("phlat_b.ppm");
  img::write_pnm(a, scene);
  const img::Image back = img::read_pnm(a);
  CHECK(back.w == scene.w);
  CHECK(back.h == scene.h);
  img::write_pnm(b, back);
  CHECK(slurp(a) == slurp(b));
  std::remove(a.c_str());
  std::remove(b.c_str());

  const img::Image gray = img::to_gray(scene);
  const std::string g = temp_path("phlat_g.pgm");
  img::write_pnm(g, gray);
  const img::Image gback = img::read_pnm(g);
  CHECK(gback.channels() == 1);
  CHECK((gback.pixels * 255.0 -
         (gray.pixels * 255.0).array().round().matrix())
            .cwiseAbs()
            .maxCoeff() < 1e-9);
  std::remove(g.c_str());
}

TEST_CASE("pnm reader rejects malformed headers") {
  const std::string path = temp_path("phlat_bad.pgm");
  {
    std::ofstream out(path, std::ios::binary);
    out << "P5\n4 4\n65535\n";
  }
  CHECK_THROWS_WITH_AS(img::read_pnm(path), doctest::Contains("8-bit"),
                       std::runtime_error);
  {
    std::ofstream out(path, std::ios::binary);
    out << "P5\n4 4\n255\nab";
  }
  CHECK_THROWS_WITH_AS(img::read_pnm(path), doctest::Contains("truncated"),
                       std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("resampling helpers") {
  img::Image flat = img::make_image(8, 8, 3);
  flat.pixels.setConstant(0.4);
  const img::Image low = img::box_downsample(flat, 4);
  CHECK(low.w == 2);
  CHECK((low.pixels.array() - 0.4).abs().maxCoeff() < 1e-12);
  const img::Image up = img::bicubic_upsample(low, 4);
  CHECK(up.w == 8);
  CHECK((up.pixels.array() - 0.4).abs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(img::box_downsample(flat, 3), std::invalid_argument);
}

TEST_CASE("psnr and iou") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Random(16, 2);
  CHECK(metrics::psnr(a, a) == std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(metrics::psnr(a, Eigen::MatrixXd::Zero(3, 3)),
                  std::invalid_argument);

  Eigen::VectorXi p(4), t(4);
  p << 1, 1, 0, 0;
  t << 1, 1, 0, 0;
  CHECK(metrics::iou(p, t, 1) == 1.0);
  t << 0, 1, 1, 0;
  CHECK(metrics::iou(p, t, 1) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("noisy psnr sits at the analytic value") {
  // sigma = 25/255 on max 1.0: 20 log10(255/25) = 20.1720 dB.
  const img::Image clean = synth::scene(11, 512, 512, 1);
  const img::Image noisy = synth::add_gaussian_noise(clean, 25.0 / 255.0, 5);
  const double got = metrics::psnr(noisy.pixels, clean.pixels, 1.0);
  CHECK(std::abs(got - 20.172) < 0.1);
}

TEST_CASE("synthetic scenes are deterministic and bounded") {
  const img::Image a = synth::scene(3, 48, 32, 3);
  const img::Image b = synth::scene(3, 48, 32, 3);
  CHECK(a.pixels == b.pixels);
  CHECK(a.pixels.minCoeff() >= 0.1);
  CHECK(a.pixels.maxCoeff() <= 0.9);
  const img::Image c = synth::scene(4, 48, 32, 3);
  CHECK(a.pixels != c.pixels);
}

TEST_CASE("dense convolution plans blow past sane budgets in 5-D") {
  // The runtime-comparison scaling: features span [0, 50) per dimension.
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> unif(0.0, 50.0);
  FeatureSet fs;
  fs.points.resize(4096, 5);
  for (Eigen::Index i = 0; i < fs.points.size(); ++i)
    fs.points.data()[i] = unif(rng);
  fs.scales = Eigen::VectorXd::Ones(5);

  const harness::DenseConvPlan plan = harness::plan_dense_convolution(fs, 1, 3);
  CHECK(plan.bytes_required > (std::size_t{4} << 30));
  CHECK_THROWS_AS(harness::require_dense_budget(plan, std::size_t{1} << 30),
                  std::length_error);

  FeatureSet small;
  small.points = Eigen::MatrixXd::Random(10, 2) * 3.0;
  small.scales = Eigen::VectorXd::Ones(2);
  const harness::DenseConvPlan tiny = harness::plan_dense_convolution(small, 1, 1);
  CHECK_NOTHROW(harness::require_dense_budget(tiny, std::size_t{1} << 20));
}

TEST_CASE("upsampling machinery smoke test") {
  const img::Image full = synth::scene(21, 32, 32, 3);
  const img::Image low = img::box_downsample(full, 4);
  harness::UpsampleConfig cfg;
  cfg.factor = 4;
  cfg.position_scale = harness::default_position_scale(4);
  const img::Image up = joint_upsample(low, full, gaussian_kernel(3, 2), cfg);
  CHECK(up.w == 32);
  CHECK(up.pixels.allFinite());
  const double p_gauss = metrics::psnr(up.pixels, full.pixels);
  const double p_bicubic =
      metrics::psnr(img::bicubic_upsample(low, 4).pixels, full.pixels);
  CHECK(p_gauss > 0.0);
  CHECK(p_bicubic > 0.0);
}

TEST_CASE("denoise features and filtering smoke test") {
  const img::Image clean = img::to_gray(synth::scene(23, 24, 24, 1));
  const img::Image noisy = synth::add_gaussian_noise(clean, 25.0 / 255.0, 3);
  harness::DenoiseConfig cfg;
  const img::Image out = harness::denoise_image(
      noisy, gaussian_kernel(3, 2), cfg.position_scale, cfg.intensity_scale);
  CHECK(out.pixels.allFinite());
  CHECK(metrics::psnr(out.pixels, clean.pixels) >
        metrics::psnr(noisy.pixels, clean.pixels));
}
