// End-to-end checks of the command-line tool: file formats in, files out,
// exit codes as documented. The binary path comes from the build system.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <set>
#include <array>
#include <string>

#include "phlat/image.hpp"
#include "phlat/synth.hpp"
#include "phlat/tensor_io.hpp"

using namespace phlat;

namespace {

std::string temp_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "phlat_cli_test";
  std::filesystem::create_directories(dir);
  return dir.string();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PHLAT_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("filter: identity kernel on isolated points reproduces the signal") {
  const std::string dir = temp_dir();
  // Far-apart features: no shared simplex corners, so normalization
  // cancels the splat-slice factor exactly.
  Eigen::MatrixXd features(3, 2);
  features << 0.0, 0.0, 50.0, 0.0, 0.0, 50.0;
  Eigen::MatrixXd signal(3, 2);
  signal << 0.25, -1.0, 2.0, 0.5, -0.75, 3.0;
  io::write_matrix(dir + "/f.phlt", features);
  io::write_matrix(dir + "/v.phlt", signal);

  REQUIRE(run_cli("filter --features " + dir + "/f.phlt --signal " + dir +
                  "/v.phlt --s 1 --out " + dir + "/out.phlt") == 0);
  const Eigen::MatrixXd out = io::read_matrix(dir + "/out.phlt");
  CHECK((out - signal).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("filter: gaussian smoothing through external feature files") {
  const std::string dir = temp_dir();
  Eigen::MatrixXd features(4, 3);
  features << 0, 0, 0, 0.1, 0, 0, 0, 0.1, 0, 0.1, 0.1, 0;
  Eigen::MatrixXd signal(4, 1);
  signal << 1.0, 0.0, 0.0, 0.0;
  io::write_matrix(dir + "/f3.phlt", features);
  io::write_matrix(dir + "/v3.phlt", signal);

  REQUIRE(run_cli("filter --features " + dir + "/f3.phlt --signal " + dir +
                  "/v3.phlt --gauss --s 2 --out " + dir + "/sm.phlt") == 0);
  const Eigen::MatrixXd out = io::read_matrix(dir + "/sm.phlt");
  // Nearby points share mass; values stay within the signal's hull.
  CHECK(out.minCoeff() > 0.0);
  CHECK(out.maxCoeff() < 1.0);
}

TEST_CASE("filter: missing input file exits with the IO code") {
  const std::string dir = temp_dir();
  CHECK(run_cli("filter --features " + dir + "/nope.phlt --signal " + dir +
                "/nope.phlt --out " + dir + "/x.phlt") == 2);
}

TEST_CASE("lattice-viz produces an image with cells of identical color") {
  const std::string dir = temp_dir();
  img::write_pnm(dir + "/scene.ppm", synth::scene(5, 48, 32, 3));
  REQUIRE(run_cli("lattice-viz --image " + dir + "/scene.ppm --features xy "
                  "--scale 0.05 --out " + dir + "/viz.ppm") == 0);
  const img::Image viz = img::read_pnm(dir + "/viz.ppm");
  CHECK(viz.w == 48);
  CHECK(viz.h == 32);
  // Position-only features at a coarse scale: neighbors mostly share cells.
  int same = 0;
  for (int x = 0; x + 1 < viz.w; ++x)
    same +=
        (viz.pixels.row(x) - viz.pixels.row(x + 1)).cwiseAbs().maxCoeff() == 0.0;
  CHECK(same > viz.w / 2);
}

TEST_CASE("lattice-viz: identical features share a cell, tiny scales leave few") {
  const std::string dir = temp_dir();
  // A flat image under color-only features has one feature point, hence
  // exactly one cell.
  img::Image flat = img::make_image(16, 16, 3);
  flat.pixels.col(0).setConstant(0.3);
  flat.pixels.col(1).setConstant(0.6);
  flat.pixels.col(2).setConstant(0.2);
  img::write_pnm(dir + "/flat.ppm", flat);
  REQUIRE(run_cli("lattice-viz --image " + dir + "/flat.ppm --features rgb "
                  "--scale 0.01 --out " + dir + "/one.ppm") == 0);
  const img::Image one = img::read_pnm(dir + "/one.ppm");
  for (int p = 1; p < one.count(); ++p)
    CHECK(one.pixels.row(p) == one.pixels.row(0));

  // A vanishing scale parks every pixel around the origin vertex; only
  // the handful of cells in that vertex star remain.
  img::write_pnm(dir + "/scene2.ppm", synth::scene(6, 24, 24, 3));
  REQUIRE(run_cli("lattice-viz --image " + dir + "/scene2.ppm --features xy "
                  "--scale 1e-9 --out " + dir + "/star.ppm") == 0);
  const img::Image star = img::read_pnm(dir + "/star.ppm");
  std::set<std::array<double, 3>> colors;
  for (int p = 0; p < star.count(); ++p)
    colors.insert({star.pixels(p, 0), star.pixels(p, 1), star.pixels(p, 2)});
  CHECK(colors.size() <= 6);  // at most the 2-D vertex star
}

TEST_CASE("crf inference round-trips unary tensors") {
  const std::string dir = temp_dir();
  const img::Image scene = synth::scene(7, 16, 16, 3);
  img::write_pnm(dir + "/img.ppm", scene);
  Eigen::MatrixXd logits = Eigen::MatrixXd::Zero(16 * 16, 2);
  logits.col(0).setConstant(1.0);
  io::write_matrix(dir + "/unary.phlt", logits);

  REQUIRE(run_cli("crf --image " + dir + "/img.ppm --unary " + dir +
                  "/unary.phlt --logits --steps 1 --out-labels " + dir +
                  "/labels.phlt --out-marginals " + dir + "/q.phlt") == 0);
  const Eigen::MatrixXd labels = io::read_matrix(dir + "/labels.phlt");
  const Eigen::MatrixXd q = io::read_matrix(dir + "/q.phlt");
  CHECK(labels.rows() == 256);
  // Uniform class-0 logits everywhere: label 0 wins at every pixel.
  CHECK(labels.cwiseAbs().maxCoeff() == 0.0);
  CHECK((q.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
}

TEST_CASE("upsample single-image mode reports PSNR against a reference") {
  const std::string dir = temp_dir();
  const img::Image full = synth::scene(9, 32, 32, 3);
  img::write_pnm(dir + "/full.ppm", full);
  img::write_pnm(dir + "/low.ppm", img::box_downsample(full, 4));
  img::write_pnm(dir + "/guide.pgm", img::to_gray(full));
  CHECK(run_cli("upsample --factor 4 --guide " + dir + "/guide.pgm --low " +
                dir + "/low.ppm --gauss --out " + dir + "/up.ppm --ref " + dir +
                "/full.ppm") == 0);
  const img::Image up = img::read_pnm(dir + "/up.ppm");
  CHECK(up.w == 32);
}
