// Command-line front end: single-filter applications (denoise, upsample,
// generic filtering), the tiles networks, the dense-CRF benchmark, the
// gradient checker and the lattice visualizer.
//
// Exit codes: 0 success, 1 metric failure, 2 IO/format error.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "phlat/crf.hpp"
#include "phlat/harness.hpp"
#include "phlat/image.hpp"
#include "phlat/metrics.hpp"
#include "phlat/nn.hpp"
#include "phlat/synth.hpp"
#include "phlat/tensor_io.hpp"

namespace {

using namespace phlat;

constexpr int kExitOk = 0;
constexpr int kExitMetricFailure = 1;
constexpr int kExitIoError = 2;

std::vector<img::Image> load_image_dir(const std::string& dir) {
  std::vector<std::string> names;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string ext = entry.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm") names.push_back(entry.path().string());
  }
  std::sort(names.begin(), names.end());
  std::vector<img::Image> images;
  for (const std::string& name : names) images.push_back(img::read_pnm(name));
  if (images.empty())
    throw std::runtime_error(dir + ": no .pgm/.ppm images found");
  return images;
}

void write_manifest(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

// Train/eval sources: an image directory or seeded synthetic scenes.
struct DatasetArgs {
  std::string images_dir;
  int synthetic = 0;
  int size = 96;
  std::uint64_t seed = 42;
  int train_count = 0;  // 0: half/half split

  std::vector<img::Image> load(int channels, nlohmann::json* manifest) const {
    std::vector<img::Image> set;
    if (!images_dir.empty()) {
      set = load_image_dir(images_dir);
      if (manifest) (*manifest)["source"] = images_dir;
    } else {
      const int count = synthetic > 0 ? synthetic : 12;
      set = synth::scene_set(seed, count, size, size, channels);
      if (manifest) {
        (*manifest)["source"] = "synthetic";
        (*manifest)["seed"] = seed;
        (*manifest)["count"] = count;
        (*manifest)["size"] = size;
      }
    }
    return set;
  }

  void split(std::vector<img::Image> all, std::vector<img::Image>& train,
             std::vector<img::Image>& test, nlohmann::json* manifest) const {
    const int n_train =
        train_count > 0 ? std::min<int>(train_count, all.size() - 1)
                        : static_cast<int>(all.size()) / 2;
    train.assign(all.begin(), all.begin() + n_train);
    test.assign(all.begin() + n_train, all.end());
    if (manifest) {
      (*manifest)["train_count"] = train.size();
      (*manifest)["test_count"] = test.size();
    }
  }
};

void add_dataset_options(CLI::App* cmd, DatasetArgs& args) {
  cmd->add_option("--images", args.images_dir,
                  "Directory of .pgm/.ppm images (default: synthetic scenes)");
  cmd->add_option("--synthetic", args.synthetic,
                  "Number of synthetic scenes when no directory is given");
  cmd->add_option("--size", args.size, "Synthetic scene side length");
  cmd->add_option("--seed", args.seed, "Seed for data generation and training");
  cmd->add_option("--train-count", args.train_count,
                  "Images used for training (default: half)");
}

// ---- denoise ----------------------------------------------------------------

int run_denoise_cmd(const DatasetArgs& data, double sigma255, int epochs,
                    double lr, const std::string& out_kernel,
                    const std::string& manifest_path, bool check_order) {
  harness::DenoiseConfig cfg;
  cfg.sigma = sigma255 / 255.0;
  cfg.train.epochs = epochs;
  cfg.train.sgd.lr = lr;
  cfg.train.seed = data.seed;

  nlohmann::json manifest;
  std::vector<img::Image> train, test;
  DatasetArgs grayscale = data;
  std::vector<img::Image> all = grayscale.load(1, &manifest);
  for (img::Image& im : all) im = img::to_gray(im);
  grayscale.split(std::move(all), train, test, &manifest);

  const harness::DenoiseOutcome out = harness::run_denoise(train, test, cfg);
  std::printf("denoise sigma=%.0f/255 on %zu test images\n", sigma255,
              test.size());
  std::printf("  noisy    %7.2f dB\n", out.psnr_noisy);
  std::printf("  spatial  %7.2f dB\n", out.psnr_spatial);
  std::printf("  gauss    %7.2f dB\n", out.psnr_gauss);
  std::printf("  learned  %7.2f dB\n", out.psnr_learned);

  if (!out_kernel.empty()) {
    Eigen::VectorXd scales(3);
    scales << cfg.position_scale, cfg.position_scale, cfg.intensity_scale;
    io::write_kernel_checkpoint(out_kernel, out.learned_kernel, scales);
  }
  if (!manifest_path.empty()) {
    manifest["sigma"] = sigma255;
    manifest["psnr"] = {{"noisy", out.psnr_noisy},
                        {"spatial", out.psnr_spatial},
                        {"gauss", out.psnr_gauss},
                        {"learned", out.psnr_learned}};
    write_manifest(manifest_path, manifest);
  }
  if (check_order &&
      !(out.psnr_learned >= out.psnr_gauss && out.psnr_gauss >= out.psnr_noisy)) {
    std::printf("FAIL: expected learned >= gauss >= noisy\n");
    return kExitMetricFailure;
  }
  return kExitOk;
}

// ---- upsample ---------------------------------------------------------------

int run_upsample_single(const std::string& guide_path, const std::string& low_path,
                        int factor, const std::string& kernel_path, bool gauss,
                        bool bicubic, const std::string& out_path,
                        const std::string& ref_path) {
  const img::Image guide = img::read_pnm(guide_path);
  const img::Image low = img::read_pnm(low_path);

  harness::UpsampleConfig cfg;
  cfg.factor = factor;
  cfg.position_scale = harness::default_position_scale(factor);

  img::Image result;
  if (bicubic) {
    result = factor == 1 ? low : img::bicubic_upsample(low, factor);
  } else {
    PermutohedralKernel kernel;
    if (!kernel_path.empty()) {
      const io::KernelCheckpoint ckpt = io::read_kernel_checkpoint(kernel_path);
      kernel = ckpt.kernel;
      cfg.position_scale = ckpt.scales[0];
      cfg.intensity_scale = ckpt.scales[2];
      cfg.s = kernel.s();
    } else if (gauss) {
      kernel = gaussian_kernel(3, cfg.s);
    } else {
      kernel = PermutohedralKernel::delta(3, cfg.s);
    }
    result = harness::joint_upsample(low, guide, kernel, cfg);
  }

  if (!out_path.empty()) img::write_pnm(out_path, result);
  if (!ref_path.empty()) {
    const img::Image ref = img::read_pnm(ref_path);
    std::printf("psnr %.4f dB\n", metrics::psnr(result.pixels, ref.pixels));
  }
  return kExitOk;
}

int run_upsample_bench(const DatasetArgs& data, int factor, int epochs, double lr,
                       const std::string& out_kernel,
                       const std::string& manifest_path, bool check_order) {
  harness::UpsampleConfig cfg;
  cfg.factor = factor;
  cfg.position_scale = harness::default_position_scale(factor);
  cfg.train.epochs = epochs;
  cfg.train.sgd.lr = lr;
  cfg.train.seed = data.seed;

  nlohmann::json manifest;
  std::vector<img::Image> train, test;
  DatasetArgs color = data;
  color.split(color.load(3, &manifest), train, test, &manifest);

  const harness::UpsampleOutcome out = harness::run_upsample(train, test, cfg);
  std::printf("upsample %dx on %zu test images\n", factor, test.size());
  std::printf("  bicubic  %7.2f dB\n", out.psnr_bicubic);
  std::printf("  gauss    %7.2f dB\n", out.psnr_gauss);
  std::printf("  learned  %7.2f dB\n", out.psnr_learned);

  if (!out_kernel.empty()) {
    Eigen::VectorXd scales(3);
    scales << cfg.position_scale, cfg.position_scale, cfg.intensity_scale;
    io::write_kernel_checkpoint(out_kernel, out.learned_kernel, scales);
  }
  if (!manifest_path.empty()) {
    manifest["factor"] = factor;
    manifest["psnr"] = {{"bicubic", out.psnr_bicubic},
                        {"gauss", out.psnr_gauss},
                        {"learned", out.psnr_learned}};
    write_manifest(manifest_path, manifest);
  }
  if (check_order && !(out.psnr_learned >= out.psnr_gauss &&
                       out.psnr_gauss >= out.psnr_bicubic)) {
    std::printf("FAIL: expected learned >= gauss >= bicubic\n");
    return kExitMetricFailure;
  }
  return kExitOk;
}

// ---- tiles ------------------------------------------------------------------

int run_tiles(const std::string& variant, int epochs, int train, int val,
              int test, std::uint64_t seed, const std::string& csv_path,
              double stop_at, int batch, double lr) {
  nn::TilesConfig cfg;
  cfg.batch = batch;
  cfg.sgd.lr = lr;
  if (variant == "bnn")
    cfg.variant = nn::TilesVariant::bnn;
  else if (variant == "cnn")
    cfg.variant = nn::TilesVariant::cnn;
  else if (variant == "pixel")
    cfg.variant = nn::TilesVariant::pixel;
  else
    throw CLI::ValidationError("--variant must be bnn, cnn or pixel");
  cfg.epochs = epochs;
  cfg.train_images = train;
  cfg.val_images = val;
  cfg.test_images = test;
  cfg.seed = seed;
  cfg.stop_at_val_iou = stop_at;

  const nn::TilesResult result = nn::train_tiles(cfg);
  std::printf("tiles %s: %lld parameters\n", variant.c_str(),
              static_cast<long long>(result.param_count));
  for (const nn::TilesEpoch& e : result.curve)
    std::printf("  epoch %3d  loss %.4f  val IoU %.4f\n", e.epoch, e.train_loss,
                e.val_iou);
  std::printf("test IoU %.4f\n", result.test_iou);

  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    csv << "epoch,train_loss,val_iou\n";
    for (const nn::TilesEpoch& e : result.curve)
      csv << e.epoch << "," << e.train_loss << "," << e.val_iou << "\n";
  }
  return kExitOk;
}

// ---- crf --------------------------------------------------------------------

std::vector<crf::KernelFeatureSpec> crf_specs(double pos_scale, double color_scale,
                                              double spatial_scale, int s) {
  crf::KernelFeatureSpec bilateral;
  bilateral.kind = crf::KernelFeatureSpec::Kind::position_color;
  bilateral.position_scale = pos_scale;
  bilateral.color_scale = color_scale;
  bilateral.s = s;
  crf::KernelFeatureSpec spatial;
  spatial.kind = crf::KernelFeatureSpec::Kind::position;
  spatial.position_scale = spatial_scale;
  spatial.s = s;
  return {bilateral, spatial};
}

int run_crf_bench(int images, int size, std::uint64_t seed, int steps, int epochs,
                  double lr, double potts_weight, bool check) {
  synth::CrfBenchConfig bench;
  bench.images = images;
  bench.size = size;
  bench.seed = seed;

  std::vector<crf::CrfImage> all = synth::crf_benchmark(bench);
  const int n_train = images / 2;
  const std::vector<crf::CrfImage> train(all.begin(), all.begin() + n_train);
  const std::vector<crf::CrfImage> test(all.begin() + n_train, all.end());

  crf::MeanFieldModel gauss = crf::MeanFieldModel::gaussian(
      2, potts_weight, crf_specs(0.2, 0.03, 0.4, 1), steps);

  auto artifacts = [&](const crf::MeanFieldModel& model,
                       const std::vector<crf::CrfImage>& set) {
    std::vector<crf::CrfArtifacts> arts;
    arts.reserve(set.size());
    for (const crf::CrfImage& im : set)
      arts.push_back(crf::build_crf_artifacts(model, im));
    return arts;
  };
  auto accuracy = [&](const crf::MeanFieldModel& model,
                      const std::vector<crf::CrfImage>& set,
                      const std::vector<crf::CrfArtifacts>& arts, int T) {
    double acc = 0.0;
    for (std::size_t i = 0; i < set.size(); ++i)
      acc += crf::pixel_accuracy(
          crf::mf_inference(model, arts[i], set[i].unary, T), set[i].labels);
    return acc / set.size();
  };

  const std::vector<crf::CrfArtifacts> test_gauss_arts = artifacts(gauss, test);
  double unary_acc = 0.0;
  for (const crf::CrfImage& im : test)
    unary_acc += crf::pixel_accuracy(crf::init_marginals(im.unary), im.labels);
  unary_acc /= test.size();
  const double gauss_acc = accuracy(gauss, test, test_gauss_arts, steps);

  crf::MeanFieldModel learned = gauss.trainable(false);
  const std::vector<crf::CrfArtifacts> train_arts = artifacts(learned, train);
  const std::vector<crf::CrfArtifacts> test_arts = artifacts(learned, test);
  crf::MfTrainConfig tc;
  tc.sgd.lr = lr;
  tc.epochs = epochs;
  tc.batch = 8;
  tc.seed = seed;
  crf::mf_train(learned, train, train_arts, tc);
  const double learned_acc = accuracy(learned, test, test_arts, steps);

  crf::MeanFieldModel loose = learned.trainable(true);
  crf::mf_train(loose, train, train_arts, tc);
  const double loose_acc = accuracy(loose, test, test_arts, steps);

  std::printf("crf bench (%d train / %d test, %d steps)\n", n_train,
              static_cast<int>(test.size()), steps);
  std::printf("  unaries       %.4f\n", unary_acc);
  std::printf("  gauss MF      %.4f\n", gauss_acc);
  std::printf("  learned MF    %.4f\n", learned_acc);
  std::printf("  loose MF      %.4f\n", loose_acc);

  if (check && !(gauss_acc > unary_acc && learned_acc >= gauss_acc)) {
    std::printf("FAIL: expected gauss > unary and learned >= gauss\n");
    return kExitMetricFailure;
  }
  return kExitOk;
}

int run_crf_infer(const std::string& image_path, const std::string& unary_path,
                  bool logits, int steps, double pos_scale, double color_scale,
                  double spatial_scale, double potts_weight,
                  const std::string& out_labels, const std::string& out_marginals) {
  const img::Image image = img::read_pnm(image_path);
  Eigen::MatrixXd unary = io::read_matrix(unary_path);
  if (unary.rows() != image.count())
    throw std::runtime_error(unary_path + ": unary rows != pixel count");
  if (logits) unary = crf::unary_from_logits(unary);

  crf::CrfImage im;
  im.h = image.h;
  im.w = image.w;
  im.rgb = image.channels() == 3
               ? image.pixels
               : Eigen::MatrixXd(image.pixels.replicate(1, 3));
  im.unary = unary;

  crf::MeanFieldModel model = crf::MeanFieldModel::gaussian(
      static_cast<int>(unary.cols()), potts_weight,
      crf_specs(pos_scale, color_scale, spatial_scale, 1), steps);
  const crf::CrfArtifacts art = crf::build_crf_artifacts(model, im);
  const Eigen::MatrixXd q = crf::mf_inference(model, art, im.unary);

  if (!out_marginals.empty()) io::write_matrix(out_marginals, q);
  if (!out_labels.empty()) {
    Eigen::MatrixXd labels(q.rows(), 1);
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      Eigen::Index best = 0;
      q.row(i).maxCoeff(&best);
      labels(i, 0) = static_cast<double>(best);
    }
    io::write_matrix(out_labels, labels);
  }
  std::printf("crf: %d pixels, %d labels, %d steps\n", image.count(),
              static_cast<int>(unary.cols()), steps);
  return kExitOk;
}

// ---- gradcheck ---------------------------------------------------------------

int run_gradcheck(std::uint64_t seed, int instances, double tol) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    GradCheckSpec spec;
    spec.seed = rng();
    spec.d = 1 + static_cast<int>(rng() % 4);
    spec.s = 1 + static_cast<int>(rng() % 2);
    spec.n = 5 + static_cast<int>(rng() % 46);
    spec.c_in = 1 + static_cast<int>(rng() % 3);
    spec.c_out = 1 + static_cast<int>(rng() % 3);
    spec.shared_points = rng() % 2 == 0;
    spec.n_out = 5 + static_cast<int>(rng() % 20);
    spec.scalar_kernel = rng() % 4 == 0;
    const GradCheckReport report = grad_check(spec, tol);
    worst = std::max(worst, report.max_rel_err());
    std::printf("  instance %2d: d=%d s=%d n=%d c=%d/%d max rel err %.3e\n", i,
                spec.d, spec.s, spec.n, spec.c_in, spec.c_out,
                report.max_rel_err());
  }
  std::printf("max relative error %.3e (tolerance %.1e)\n", worst, tol);
  if (worst >= tol) {
    std::printf("FAIL\n");
    return kExitMetricFailure;
  }
  std::printf("PASS\n");
  return kExitOk;
}

// ---- filter ------------------------------------------------------------------

int run_filter(const std::string& features_path, const std::string& signal_path,
               const std::string& features_out_path, const std::string& kernel_path,
               bool gauss, int s, const std::string& scales_csv,
               const std::string& out_path, bool normalize) {
  const Eigen::MatrixXd points = io::read_matrix(features_path);
  const Eigen::MatrixXd signal = io::read_matrix(signal_path);
  const int d = static_cast<int>(points.cols());

  FeatureSet fin;
  fin.points = points;
  fin.scales = Eigen::VectorXd::Ones(d);

  PermutohedralKernel kernel;
  if (!kernel_path.empty()) {
    const io::KernelCheckpoint ckpt = io::read_kernel_checkpoint(kernel_path);
    if (ckpt.kernel.d() != d)
      throw std::runtime_error(kernel_path + ": kernel dimension mismatch");
    kernel = ckpt.kernel;
    fin.scales = ckpt.scales;
  } else if (gauss) {
    kernel = gaussian_kernel(d, s);
  } else {
    kernel = PermutohedralKernel::delta(d, s);
  }
  if (!scales_csv.empty()) {
    std::stringstream ss(scales_csv);
    std::string tok;
    int at = 0;
    while (std::getline(ss, tok, ',') && at < d) fin.scales[at++] = std::stod(tok);
    if (at != d)
      throw std::runtime_error("--scales: expected " + std::to_string(d) +
                               " comma-separated values");
  }

  FeatureSet fout = fin;
  if (!features_out_path.empty()) {
    fout.points = io::read_matrix(features_out_path);
    if (fout.points.cols() != d)
      throw std::runtime_error(features_out_path + ": dimension mismatch");
  }

  BilateralOptions opts;
  opts.normalize = normalize;
  const Eigen::MatrixXd out = bilateral_filter(fin, fout, signal, kernel, opts);
  io::write_matrix(out_path, out);
  std::printf("filtered %lld points (%d-D features) -> %lld outputs\n",
              static_cast<long long>(signal.rows()), d,
              static_cast<long long>(out.rows()));
  return kExitOk;
}

// ---- lattice-viz ---------------------------------------------------------------

int run_lattice_viz(const std::string& image_path, const std::string& features,
                    double scale, const std::string& out_path) {
  const img::Image image = img::read_pnm(image_path);
  const img::Image rgb =
      image.channels() == 3 ? image : [&] {
        img::Image c = img::make_image(image.w, image.h, 3);
        c.pixels = image.pixels.replicate(1, 3);
        return c;
      }();

  int d;
  if (features == "xy")
    d = 2;
  else if (features == "rgb")
    d = 3;
  else if (features == "xyrgb")
    d = 5;
  else
    throw CLI::ValidationError("--features must be xy, rgb or xyrgb");

  img::Image viz = img::make_image(image.w, image.h, 3);
  Eigen::VectorXd f(d);
  const Eigen::VectorXd scales = Eigen::VectorXd::Constant(d, scale);
  for (int y = 0; y < image.h; ++y)
    for (int x = 0; x < image.w; ++x) {
      const int p = y * image.w + x;
      int at = 0;
      if (features != "rgb") {
        f[at++] = x;
        f[at++] = y;
      }
      if (features != "xy")
        for (int c = 0; c < 3; ++c) f[at++] = 255.0 * rgb.pixels(p, c);

      const SimplexLookup lookup = find_simplex(elevate(f, scales));
      // Simplex identity: the sorted corner-key tuple.
      std::vector<LatticeKey> corners;
      for (int r = 0; r <= d; ++r) corners.push_back(lookup.corner_key(r));
      std::sort(corners.begin(), corners.end());
      std::uint64_t h = 0x9e3779b97f4a7c15ull;
      for (const LatticeKey& key : corners)
        for (Index c : key.coords()) {
          h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(c)) +
               0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        }
      viz.pixels(p, 0) = ((h >> 0) & 255) / 255.0;
      viz.pixels(p, 1) = ((h >> 8) & 255) / 255.0;
      viz.pixels(p, 2) = ((h >> 16) & 255) / 255.0;
    }
  img::write_pnm(out_path, viz);
  std::printf("wrote %s\n", out_path.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse high-dimensional filtering on the permutohedral lattice"};
  app.require_subcommand(1);

  // denoise
  auto* denoise = app.add_subcommand("denoise", "Train/evaluate denoising filters");
  DatasetArgs den_data;
  add_dataset_options(denoise, den_data);
  double den_sigma = 25.0;
  int den_epochs = 40;
  double den_lr = 20.0;
  std::string den_kernel, den_manifest;
  bool den_check = false;
  denoise->add_option("--sigma", den_sigma, "Noise level on a 0..255 range");
  denoise->add_option("--epochs", den_epochs);
  denoise->add_option("--lr", den_lr);
  denoise->add_option("--out-kernel", den_kernel, "Write the learned filter");
  denoise->add_option("--manifest", den_manifest);
  denoise->add_flag("--check", den_check, "Exit 1 unless learned >= gauss >= noisy");

  // upsample
  auto* upsample = app.add_subcommand("upsample", "Joint bilateral upsampling");
  DatasetArgs up_data;
  add_dataset_options(upsample, up_data);
  int up_factor = 4;
  std::string up_guide, up_low, up_kernel, up_out, up_ref, up_out_kernel,
      up_manifest;
  bool up_gauss = false, up_bicubic = false, up_bench = false, up_check = false;
  int up_epochs = 40;
  double up_lr = 20.0;
  upsample->add_option("--factor", up_factor)->check(CLI::IsMember({1, 2, 4, 8, 16}));
  upsample->add_option("--guide", up_guide, "Full-resolution guidance image");
  upsample->add_option("--low", up_low, "Low-resolution input image");
  upsample->add_option("--kernel", up_kernel, "Kernel checkpoint to apply");
  upsample->add_flag("--gauss", up_gauss, "Use the Gaussian baseline");
  upsample->add_flag("--bicubic", up_bicubic, "Bicubic interpolation only");
  upsample->add_option("--out", up_out, "Write the upsampled image");
  upsample->add_option("--ref", up_ref, "Ground truth for PSNR");
  upsample->add_flag("--bench", up_bench, "Train and compare on a dataset");
  upsample->add_option("--epochs", up_epochs);
  upsample->add_option("--lr", up_lr);
  upsample->add_option("--out-kernel", up_out_kernel);
  upsample->add_option("--manifest", up_manifest);
  upsample->add_flag("--check", up_check,
                     "Exit 1 unless learned >= gauss >= bicubic");

  // tiles
  auto* tiles = app.add_subcommand("tiles", "Tile segmentation networks");
  std::string tiles_variant = "bnn", tiles_csv;
  int tiles_epochs = 30, tiles_train = 1000, tiles_val = 200, tiles_test = 200;
  std::uint64_t tiles_seed = 42;
  double tiles_stop = -1.0, tiles_lr = 0.01;
  int tiles_batch = 100;
  tiles->add_option("--variant", tiles_variant, "bnn, cnn or pixel");
  tiles->add_option("--epochs", tiles_epochs);
  tiles->add_option("--train", tiles_train);
  tiles->add_option("--val", tiles_val);
  tiles->add_option("--test", tiles_test);
  tiles->add_option("--seed", tiles_seed);
  tiles->add_option("--batch", tiles_batch);
  tiles->add_option("--lr", tiles_lr);
  tiles->add_option("--csv", tiles_csv, "Write the IoU-per-epoch curve");
  tiles->add_option("--stop-at", tiles_stop, "Early-stop at this val IoU");

  // crf
  auto* crf_cmd = app.add_subcommand("crf", "Dense-CRF mean-field inference");
  bool crf_bench = false, crf_logits = false, crf_check = false;
  int crf_images = 40, crf_size = 32, crf_steps = 2, crf_epochs = 8;
  std::uint64_t crf_seed = 1;
  double crf_lr = 0.05, crf_potts = 1.0;
  std::string crf_image, crf_unary, crf_out_labels, crf_out_marginals;
  double crf_pos = 0.2, crf_color = 0.03, crf_spatial = 0.4;
  crf_cmd->add_flag("--bench", crf_bench, "Run the synthetic-unary benchmark");
  crf_cmd->add_option("--bench-images", crf_images);
  crf_cmd->add_option("--bench-size", crf_size);
  crf_cmd->add_option("--seed", crf_seed);
  crf_cmd->add_option("--steps", crf_steps);
  crf_cmd->add_option("--epochs", crf_epochs);
  crf_cmd->add_option("--lr", crf_lr);
  crf_cmd->add_option("--potts", crf_potts);
  crf_cmd->add_flag("--check", crf_check);
  crf_cmd->add_option("--image", crf_image, "Image for inference mode");
  crf_cmd->add_option("--unary", crf_unary, "Unary tensor (n x L)");
  crf_cmd->add_flag("--logits", crf_logits, "Unaries are raw logits");
  crf_cmd->add_option("--pos-scale", crf_pos);
  crf_cmd->add_option("--color-scale", crf_color);
  crf_cmd->add_option("--spatial-scale", crf_spatial);
  crf_cmd->add_option("--out-labels", crf_out_labels);
  crf_cmd->add_option("--out-marginals", crf_out_marginals);

  // gradcheck
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference checks");
  std::uint64_t gc_seed = 7;
  int gc_instances = 10;
  double gc_tol = 1e-5;
  gradcheck_cmd->add_option("--seed", gc_seed);
  gradcheck_cmd->add_option("--instances", gc_instances);
  gradcheck_cmd->add_option("--tol", gc_tol);

  // filter
  auto* filter_cmd = app.add_subcommand("filter", "Filter signals at external features");
  std::string f_features, f_signal, f_features_out, f_kernel, f_scales, f_out;
  bool f_gauss = false, f_no_normalize = false;
  int f_s = 1;
  filter_cmd->add_option("--features", f_features)->required();
  filter_cmd->add_option("--signal", f_signal)->required();
  filter_cmd->add_option("--features-out", f_features_out,
                         "Slice at these features instead of the inputs");
  filter_cmd->add_option("--kernel", f_kernel, "Kernel checkpoint");
  filter_cmd->add_flag("--gauss", f_gauss);
  filter_cmd->add_option("--s", f_s, "Neighborhood size for --gauss/identity");
  filter_cmd->add_option("--scales", f_scales, "Comma-separated feature scales");
  filter_cmd->add_option("--out", f_out)->required();
  filter_cmd->add_flag("--no-normalize", f_no_normalize);

  // lattice-viz
  auto* viz = app.add_subcommand("lattice-viz", "Color pixels by simplex cell");
  std::string viz_image, viz_features = "xy", viz_out = "lattice.ppm";
  double viz_scale = 0.01;
  viz->add_option("--image", viz_image)->required();
  viz->add_option("--features", viz_features, "xy, rgb or xyrgb");
  viz->add_option("--scale", viz_scale);
  viz->add_option("--out", viz_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (denoise->parsed())
      return run_denoise_cmd(den_data, den_sigma, den_epochs, den_lr, den_kernel,
                             den_manifest, den_check);
    if (upsample->parsed()) {
      if (up_bench)
        return run_upsample_bench(up_data, up_factor, up_epochs, up_lr,
                                  up_out_kernel, up_manifest, up_check);
      if (up_guide.empty() || up_low.empty())
        throw CLI::ValidationError("upsample needs --guide and --low (or --bench)");
      return run_upsample_single(up_guide, up_low, up_factor, up_kernel, up_gauss,
                                 up_bicubic, up_out, up_ref);
    }
    if (tiles->parsed())
      return run_tiles(tiles_variant, tiles_epochs, tiles_train, tiles_val,
                       tiles_test, tiles_seed, tiles_csv, tiles_stop,
                       tiles_batch, tiles_lr);
    if (crf_cmd->parsed()) {
      if (crf_bench)
        return run_crf_bench(crf_images, crf_size, crf_seed, crf_steps, crf_epochs,
                             crf_lr, crf_potts, crf_check);
      if (crf_image.empty() || crf_unary.empty())
        throw CLI::ValidationError("crf needs --image and --unary (or --bench)");
      return run_crf_infer(crf_image, crf_unary, crf_logits, crf_steps, crf_pos,
                           crf_color, crf_spatial, crf_potts, crf_out_labels,
                           crf_out_marginals);
    }
    if (gradcheck_cmd->parsed())
      return run_gradcheck(gc_seed, gc_instances, gc_tol);
    if (filter_cmd->parsed())
      return run_filter(f_features, f_signal, f_features_out, f_kernel, f_gauss,
                        f_s, f_scales, f_out, !f_no_normalize);
    if (viz->parsed())
      return run_lattice_viz(viz_image, viz_features, viz_scale, viz_out);
  } catch (const CLI::Error& e) {
    std::cerr << e.what() << "\n";
    return kExitIoError;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIoError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIoError;
  }
  return kExitOk;
}
