// Acceptance suite: one check per shipping criterion, each printing a
// single PASS/FAIL line with its measured numbers and runtime. Run with
// no arguments for the full list or with criterion numbers to select.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <string>
#include <vector>

#include "phlat/crf.hpp"
#include "phlat/harness.hpp"
#include "phlat/metrics.hpp"
#include "phlat/nn.hpp"
#include "phlat/synth.hpp"

namespace {

using namespace phlat;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* format, ...) {
  va_list args;
  va_start(args, format);
  char buf[512];
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

FeatureSet random_features(std::mt19937_64& rng, int n, int d, double extent) {
  std::uniform_real_distribution<double> unif(0.0, extent);
  FeatureSet fs;
  fs.points.resize(n, d);
  for (Eigen::Index i = 0; i < fs.points.size(); ++i)
    fs.points.data()[i] = unif(rng);
  fs.scales = Eigen::VectorXd::Ones(d);
  return fs;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = gauss(rng);
  return m;
}

PermutohedralKernel random_kernel(std::mt19937_64& rng, int d, int s, int c_in,
                                  int c_out) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  PermutohedralKernel k(d, s, c_in, c_out);
  for (Eigen::Index i = 0; i < k.weights().size(); ++i)
    k.weights().data()[i] = gauss(rng) / std::sqrt(double(k.t()));
  return k;
}

// 1. Analytic gradients vs central finite differences, 50 random instances.
Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    GradCheckSpec spec;
    spec.seed = rng();
    spec.d = 1 + static_cast<int>(rng() % 4);
    spec.s = 1 + static_cast<int>(rng() % 2);
    spec.n = 5 + static_cast<int>(rng() % 46);
    spec.c_in = 1 + static_cast<int>(rng() % 3);
    spec.c_out = 1 + static_cast<int>(rng() % 3);
    spec.shared_points = rng() % 2 == 0;
    spec.n_out = 5 + static_cast<int>(rng() % 30);
    spec.scalar_kernel = rng() % 4 == 0;
    worst = std::max(worst, grad_check(spec, 1e-5).max_rel_err());
  }
  const double secs = seconds_since(t0);
  Outcome out;
  out.pass = worst < 1e-5 && secs < 60.0;
  out.detail = fmt("max_rel_err=%.3e (limit 1e-5), 50 instances in %.1fs (limit 60s)",
                   worst, secs);
  return out;
}

// 2. Pipeline output equals the dense matrix composition.
Outcome criterion_dense_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const int d = 1 + static_cast<int>(rng() % 3);
    const int s = 1 + static_cast<int>(rng() % 2);
    const int n = 8 + static_cast<int>(rng() % 13);
    const int n_out = 6 + static_cast<int>(rng() % 10);
    const bool scalar = rng() % 3 == 0;
    const FeatureSet in = random_features(rng, n, d, 2.5);
    const FeatureSet out_f = random_features(rng, n_out, d, 2.5);
    const PermutohedralKernel kernel = scalar ? random_kernel(rng, d, s, 1, 1)
                                              : random_kernel(rng, d, s, 2, 2);
    const Eigen::MatrixXd v = random_matrix(rng, n, 2);
    const DenseOracleResult oracle = dense_oracle(in, out_f, v, kernel);
    BilateralOptions opts;
    opts.normalize = false;
    const Eigen::MatrixXd got = bilateral_filter(in, out_f, v, kernel, opts);
    worst = std::max(worst, (got - oracle.forward).cwiseAbs().maxCoeff());
  }
  const double secs = seconds_since(t0);
  Outcome out;
  out.pass = worst < 1e-10 && secs < 10.0;
  out.detail = fmt("max_abs_err=%.3e (limit 1e-10), 20 instances in %.1fs (limit 10s)",
                   worst, secs);
  return out;
}

// 3. |neighbors| = (s+1)^{d+1} - s^{d+1} for d <= 5, s <= 3.
Outcome criterion_combinatorics() {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> unif(-8.0, 8.0);
  bool pass = true;
  for (int d = 1; d <= 5 && pass; ++d) {
    Eigen::VectorXd y(d + 1);
    for (int i = 0; i <= d; ++i) y[i] = unif(rng);
    y.array() -= y.mean();
    const SimplexLookup lookup = find_simplex(y);
    for (int s = 0; s <= 3 && pass; ++s)
      for (int r = 0; r <= d && pass; ++r)
        pass = static_cast<std::int64_t>(neighbors(lookup.corner_key(r), s).size()) ==
               filter_size(d, s);
  }
  // The grid-projection example: 7 points for a 1-D lattice at s = 3,
  // and the 2-D one-hop neighborhood of 7.
  pass = pass && filter_size(1, 3) == 7 &&
         neighbors(LatticeKey::zero(1), 3).size() == 7 &&
         neighbors(LatticeKey::zero(2), 1).size() == 7;
  Outcome out;
  out.pass = pass;
  out.detail = "counts exact for d<=5, s<=3 incl. t=4^2-3^2=7";
  return out;
}

// 4. Barycentric invariants over 1e5 points plus exact special cases.
Outcome criterion_barycentric() {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> unif(-50.0, 50.0);
  double worst_sum = 0.0;
  double min_weight = 0.0;
  for (int d = 1; d <= 5; ++d) {
    for (int i = 0; i < 20000; ++i) {
      Eigen::VectorXd y(d + 1);
      for (int k = 0; k <= d; ++k) y[k] = unif(rng);
      y.array() -= y.mean();
      const SimplexLookup lookup = find_simplex(y);
      worst_sum = std::max(worst_sum, std::abs(lookup.weights.sum() - 1.0));
      min_weight = std::min(min_weight, lookup.weights.minCoeff());
    }
  }

  bool special = true;
  for (int d = 1; d <= 5; ++d) {
    // Vertex: bit-exact unit weight.
    const auto ball = neighbors(LatticeKey::zero(d), 1);
    for (const LatticeKey& key : ball) {
      Eigen::VectorXd y(d + 1);
      for (int i = 0; i <= d; ++i) y[i] = key[i];
      const SimplexLookup lookup = find_simplex(y);
      int unit = 0;
      for (int r = 0; r <= d; ++r) {
        if (lookup.weights[r] == 1.0)
          ++unit;
        else if (lookup.weights[r] != 0.0)
          special = false;
      }
      special = special && unit == 1;
    }
    // Centroid: uniform weights to machine precision.
    Eigen::VectorXd y(d + 1);
    std::mt19937_64 crng(23 + d);
    std::uniform_real_distribution<double> cu(-5.0, 5.0);
    for (int i = 0; i <= d; ++i) y[i] = cu(crng);
    y.array() -= y.mean();
    const SimplexLookup base = find_simplex(y);
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(d + 1);
    for (int r = 0; r <= d; ++r)
      for (int i = 0; i <= d; ++i) centroid[i] += base.corner(r)[i];
    centroid /= (d + 1);
    const SimplexLookup lookup = find_simplex(centroid);
    for (int r = 0; r <= d; ++r)
      special = special && std::abs(lookup.weights[r] - 1.0 / (d + 1)) < 1e-13;
  }

  Outcome out;
  out.pass = worst_sum < 1e-12 && min_weight >= 0.0 && special;
  out.detail = fmt("1e5 points: max |sum-1|=%.2e (limit 1e-12), min weight=%.1e, "
                   "vertex/centroid exact=%s",
                   worst_sum, min_weight, special ? "yes" : "no");
  return out;
}

// 5. Denoising at sigma 25/255: analytic noisy PSNR and the learned >=
// gauss >= noisy ordering.
Outcome criterion_denoise() {
  const auto t0 = Clock::now();
  auto all = synth::scene_set(77, 16, 96, 96, 1);
  std::vector<img::Image> train(all.begin(), all.begin() + 10);
  std::vector<img::Image> test(all.begin() + 10, all.end());
  harness::DenoiseConfig cfg;
  cfg.train.epochs = 40;
  cfg.train.sgd.lr = 1.0;
  cfg.train.seed = 9;
  const harness::DenoiseOutcome res = harness::run_denoise(train, test, cfg);
  const double secs = seconds_since(t0);
  Outcome out;
  const bool analytic = std::abs(res.psnr_noisy - 20.17) <= 0.15;
  const bool order = res.psnr_learned >= res.psnr_gauss &&
                     res.psnr_gauss >= res.psnr_noisy &&
                     res.psnr_learned - res.psnr_gauss >= 0.0;
  out.pass = analytic && order && secs < 600.0;
  out.detail = fmt("noisy=%.2f (20.17+-0.15), gauss=%.2f, learned=%.2f, "
                   "6 test images, %.0fs (limit 600s)",
                   res.psnr_noisy, res.psnr_gauss, res.psnr_learned, secs);
  return out;
}

// 6. 4x upsampling ordering and cross-factor transfer.
Outcome criterion_upsample() {
  const auto t0 = Clock::now();
  auto all = synth::scene_set(55, 16, 96, 96, 3);
  std::vector<img::Image> train(all.begin(), all.begin() + 10);
  std::vector<img::Image> test(all.begin() + 10, all.end());

  auto cfg_for = [](int factor) {
    harness::UpsampleConfig cfg;
    cfg.factor = factor;
    cfg.position_scale = 1.4 / factor;  // desk-scale images
    cfg.intensity_scale = 0.17;
    cfg.train.epochs = 30;
    cfg.train.sgd.lr = 2.0;
    cfg.train.seed = 5;
    return cfg;
  };

  const harness::UpsampleOutcome at4 = harness::run_upsample(train, test, cfg_for(4));
  const harness::UpsampleOutcome at8 = harness::run_upsample(train, test, cfg_for(8));
  const double cross = harness::evaluate_upsample(at4.learned_kernel, test, cfg_for(8));
  const double degradation = at8.psnr_learned - cross;
  const double secs = seconds_since(t0);

  Outcome out;
  const bool order = at4.psnr_learned >= at4.psnr_gauss &&
                     at4.psnr_gauss >= at4.psnr_bicubic;
  out.pass = order && degradation < 0.2 && secs < 900.0;
  out.detail = fmt("4x: bicubic=%.2f gauss=%.2f learned=%.2f; cross-factor "
                   "degradation=%.3f dB (limit 0.2), %.0fs (limit 900s)",
                   at4.psnr_bicubic, at4.psnr_gauss, at4.psnr_learned,
                   degradation, secs);
  return out;
}

// 7. Tiles: BNN reaches 0.95 IoU within 30 epochs and 0.90 in fewer
// epochs than the 9x9 CNN under the same protocol.
Outcome criterion_tiles() {
  const auto t0 = Clock::now();
  nn::TilesConfig cfg;
  cfg.variant = nn::TilesVariant::bnn;
  cfg.train_images = 1000;
  cfg.val_images = 200;
  cfg.test_images = 200;
  cfg.seed = 42;
  cfg.epochs = 30;
  cfg.batch = 20;  // desk-scale batch, identical for both variants
  cfg.stop_at_val_iou = 0.95;
  const nn::TilesResult bnn = nn::train_tiles(cfg);
  const int bnn_95 = bnn.epochs_to(0.95);
  const int bnn_90 = bnn.epochs_to(0.90);

  // The CNN only has to run long enough to decide the epoch comparison.
  cfg.variant = nn::TilesVariant::cnn;
  cfg.epochs = std::min(bnn_90, 30);
  cfg.stop_at_val_iou = 0.90;
  const nn::TilesResult cnn = nn::train_tiles(cfg);
  const int cnn_90 = cnn.epochs_to(0.90);

  const double secs = seconds_since(t0);
  Outcome out;
  out.pass = bnn_95 <= 30 && bnn_90 < cnn_90 && secs < 1200.0;
  out.detail = fmt("BNN IoU>=0.95 at epoch %d (limit 30), 0.90 at epoch %d; "
                   "CNN 0.90 %s within %d epochs; %.0fs (limit 1200s)",
                   bnn_95, bnn_90,
                   cnn_90 <= cfg.epochs ? fmt("at epoch %d", cnn_90).c_str()
                                        : "not reached",
                   cfg.epochs, secs);
  return out;
}

struct CrfSeedResult {
  double unary = 0, gauss = 0, learned = 0, loose = 0;
  bool simplex_ok = true;
};

CrfSeedResult run_crf_seed(std::uint64_t seed) {
  synth::CrfBenchConfig bench;
  bench.images = 40;
  bench.size = 28;
  bench.tile = 11;
  bench.seed = seed;
  const std::vector<crf::CrfImage> all = synth::crf_benchmark(bench);
  const std::vector<crf::CrfImage> train(all.begin(), all.begin() + 20);
  const std::vector<crf::CrfImage> test(all.begin() + 20, all.end());

  std::vector<crf::KernelFeatureSpec> specs(2);
  specs[0].kind = crf::KernelFeatureSpec::Kind::position_color;
  specs[0].position_scale = 0.2;
  specs[0].color_scale = 0.03;
  specs[0].s = 1;
  specs[1].kind = crf::KernelFeatureSpec::Kind::position;
  specs[1].position_scale = 0.4;
  specs[1].s = 1;

  crf::MeanFieldModel gauss = crf::MeanFieldModel::gaussian(2, 1.0, specs, 2);

  auto artifacts = [&](const crf::MeanFieldModel& model,
                       const std::vector<crf::CrfImage>& set) {
    std::vector<crf::CrfArtifacts> arts;
    for (const crf::CrfImage& im : set)
      arts.push_back(crf::build_crf_artifacts(model, im));
    return arts;
  };
  CrfSeedResult res;
  auto accuracy = [&](const crf::MeanFieldModel& model,
                      const std::vector<crf::CrfArtifacts>& arts) {
    double acc = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      Eigen::MatrixXd q = crf::init_marginals(test[i].unary);
      for (int t = 0; t < model.steps; ++t) {
        q = crf::mf_step(model, arts[i], test[i].unary, q, t);
        res.simplex_ok = res.simplex_ok && crf::marginals_on_simplex(q, 1e-9);
      }
      acc += crf::pixel_accuracy(q, test[i].labels);
    }
    return acc / test.size();
  };

  for (const crf::CrfImage& im : test)
    res.unary += crf::pixel_accuracy(crf::init_marginals(im.unary), im.labels);
  res.unary /= test.size();

  const auto gauss_arts = artifacts(gauss, test);
  res.gauss = accuracy(gauss, gauss_arts);

  crf::MeanFieldModel learned = gauss.trainable(false);
  const auto train_arts = artifacts(learned, train);
  const auto test_arts = artifacts(learned, test);
  crf::MfTrainConfig tc;
  tc.sgd.lr = 0.05;
  tc.epochs = 8;
  tc.batch = 8;
  tc.seed = seed;
  crf::mf_train(learned, train, train_arts, tc);
  res.learned = accuracy(learned, test_arts);

  crf::MeanFieldModel loose = learned.trainable(true);
  crf::mf_train(loose, train, train_arts, tc);
  res.loose = accuracy(loose, test_arts);
  return res;
}

// 8. CRF: Gaussian MF beats unaries, learned beats Gaussian, loose beats
// tied (medians over 5 seeds), plus dense-oracle equivalence of one step.
Outcome criterion_crf() {
  const auto t0 = Clock::now();
  std::vector<CrfSeedResult> seeds;
  for (std::uint64_t s = 1; s <= 5; ++s) seeds.push_back(run_crf_seed(s));

  auto median_diff = [&](auto pick_a, auto pick_b) {
    std::vector<double> diffs;
    for (const CrfSeedResult& r : seeds) diffs.push_back(pick_a(r) - pick_b(r));
    std::sort(diffs.begin(), diffs.end());
    return diffs[diffs.size() / 2];
  };
  const double mf_gain = median_diff([](auto& r) { return r.gauss; },
                                     [](auto& r) { return r.unary; });
  const double learn_gain = median_diff([](auto& r) { return r.learned; },
                                        [](auto& r) { return r.gauss; });
  const double loose_gain = median_diff([](auto& r) { return r.loose; },
                                        [](auto& r) { return r.learned; });
  bool simplex_ok = true;
  for (const CrfSeedResult& r : seeds) simplex_ok = simplex_ok && r.simplex_ok;

  // Dense double-sum equivalence of one step for n <= 30.
  std::mt19937_64 rng(31);
  double worst = 0.0;
  for (int trial = 0; trial < 4; ++trial) {
    const int side = 4 + trial % 2;  // 16 or 25 points
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gn(0.0, 1.0);
    crf::CrfImage img;
    img.h = img.w = side;
    const int n = side * side;
    img.rgb.resize(n, 3);
    for (Eigen::Index i = 0; i < img.rgb.size(); ++i) img.rgb.data()[i] = unif(rng);
    Eigen::MatrixXd logits(n, 2);
    for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = gn(rng);
    img.unary = crf::unary_from_logits(logits);

    std::vector<crf::KernelFeatureSpec> specs(1);
    specs[0].kind = crf::KernelFeatureSpec::Kind::position_color;
    specs[0].position_scale = 0.3;
    specs[0].color_scale = 0.02;
    specs[0].s = 1;
    crf::MeanFieldModel model = crf::MeanFieldModel::gaussian(2, 0.8, specs, 1);
    model.normalization = crf::MeanFieldModel::Normalization::none;
    const crf::CrfArtifacts art = crf::build_crf_artifacts(model, img);
    const Eigen::MatrixXd q0 = crf::init_marginals(img.unary);
    const Eigen::MatrixXd got = crf::mf_step(model, art, img.unary, q0, 0);

    const FeatureSet fs = crf::crf_features(img, specs[0]);
    const DenseOracleResult oracle =
        dense_oracle(fs, fs, q0, model.banks[0][0], nullptr, 100000);
    const Eigen::MatrixXd w_dense =
        oracle.slice_matrix * oracle.conv_blocks[0] * oracle.splat_matrix;
    const LatticeIndex idx = build_index(fs);
    Eigen::MatrixXd filtered = w_dense * q0;
    for (int i = 0; i < n; ++i)
      filtered.row(i) -= model.banks[0][0].at(0, 0, 0) *
                         idx.weights.row(i).squaredNorm() * q0.row(i);
    const Eigen::MatrixXd msg = filtered * model.compat;
    Eigen::MatrixXd expected(n, 2);
    for (int i = 0; i < n; ++i) {
      const Eigen::Array2d z = -img.unary.row(i).array() - msg.row(i).array();
      const Eigen::Array2d e = (z - z.maxCoeff()).exp();
      expected.row(i) = (e / e.sum()).matrix();
    }
    worst = std::max(worst, (got - expected).cwiseAbs().maxCoeff());
  }

  const double secs = seconds_since(t0);
  Outcome out;
  out.pass = mf_gain > 0.0 && learn_gain >= 0.0 && loose_gain >= 0.0 &&
             worst < 1e-8 && simplex_ok && secs < 900.0;
  out.detail = fmt("median gains: MF-unary=%.4f (>0), learned-gauss=%.4f (>=0), "
                   "loose-tied=%.4f (>=0); brute-force err=%.2e (limit 1e-8); "
                   "%.0fs (limit 900s)",
                   mf_gain, learn_gain, loose_gain, worst, secs);
  return out;
}

// 9. A 5-D bilateral layer runs on a 64x64 RGB image where a dense 5-D
// convolution is rejected by the memory budget.
Outcome criterion_tractability() {
  std::mt19937_64 rng(3);
  const nn::TileImage img = nn::make_tile_image(rng);
  // The runtime-comparison scaling: all features span [0, 50).
  nn::TilesConfig cfg;
  cfg.position_scale = 50.0 / 64.0;
  cfg.color_scale = 50.0 / 255.0;
  const FeatureSet features =
      nn::tiles_features(img, cfg.position_scale, cfg.color_scale);

  const std::size_t budget = std::size_t{1} << 30;  // 1 GiB
  const harness::DenseConvPlan plan = harness::plan_dense_convolution(features, 1, 3);
  bool rejected = false;
  try {
    harness::require_dense_budget(plan, budget);
  } catch (const std::length_error&) {
    rejected = true;
  }

  nn::ImageContext ctx;
  ctx.lattice = build_lattice_artifacts(features, 1);
  nn::BclLayer layer(5, 1, 3, 32, 77);
  nn::Tensor x{img.rgb, img.h, img.w};
  layer.forward(x, ctx);  // warm up
  const auto t0 = Clock::now();
  const int reps = 5;
  for (int i = 0; i < reps; ++i) layer.forward(x, ctx);
  const double per_filter = seconds_since(t0) / reps;

  const std::size_t lattice_bytes =
      sizeof(double) * ctx.lattice->in.weights.size() +
      sizeof(Index) * (ctx.lattice->in.corners.size() + ctx.lattice->blur.nbr.size());

  Outcome out;
  out.pass = rejected && per_filter < 1.0 && lattice_bytes < budget;
  out.detail = fmt("BCL %.3fs per application (limit 1s), lattice %.1f MiB; "
                   "dense 5-D plan %.1f GiB %s 1 GiB budget",
                   per_filter, lattice_bytes / double(1 << 20),
                   plan.bytes_required / double(1 << 30),
                   rejected ? "rejected by" : "NOT rejected by");
  return out;
}

// 10. Marginals stay on the simplex after every step across random
// configurations.
Outcome criterion_simplex() {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  bool ok = true;
  double worst = 0.0;
  for (int trial = 0; trial < 12 && ok; ++trial) {
    const int side = 5 + trial % 4;
    const int labels = 2 + trial % 3;
    crf::CrfImage img;
    img.h = img.w = side;
    const int n = side * side;
    img.rgb.resize(n, 3);
    for (Eigen::Index i = 0; i < img.rgb.size(); ++i) img.rgb.data()[i] = unif(rng);
    Eigen::MatrixXd logits(n, labels);
    for (Eigen::Index i = 0; i < logits.size(); ++i)
      logits.data()[i] = 3.0 * gauss(rng);
    img.unary = crf::unary_from_logits(logits);

    std::vector<crf::KernelFeatureSpec> specs(2);
    specs[0].kind = crf::KernelFeatureSpec::Kind::position_color;
    specs[0].position_scale = 0.2 + 0.2 * unif(rng);
    specs[0].color_scale = 0.02 + 0.02 * unif(rng);
    specs[0].s = 1 + trial % 2;
    specs[1].kind = crf::KernelFeatureSpec::Kind::position;
    specs[1].position_scale = 0.3;
    specs[1].s = 1;
    crf::MeanFieldModel model =
        crf::MeanFieldModel::gaussian(labels, 0.5 + unif(rng), specs, 3);
    if (trial % 2) {
      model.normalization = crf::MeanFieldModel::Normalization::none;
      for (auto& kernel : model.banks[0])
        for (Eigen::Index i = 0; i < kernel.weights().size(); ++i)
          kernel.weights().data()[i] += 0.15 * gauss(rng);
    }
    const crf::CrfArtifacts art = crf::build_crf_artifacts(model, img);
    Eigen::MatrixXd q = crf::init_marginals(img.unary);
    for (int t = 0; t < model.steps; ++t) {
      q = crf::mf_step(model, art, img.unary, q, t);
      ok = ok && crf::marginals_on_simplex(q, 1e-9);
      for (Eigen::Index i = 0; i < q.rows(); ++i)
        worst = std::max(worst, std::abs(q.row(i).sum() - 1.0));
    }
  }
  Outcome out;
  out.pass = ok;
  out.detail = fmt("12 random configurations, max |row sum - 1| = %.2e (limit 1e-9)",
                   worst);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int number;
    const char* name;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {1, "gradient correctness vs finite differences", criterion_gradients},
      {2, "dense-oracle equivalence", criterion_dense_oracle},
      {3, "lattice neighborhood combinatorics", criterion_combinatorics},
      {4, "barycentric invariants", criterion_barycentric},
      {5, "denoising trend", criterion_denoise},
      {6, "upsampling trend and cross-factor transfer", criterion_upsample},
      {7, "tiles bilateral network", criterion_tiles},
      {8, "dense-CRF mean field", criterion_crf},
      {9, "tractability at d=5", criterion_tractability},
      {10, "marginal simplex invariant", criterion_simplex},
  };

  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::atoi(argv[i]));

  bool all_pass = true;
  for (const Criterion& c : criteria) {
    if (!wanted.empty() &&
        std::find(wanted.begin(), wanted.end(), c.number) == wanted.end())
      continue;
    const Outcome out = c.run();
    std::printf("[%s] criterion %2d: %s — %s\n", out.pass ? "PASS" : "FAIL",
                c.number, c.name, out.detail.c_str());
    std::fflush(stdout);
    all_pass = all_pass && out.pass;
  }
  return all_pass ? 0 : 1;
}
