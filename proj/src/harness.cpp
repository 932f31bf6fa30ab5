#include "phlat/harness.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "phlat/metrics.hpp"

namespace phlat::harness {

FilterTrainResult train_filter_mse(const std::vector<FilterInstance>& data,
                                   const PermutohedralKernel& init,
                                   const FilterTrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("train_filter_mse: no data");

  auto evaluate = [&](const PermutohedralKernel& kernel) {
    double total = 0.0;
    for (const FilterInstance& inst : data) {
      BilateralPipeline pipe(inst.lattice);
      const Eigen::MatrixXd out = pipe.forward(inst.signal, kernel, cfg.normalize);
      total += (out - inst.target).squaredNorm() / double(out.size());
    }
    return total / double(data.size());
  };

  PermutohedralKernel current = init;
  PermutohedralKernel best = init;
  double best_loss = evaluate(init);
  double lr = cfg.sgd.lr;

  PermutohedralKernel grad(init.d(), init.s(), init.c_in(), init.c_out());
  std::vector<int> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::mt19937_64 rng(cfg.seed ^ 0xf117e5);

  FilterTrainResult result;
  nn::SgdConfig sgd_cfg = cfg.sgd;
  auto make_opt = [&] {
    sgd_cfg.lr = lr;
    return nn::Sgd({{current.weights().data(), grad.weights().data(),
                     current.weights().size()}},
                   sgd_cfg);
  };
  nn::Sgd opt = make_opt();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
      const int batch =
          static_cast<int>(std::min<std::size_t>(cfg.batch, order.size() - b0));
      grad.weights().setZero();
      for (int k = 0; k < batch; ++k) {
        const FilterInstance& inst = data[order[b0 + k]];
        BilateralPipeline pipe(inst.lattice);
        const PipelineResult res =
            pipe.forward_with_tape(inst.signal, current, cfg.normalize);
        const Eigen::MatrixXd g =
            2.0 * (res.output - inst.target) / double(res.output.size());
        grad.weights() += backward_kernel(res.tape, g).weights();
      }
      opt.step(1.0 / batch);
    }

    const double loss = evaluate(current);
    result.epoch_loss.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      best = current;
    } else if (!(loss < 2.0 * best_loss)) {
      current = best;
      lr *= 0.5;
      opt = make_opt();
    }
  }
  result.kernel = best;
  return result;
}

// ---- denoising -------------------------------------------------------------

FeatureSet denoise_features(const img::Image& noisy_gray, double position_scale,
                            double intensity_scale) {
  if (noisy_gray.channels() != 1)
    throw std::invalid_argument("denoise_features: expected grayscale");
  FeatureSet fs;
  fs.points.resize(noisy_gray.count(), 3);
  for (int y = 0; y < noisy_gray.h; ++y)
    for (int x = 0; x < noisy_gray.w; ++x) {
      const int p = y * noisy_gray.w + x;
      fs.points(p, 0) = x;
      fs.points(p, 1) = y;
      fs.points(p, 2) = 255.0 * noisy_gray.pixels(p, 0);
    }
  fs.scales.resize(3);
  fs.scales << position_scale, position_scale, intensity_scale;
  return fs;
}

img::Image denoise_image(const img::Image& noisy_gray,
                         const PermutohedralKernel& kernel,
                         double position_scale, double intensity_scale) {
  const FeatureSet fs =
      denoise_features(noisy_gray, position_scale, intensity_scale);
  img::Image out = noisy_gray;
  out.pixels = bilateral_filter(fs, fs, noisy_gray.pixels, kernel);
  return out;
}

namespace {

// 5x5 linear predictor of the clean center pixel, fitted by least squares
// over every training pixel.
Eigen::MatrixXd fit_spatial_filter(const std::vector<img::Image>& noisy,
                                   const std::vector<img::Image>& clean, int k) {
  const int taps = k * k;
  Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(taps, taps);
  Eigen::VectorXd atb = Eigen::VectorXd::Zero(taps);
  const int half = k / 2;
  Eigen::VectorXd patch(taps);
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    const img::Image& im = noisy[i];
    for (int y = 0; y < im.h; ++y)
      for (int x = 0; x < im.w; ++x) {
        for (int dy = -half; dy <= half; ++dy)
          for (int dx = -half; dx <= half; ++dx) {
            const int sx = std::clamp(x + dx, 0, im.w - 1);
            const int sy = std::clamp(y + dy, 0, im.h - 1);
            patch[(dy + half) * k + (dx + half)] = im.at(sx, sy, 0);
          }
        ata.selfadjointView<Eigen::Lower>().rankUpdate(patch);
        atb += clean[i].at(x, y, 0) * patch;
      }
  }
  ata = ata.selfadjointView<Eigen::Lower>();
  const Eigen::VectorXd w = ata.ldlt().solve(atb);
  return w.transpose();
}

img::Image make_noisy(const img::Image& clean, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  img::Image out = clean;
  for (Eigen::Index i = 0; i < out.pixels.size(); ++i)
    out.pixels.data()[i] += noise(rng);
  return out;
}

img::Image apply_spatial_filter(const img::Image& noisy,
                                const Eigen::MatrixXd& weights, int k) {
  const int half = k / 2;
  img::Image out = noisy;
  for (int y = 0; y < noisy.h; ++y)
    for (int x = 0; x < noisy.w; ++x) {
      double acc = 0.0;
      for (int dy = -half; dy <= half; ++dy)
        for (int dx = -half; dx <= half; ++dx) {
          const int sx = std::clamp(x + dx, 0, noisy.w - 1);
          const int sy = std::clamp(y + dy, 0, noisy.h - 1);
          acc += weights(0, (dy + half) * k + (dx + half)) * noisy.at(sx, sy, 0);
        }
      out.at(x, y, 0) = acc;
    }
  return out;
}

}  // namespace

DenoiseOutcome run_denoise(const std::vector<img::Image>& train,
                           const std::vector<img::Image>& test,
                           const DenoiseConfig& cfg) {
  auto grayify = [](const std::vector<img::Image>& set) {
    std::vector<img::Image> gray;
    gray.reserve(set.size());
    for (const img::Image& im : set) gray.push_back(img::to_gray(im));
    return gray;
  };
  const std::vector<img::Image> train_clean = grayify(train);
  const std::vector<img::Image> test_clean = grayify(test);

  std::vector<img::Image> train_noisy, test_noisy;
  for (std::size_t i = 0; i < train_clean.size(); ++i)
    train_noisy.push_back(
        make_noisy(train_clean[i], cfg.sigma, cfg.train.seed + 101 + i));
  for (std::size_t i = 0; i < test_clean.size(); ++i)
    test_noisy.push_back(
        make_noisy(test_clean[i], cfg.sigma, cfg.train.seed + 901 + i));

  DenoiseOutcome out;

  std::vector<FilterInstance> data;
  for (std::size_t i = 0; i < train_clean.size(); ++i) {
    FilterInstance inst;
    inst.lattice = build_lattice_artifacts(
        denoise_features(train_noisy[i], cfg.position_scale, cfg.intensity_scale),
        cfg.s);
    inst.signal = train_noisy[i].pixels;
    inst.target = train_clean[i].pixels;
    data.push_back(std::move(inst));
  }

  const PermutohedralKernel gauss = gaussian_kernel(3, cfg.s);
  const FilterTrainResult trained = train_filter_mse(data, gauss, cfg.train);
  out.learned_kernel = trained.kernel;
  out.spatial_weights =
      fit_spatial_filter(train_noisy, train_clean, cfg.spatial_kernel);

  double p_noisy = 0, p_spatial = 0, p_gauss = 0, p_learned = 0;
  for (std::size_t i = 0; i < test_clean.size(); ++i) {
    const Eigen::MatrixXd& clean = test_clean[i].pixels;
    p_noisy += metrics::psnr(test_noisy[i].pixels, clean);
    p_spatial += metrics::psnr(
        apply_spatial_filter(test_noisy[i], out.spatial_weights, cfg.spatial_kernel)
            .pixels,
        clean);
    p_gauss += metrics::psnr(
        denoise_image(test_noisy[i], gauss, cfg.position_scale, cfg.intensity_scale)
            .pixels,
        clean);
    p_learned += metrics::psnr(
        denoise_image(test_noisy[i], out.learned_kernel, cfg.position_scale,
                      cfg.intensity_scale)
            .pixels,
        clean);
  }
  const double inv = 1.0 / double(test_clean.size());
  out.psnr_noisy = p_noisy * inv;
  out.psnr_spatial = p_spatial * inv;
  out.psnr_gauss = p_gauss * inv;
  out.psnr_learned = p_learned * inv;
  return out;
}

// ---- joint bilateral upsampling --------------------------------------------

double default_position_scale(int factor) {
  switch (factor) {
    case 2: return 0.13;
    case 4: return 0.06;
    case 8: return 0.03;
    case 16: return 0.02;
    default: return 0.24 / factor;
  }
}

namespace {

FeatureSet upsample_input_features(const img::Image& low, int factor,
                                   double position_scale, double intensity_scale) {
  const img::Image low_gray = img::to_gray(low);
  FeatureSet fs;
  fs.points.resize(low.count(), 3);
  const double offset = (factor - 1) / 2.0;
  for (int y = 0; y < low.h; ++y)
    for (int x = 0; x < low.w; ++x) {
      const int p = y * low.w + x;
      fs.points(p, 0) = x * factor + offset;
      fs.points(p, 1) = y * factor + offset;
      fs.points(p, 2) = 255.0 * low_gray.pixels(p, 0);
    }
  fs.scales.resize(3);
  fs.scales << position_scale, position_scale, intensity_scale;
  return fs;
}

FeatureSet upsample_output_features(const img::Image& guide_gray,
                                    double position_scale, double intensity_scale) {
  FeatureSet fs;
  fs.points.resize(guide_gray.count(), 3);
  for (int y = 0; y < guide_gray.h; ++y)
    for (int x = 0; x < guide_gray.w; ++x) {
      const int p = y * guide_gray.w + x;
      fs.points(p, 0) = x;
      fs.points(p, 1) = y;
      fs.points(p, 2) = 255.0 * guide_gray.pixels(p, 0);
    }
  fs.scales.resize(3);
  fs.scales << position_scale, position_scale, intensity_scale;
  return fs;
}

}  // namespace

std::shared_ptr<const LatticeArtifacts> upsample_lattice(
    const img::Image& low, const img::Image& guide_gray, int factor,
    double position_scale, double intensity_scale, int s) {
  return build_lattice_artifacts(
      upsample_input_features(low, factor, position_scale, intensity_scale),
      upsample_output_features(guide_gray, position_scale, intensity_scale), s);
}

img::Image joint_upsample(const img::Image& low, const img::Image& guide,
                          const PermutohedralKernel& kernel,
                          const UpsampleConfig& cfg) {
  const img::Image guide_gray = img::to_gray(guide);
  auto lattice = upsample_lattice(low, guide_gray, cfg.factor,
                                  cfg.position_scale, cfg.intensity_scale, cfg.s);
  BilateralPipeline pipe(lattice);
  img::Image out = img::make_image(guide.w, guide.h, low.channels());
  out.pixels =
      pipe.forward(low.pixels, kernel, NormalizeMode::constant_divisor);
  return out;
}

double evaluate_upsample(const PermutohedralKernel& kernel,
                         const std::vector<img::Image>& test,
                         const UpsampleConfig& cfg) {
  double total = 0.0;
  for (const img::Image& full : test) {
    const img::Image low = img::box_downsample(full, cfg.factor);
    const img::Image up = joint_upsample(low, full, kernel, cfg);
    total += metrics::psnr(up.pixels, full.pixels);
  }
  return total / double(test.size());
}

UpsampleOutcome run_upsample(const std::vector<img::Image>& train,
                             const std::vector<img::Image>& test,
                             const UpsampleConfig& cfg) {
  UpsampleOutcome out;

  std::vector<FilterInstance> data;
  for (const img::Image& full : train) {
    const img::Image low = img::box_downsample(full, cfg.factor);
    FilterInstance inst;
    inst.lattice = upsample_lattice(low, img::to_gray(full), cfg.factor,
                                    cfg.position_scale, cfg.intensity_scale, cfg.s);
    inst.signal = low.pixels;
    inst.target = full.pixels;
    data.push_back(std::move(inst));
  }

  const PermutohedralKernel gauss = gaussian_kernel(3, cfg.s);
  const FilterTrainResult trained = train_filter_mse(data, gauss, cfg.train);
  out.learned_kernel = trained.kernel;

  double p_bicubic = 0.0;
  for (const img::Image& full : test) {
    const img::Image low = img::box_downsample(full, cfg.factor);
    p_bicubic +=
        metrics::psnr(img::bicubic_upsample(low, cfg.factor).pixels, full.pixels);
  }
  out.psnr_bicubic = p_bicubic / double(test.size());
  out.psnr_gauss = evaluate_upsample(gauss, test, cfg);
  out.psnr_learned = evaluate_upsample(out.learned_kernel, test, cfg);
  return out;
}

// ---- dense-convolution memory guard ----------------------------------------

DenseConvPlan plan_dense_convolution(const FeatureSet& features, int s,
                                     int channels) {
  features.validate();
  DenseConvPlan plan;
  const int d = features.dim();
  double cells = 1.0;
  for (int k = 0; k < d; ++k) {
    const double lo = features.points.col(k).minCoeff() * features.scales[k];
    const double hi = features.points.col(k).maxCoeff() * features.scales[k];
    const std::int64_t extent =
        static_cast<std::int64_t>(std::ceil(hi - lo)) + 1 + 2 * s;
    plan.grid_dims.push_back(extent);
    cells *= double(extent);
  }
  double stencil = std::pow(double(2 * s + 1), d) * 8.0 * channels * channels;
  const double bytes = cells * 8.0 * channels * 2.0 + stencil;
  plan.bytes_required =
      bytes > 1e18 ? ~std::size_t{0} : static_cast<std::size_t>(bytes);
  return plan;
}

void require_dense_budget(const DenseConvPlan& plan, std::size_t budget_bytes) {
  if (plan.bytes_required > budget_bytes)
    throw std::length_error(
        "dense convolution rejected: needs " +
        std::to_string(plan.bytes_required) + " bytes, budget " +
        std::to_string(budget_bytes));
}

}  // namespace phlat::harness
