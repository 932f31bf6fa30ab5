#pragma once

#include <cstdint>
#include <vector>

#include "phlat/autograd.hpp"
#include "phlat/image.hpp"
#include "phlat/nn.hpp"

// Experiment drivers shared by the CLI and the acceptance suite: denoising
// with a single learned bilateral filter, joint bilateral upsampling, and
// the memory-budget guard that stands in for an explicit dense
// high-dimensional convolution.
namespace phlat::harness {

// One training example for single-filter regression: a fixed lattice
// embedding, the signal to filter and the regression target.
struct FilterInstance {
  std::shared_ptr<const LatticeArtifacts> lattice;
  Eigen::MatrixXd signal;
  Eigen::MatrixXd target;
};

struct FilterTrainConfig {
  nn::SgdConfig sgd;
  int epochs = 30;
  int batch = 4;
  std::uint64_t seed = 0;
  NormalizeMode normalize = NormalizeMode::full;
};

struct FilterTrainResult {
  PermutohedralKernel kernel;      // best kernel by exact training loss
  std::vector<double> epoch_loss;  // exact mean squared error after each epoch
};

// SGD with epoch-level model selection: the exact training loss is
// evaluated after every epoch, the best kernel is kept, and a diverging
// epoch restores the best state at half the learning rate. Normalized
// filters can blow up when learned side lobes drive the ones-response
// toward zero; backtracking keeps training in the stable basin.
FilterTrainResult train_filter_mse(const std::vector<FilterInstance>& data,
                                   const PermutohedralKernel& init,
                                   const FilterTrainConfig& cfg);

// ---- denoising -------------------------------------------------------------

struct DenoiseConfig {
  double sigma = 25.0 / 255.0;
  double position_scale = 0.25;
  double intensity_scale = 0.02;  // intensities live on a 0..255 range
  int s = 2;                      // 65-weight filter in (x, y, v)
  int spatial_kernel = 5;
  FilterTrainConfig train;
};

struct DenoiseOutcome {
  double psnr_noisy = 0.0;
  double psnr_spatial = 0.0;
  double psnr_gauss = 0.0;
  double psnr_learned = 0.0;
  PermutohedralKernel learned_kernel;
  Eigen::MatrixXd spatial_weights;  // 1 x k^2, least-squares fit
};

FeatureSet denoise_features(const img::Image& noisy_gray, double position_scale,
                            double intensity_scale);

img::Image denoise_image(const img::Image& noisy_gray,
                         const PermutohedralKernel& kernel,
                         double position_scale, double intensity_scale);

// Trains on noisy/clean pairs derived from `train`, reports mean test PSNR
// for every method.
DenoiseOutcome run_denoise(const std::vector<img::Image>& train,
                           const std::vector<img::Image>& test,
                           const DenoiseConfig& cfg);

// ---- joint bilateral upsampling --------------------------------------------

// Cross-validated defaults: 2x 0.13, 4x 0.06, 8x 0.03, 16x 0.02.
double default_position_scale(int factor);

struct UpsampleConfig {
  int factor = 4;
  double position_scale = 0.06;
  double intensity_scale = 0.17;  // guide intensity on a 0..255 range
  int s = 2;
  FilterTrainConfig train;
};

// Low-resolution color splatted at its own (position, intensity) features,
// sliced at the guide's full-resolution features.
std::shared_ptr<const LatticeArtifacts> upsample_lattice(
    const img::Image& low, const img::Image& guide_gray, int factor,
    double position_scale, double intensity_scale, int s);

img::Image joint_upsample(const img::Image& low, const img::Image& guide,
                          const PermutohedralKernel& kernel,
                          const UpsampleConfig& cfg);

struct UpsampleOutcome {
  double psnr_bicubic = 0.0;
  double psnr_gauss = 0.0;
  double psnr_learned = 0.0;
  PermutohedralKernel learned_kernel;
};

UpsampleOutcome run_upsample(const std::vector<img::Image>& train,
                             const std::vector<img::Image>& test,
                             const UpsampleConfig& cfg);

// Mean test PSNR of one kernel at one factor (used for cross-factor runs).
double evaluate_upsample(const PermutohedralKernel& kernel,
                         const std::vector<img::Image>& test,
                         const UpsampleConfig& cfg);

// ---- dense-convolution memory guard ----------------------------------------

struct DenseConvPlan {
  std::vector<std::int64_t> grid_dims;  // unit cells per scaled dimension
  std::size_t bytes_required = 0;
};

// Memory an explicit dense convolution over the scaled feature volume
// would take: input + output grids at unit resolution plus the stencil.
DenseConvPlan plan_dense_convolution(const FeatureSet& features, int s,
                                     int channels);

// Throws std::length_error when the plan exceeds the budget.
void require_dense_budget(const DenseConvPlan& plan, std::size_t budget_bytes);

}  // namespace phlat::harness
