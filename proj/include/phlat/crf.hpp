#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <vector>

#include "phlat/autograd.hpp"
#include "phlat/nn.hpp"

// Dense CRF with mean-field inference whose pairwise terms are lattice
// filters: q'_i proportional to exp(-unary_i(x) - sum_{j != i} mu(x, x_j)
// k(f_i, f_j) q_j(x_j)). Kernels are the fixed Gaussian baseline or learned
// by unrolling the update steps.
namespace phlat::crf {

// mu(a, b) = 0 on agreement, `weight` otherwise.
Eigen::MatrixXd potts(int labels, double weight);

// How one pairwise kernel sees the image.
struct KernelFeatureSpec {
  enum class Kind { position, position_color };
  Kind kind = Kind::position_color;
  double position_scale = 0.1;
  double color_scale = 0.2;  // applied to colors on a 0..255 range
  int s = 1;

  int dim() const { return kind == Kind::position ? 2 : 5; }
};

struct MeanFieldModel {
  int labels = 2;
  Eigen::MatrixXd compat;  // L x L, symmetric
  std::vector<KernelFeatureSpec> kernel_specs;
  // banks[step][k]. One bank = tied kernels; `loose` selects bank by step.
  std::vector<std::vector<PermutohedralKernel>> banks;
  int steps = 2;
  bool loose = false;
  enum class Normalization { none, symmetric };
  Normalization normalization = Normalization::none;

  const PermutohedralKernel& kernel(int step, int k) const {
    return banks[loose ? step : 0][k];
  }
  int bank_count() const { return loose ? steps : 1; }

  // Gaussian-baseline model, symmetric normalization.
  static MeanFieldModel gaussian(int labels, double potts_weight,
                                 std::vector<KernelFeatureSpec> specs,
                                 int steps);
  // Same kernels but trainable: unnormalized filtering, one bank (tied)
  // or one bank per step (loose).
  MeanFieldModel trainable(bool loose_banks) const;
};

struct CrfImage {
  Eigen::MatrixXd rgb;  // n x 3 in [0, 1]
  int h = 0, w = 0;
  Eigen::MatrixXd unary;   // n x L negative log-probabilities
  Eigen::VectorXi labels;  // ground truth; may be empty
};

// Negative log-probabilities from raw logits.
Eigen::MatrixXd unary_from_logits(const Eigen::MatrixXd& logits);

FeatureSet crf_features(const CrfImage& img, const KernelFeatureSpec& spec);

// Immutable per-image filtering state, reusable across steps and epochs.
struct KernelArtifacts {
  std::shared_ptr<const LatticeArtifacts> lattice;
  Eigen::VectorXd self_geometry;  // sum_r b_{i,r}^2
  Eigen::VectorXd sym_scale;      // 1/sqrt(raw ones-response); empty if unused
};
struct CrfArtifacts {
  std::vector<KernelArtifacts> kernels;
};
CrfArtifacts build_crf_artifacts(const MeanFieldModel& model, const CrfImage& img);

Eigen::MatrixXd init_marginals(const Eigen::MatrixXd& unary);

bool marginals_on_simplex(const Eigen::MatrixXd& q, double tol = 1e-9);

// One mean-field update. The message removes each point's own
// contribution: the kernel's central weight times its splat-slice factor.
Eigen::MatrixXd mf_step(const MeanFieldModel& model, const CrfArtifacts& art,
                        const Eigen::MatrixXd& unary, const Eigen::MatrixXd& q,
                        int step);

// `steps` < 0 runs the model's configured count. init defaults to
// softmax(-unary).
Eigen::MatrixXd mf_inference(const MeanFieldModel& model, const CrfArtifacts& art,
                             const Eigen::MatrixXd& unary, int steps = -1,
                             const Eigen::MatrixXd* init = nullptr);

struct MfTrainConfig {
  nn::SgdConfig sgd;
  int epochs = 10;
  int batch = 10;
  std::uint64_t seed = 0;
};

struct MfTrainResult {
  std::vector<double> epoch_loss;
};

// Multinomial logistic loss of the unrolled inference on one image;
// accumulates kernel-bank gradients when `bank_grads` is given. The
// gradient buffers must mirror model.banks.
double mf_loss(const MeanFieldModel& model, const CrfImage& img,
               const CrfArtifacts& art,
               std::vector<std::vector<PermutohedralKernel>>* bank_grads);

// Unrolls the configured steps, multinomial logistic loss on the final
// marginals, SGD on the kernel banks. Requires Normalization::none.
MfTrainResult mf_train(MeanFieldModel& model, const std::vector<CrfImage>& images,
                       const std::vector<CrfArtifacts>& artifacts,
                       const MfTrainConfig& cfg);

double pixel_accuracy(const Eigen::MatrixXd& q, const Eigen::VectorXi& labels);

}  // namespace phlat::crf
