#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <memory>

#include "phlat/filterops.hpp"

// Reverse-mode gradients of the splat->convolve->slice pipeline with
// respect to the input signal and the kernel weights, plus independent
// verification oracles (finite differences and explicit dense matrices).
namespace phlat {

enum class NormalizeMode {
  off,
  // Divide by the all-ones response; the divisor is treated as a constant
  // during backward. Biased for kernel gradients: the divisor co-varies
  // with the response, so use `full` when the kernel is being trained.
  constant_divisor,
  // Divide by the all-ones response with exact quotient-rule gradients.
  full,
};

// Lattice embedding shared by every forward/backward pass over one point
// configuration. Immutable once built.
struct LatticeArtifacts {
  LatticeIndex in;
  LatticeIndex out;
  BlurMatrix blur;
  // Splatted all-ones mass per lattice point; the occupancy divisor used
  // by density-normalized layers.
  Eigen::VectorXd splat_density;
};

// Retained forward state; immutable after the forward pass.
struct PipelineTape {
  std::shared_ptr<const LatticeArtifacts> lattice;
  PermutohedralKernel kernel;
  LatticeSignal splatted;  // S_splat v
  Eigen::MatrixXd divisor; // empty when normalization is off
  // Kept only in full mode, for the quotient-rule kernel gradient.
  LatticeSignal splatted_ones;
  Eigen::MatrixXd normalized_output;
  ConvolveOptions convolve_opts;
};

struct PipelineResult {
  Eigen::MatrixXd output;
  PipelineTape tape;
};

// Builds the lattice once for a fixed (input, output, s) configuration and
// runs any number of filters through it.
class BilateralPipeline {
 public:
  BilateralPipeline(const FeatureSet& features_in, const FeatureSet& features_out,
                    int s, ConvolveOptions opts = {});
  // Shared input/output points.
  BilateralPipeline(const FeatureSet& features, int s, ConvolveOptions opts = {});
  explicit BilateralPipeline(std::shared_ptr<const LatticeArtifacts> lattice,
                             ConvolveOptions opts = {});

  const LatticeArtifacts& lattice() const { return *lattice_; }
  std::shared_ptr<const LatticeArtifacts> lattice_ptr() const { return lattice_; }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& signal,
                          const PermutohedralKernel& kernel,
                          NormalizeMode mode = NormalizeMode::off) const;
  PipelineResult forward_with_tape(const Eigen::MatrixXd& signal,
                                   const PermutohedralKernel& kernel,
                                   NormalizeMode mode = NormalizeMode::off) const;

 private:
  std::shared_ptr<const LatticeArtifacts> lattice_;
  ConvolveOptions opts_;
};

std::shared_ptr<const LatticeArtifacts> build_lattice_artifacts(
    const FeatureSet& features_in, const FeatureSet& features_out, int s);
std::shared_ptr<const LatticeArtifacts> build_lattice_artifacts(
    const FeatureSet& features, int s);

// dL/dv = S_splat' B' S_slice' dL/dv'.
Eigen::MatrixXd backward_signal(const PipelineTape& tape,
                                const Eigen::MatrixXd& grad_out);

// dL/dB_{a,b,o} = sum_j (S_slice' dL/dv')_{j,a} (S_splat v)_{nbr(j,o),b}.
// Returned in kernel shape.
PermutohedralKernel backward_kernel(const PipelineTape& tape,
                                    const Eigen::MatrixXd& grad_out);

// ---- verification oracles -------------------------------------------------

struct GradCheckSpec {
  std::uint64_t seed = 0;
  int d = 2;
  int s = 1;
  int n = 10;         // input points; also output points when shared_points
  int n_out = 10;
  int c_in = 2;
  int c_out = 2;
  bool shared_points = true;
  bool scalar_kernel = false;  // one shared filter across channels
  NormalizeMode normalize = NormalizeMode::off;
  double fd_step = 1e-5;
};

struct GradCheckReport {
  double max_rel_err_signal = 0.0;
  double max_rel_err_kernel = 0.0;
  int params_checked = 0;
  double tolerance = 0.0;
  bool passed = false;

  double max_rel_err() const {
    return std::max(max_rel_err_signal, max_rel_err_kernel);
  }
};

// Central finite differences of a quadratic loss against the analytic
// backward pass, one parameter at a time.
GradCheckReport grad_check(const GradCheckSpec& spec, double tolerance);

// Finite-difference gradients of L(v') = 0.5 |v' - target|^2 for an
// arbitrary pipeline; used by grad_check and by tests.
struct FiniteDiffGrads {
  Eigen::MatrixXd signal;
  PermutohedralKernel kernel;
};
FiniteDiffGrads finite_diff_grads(const BilateralPipeline& pipe,
                                  const Eigen::MatrixXd& signal,
                                  const PermutohedralKernel& kernel,
                                  const Eigen::MatrixXd& target,
                                  double step = 1e-5,
                                  NormalizeMode mode = NormalizeMode::off);

// |a - f| / max(eps, |a|, |f|) reduced over all entries.
double max_relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                          double eps = 1e-12);

// Explicit dense assembly of S_splat, the convolution blocks and S_slice;
// forward and both gradients come from matrix algebra alone.
struct DenseOracleResult {
  Eigen::MatrixXd forward;       // n_out x c_out
  Eigen::MatrixXd grad_signal;   // n_in x c_in (zero-sized without grad_out)
  PermutohedralKernel grad_kernel;
  Eigen::MatrixXd splat_matrix;  // m x n_in
  Eigen::MatrixXd slice_matrix;  // n_out x m
  // Block (a, b) at index a*c_in + b; m x m each.
  std::vector<Eigen::MatrixXd> conv_blocks;
};

DenseOracleResult dense_oracle(const FeatureSet& features_in,
                               const FeatureSet& features_out,
                               const Eigen::MatrixXd& signal,
                               const PermutohedralKernel& kernel,
                               const Eigen::MatrixXd* grad_out = nullptr,
                               std::int64_t max_entries_per_matrix = 10000);

}  // namespace phlat
