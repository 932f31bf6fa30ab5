#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "phlat/lattice.hpp"

// The three linear operators of the lattice pipeline: splat distributes
// point values onto simplex corners, convolve mixes populated lattice
// points within an s-hop neighborhood with free weights, slice reads the
// lattice signal back at arbitrary points.
namespace phlat {

// Canonical offset basis shared by kernels and blur matrices:
// neighbors(0, s), i.e. the zero offset first, the rest lexicographic.
class OffsetSet {
 public:
  static std::shared_ptr<const OffsetSet> get(int d, int s);

  int d() const { return d_; }
  int s() const { return s_; }
  int t() const { return t_; }
  std::span<const Index> offset(int o) const {
    return std::span<const Index>(coords_).subspan(
        static_cast<std::size_t>(o) * (d_ + 1), d_ + 1);
  }
  // Index of -offset(o); the neighborhood is closed under negation.
  int negated(int o) const { return negation_[static_cast<std::size_t>(o)]; }
  // Index of an offset key, or -1 if outside the neighborhood.
  int find(std::span<const Index> off) const;

 private:
  OffsetSet(int d, int s);
  int d_, s_, t_;
  std::vector<Index> coords_;  // t x (d+1)
  std::vector<int> negation_;
  std::unique_ptr<LatticeTable> lookup_;
};

// Signal channels living on the m populated lattice points.
struct LatticeSignal {
  Eigen::MatrixXd values;  // m x c

  int m() const { return static_cast<int>(values.rows()); }
  int channels() const { return static_cast<int>(values.cols()); }
};

// Free filter parameters over the s-hop neighborhood, c_out x c_in x t.
// A 1x1 kernel is applied per-channel to signals of any width.
class PermutohedralKernel {
 public:
  PermutohedralKernel() = default;
  PermutohedralKernel(int d, int s, int c_in, int c_out);

  // Identity on each of c channels, scaled by gain.
  static PermutohedralKernel delta(int d, int s, int c = 1, double gain = 1.0);

  int d() const { return d_; }
  int s() const { return s_; }
  int c_in() const { return c_in_; }
  int c_out() const { return c_out_; }
  int t() const { return offsets_ ? offsets_->t() : 0; }
  bool scalar() const { return c_in_ == 1 && c_out_ == 1; }
  const OffsetSet& offsets() const { return *offsets_; }

  double at(int a, int b, int o) const { return w_(a, o * c_in_ + b); }
  double& at(int a, int b, int o) { return w_(a, o * c_in_ + b); }
  // c_out x (t*c_in); column o*c_in + b.
  const Eigen::MatrixXd& weights() const { return w_; }
  Eigen::MatrixXd& weights() { return w_; }

  // Offset-negated, channel-transposed kernel: the adjoint of convolve.
  PermutohedralKernel adjoint() const;

 private:
  int d_ = 0, s_ = 0, c_in_ = 0, c_out_ = 0;
  std::shared_ptr<const OffsetSet> offsets_;
  Eigen::MatrixXd w_;
};

// Fixed Gaussian-approximating weights: exp(-|o|^2 / (2 sigma^2)) with
// sigma = one lattice edge, normalized to sum 1. Applied per channel.
PermutohedralKernel gaussian_kernel(int d, int s);

// Gather table K: row o holds, for every populated point j, the dense index
// of its neighbor at canonical offset o, or kMissing. Row 0 is the identity.
struct BlurMatrix {
  std::shared_ptr<const OffsetSet> offsets;
  int m = 0;
  std::vector<Index> nbr;  // t rows x m columns, row-major

  int t() const { return offsets ? offsets->t() : 0; }
  Index at(int o, Index j) const {
    return nbr[static_cast<std::size_t>(o) * m + j];
  }
};

BlurMatrix build_blur_matrix(const LatticeIndex& index, int s);

struct ConvolveOptions {
  // Gather buffer cap; K is processed in column blocks beyond it.
  std::size_t gather_budget_bytes = std::size_t{256} << 20;
};

LatticeSignal splat(const LatticeIndex& index, const Eigen::MatrixXd& signal);

LatticeSignal convolve(const BlurMatrix& blur, const LatticeSignal& input,
                       const PermutohedralKernel& kernel,
                       const ConvolveOptions& opts = {});
// Convenience overload that builds the blur matrix on the fly.
LatticeSignal convolve(const LatticeIndex& index, const LatticeSignal& input,
                       const PermutohedralKernel& kernel,
                       const ConvolveOptions& opts = {});

// v'_i = sum_j b_{i,j} l'_j. Corners absent from the table contribute zero;
// such misses are counted into *key_misses when provided.
Eigen::MatrixXd slice(const LatticeIndex& index, const LatticeSignal& input,
                      std::int64_t* key_misses = nullptr);

struct BilateralOptions {
  bool normalize = true;  // divide by the pipeline response to all-ones
  ConvolveOptions convolve;
};

// splat -> convolve -> slice over one lattice spanning the union of input
// and output corners. Input and output point sets may differ.
Eigen::MatrixXd bilateral_filter(const FeatureSet& features_in,
                                 const FeatureSet& features_out,
                                 const Eigen::MatrixXd& signal,
                                 const PermutohedralKernel& kernel,
                                 const BilateralOptions& opts = {});

}  // namespace phlat
