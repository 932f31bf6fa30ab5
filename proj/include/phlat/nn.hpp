#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <vector>

#include "phlat/autograd.hpp"

// A minimal trainable layer graph: bilateral convolution layers, small
// spatial convolutions, ReLU, the two losses, and SGD with momentum and
// weight decay. Enough to train the tiles networks and learned filters.
namespace phlat::nn {

// Image-shaped activations: h*w pixel rows, one column per channel.
struct Tensor {
  Eigen::MatrixXd v;
  int h = 0;
  int w = 0;

  int pixels() const { return h * w; }
  int channels() const { return static_cast<int>(v.cols()); }
};

struct ParamRef {
  double* value = nullptr;
  double* grad = nullptr;
  std::int64_t size = 0;
};

// Per-image lattice context; all BCLs of a net share one embedding.
struct ImageContext {
  std::shared_ptr<const LatticeArtifacts> lattice;
};

class Layer {
 public:
  virtual ~Layer() = default;
  // forward caches whatever backward needs; call them strictly in pairs.
  virtual Tensor forward(const Tensor& x, const ImageContext& ctx) = 0;
  // Accumulates parameter gradients and returns the input gradient.
  virtual Tensor backward(const Tensor& grad, const ImageContext& ctx) = 0;
  virtual std::vector<ParamRef> params() { return {}; }
  virtual std::int64_t param_count() const { return 0; }
};

// Inside layer stacks the splat is density-normalized: lattice values are
// divided by the splatted all-ones mass, a kernel-independent constant
// with exact gradients. Without it activations and gradients scale with
// the lattice occupancy and compound across layers.
class BclLayer : public Layer {
 public:
  BclLayer(int d, int s, int c_in, int c_out, std::uint64_t seed,
           bool normalize_splat = true);

  Tensor forward(const Tensor& x, const ImageContext& ctx) override;
  Tensor backward(const Tensor& grad, const ImageContext& ctx) override;
  std::vector<ParamRef> params() override;
  std::int64_t param_count() const override {
    return kernel_.weights().size() + bias_.size();
  }
  std::int64_t weight_count() const { return kernel_.weights().size(); }

  PermutohedralKernel& kernel() { return kernel_; }
  const PermutohedralKernel& kernel_grad() const { return grad_; }
  Eigen::VectorXd& bias() { return bias_; }

 private:
  PermutohedralKernel kernel_;
  PermutohedralKernel grad_;
  Eigen::VectorXd bias_;
  Eigen::VectorXd bias_grad_;
  bool normalize_splat_;
  PipelineTape tape_;
  int in_h_ = 0, in_w_ = 0;
};

// Odd kernel, stride 1, zero padding that preserves the image size.
class SpatialConvLayer : public Layer {
 public:
  SpatialConvLayer(int k, int c_in, int c_out, std::uint64_t seed);

  Tensor forward(const Tensor& x, const ImageContext& ctx) override;
  Tensor backward(const Tensor& grad, const ImageContext& ctx) override;
  std::vector<ParamRef> params() override;
  std::int64_t param_count() const override {
    return weights_.size() + bias_.size();
  }
  std::int64_t weight_count() const { return weights_.size(); }

  Eigen::MatrixXd& weights() { return weights_; }

 private:
  // Convolution runs as one shifted GEMM per tap over zero-padded
  // canvases; border reads hit zeros and border writes are discarded.
  Eigen::MatrixXd pad(const Eigen::MatrixXd& interior, int h, int w) const;
  Eigen::MatrixXd unpad(const Eigen::MatrixXd& padded, int h, int w) const;

  int k_, c_in_, c_out_;
  Eigen::MatrixXd weights_;  // c_out x (c_in * k * k)
  Eigen::MatrixXd grad_;
  Eigen::VectorXd bias_;
  Eigen::VectorXd bias_grad_;
  Eigen::MatrixXd padded_input_;  // cached for the weight gradient
  int in_h_ = 0, in_w_ = 0;
};

class ReluLayer : public Layer {
 public:
  Tensor forward(const Tensor& x, const ImageContext& ctx) override;
  Tensor backward(const Tensor& grad, const ImageContext& ctx) override;

 private:
  Eigen::MatrixXd mask_;
};

class Sequential {
 public:
  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  Tensor forward(const Tensor& x, const ImageContext& ctx);
  Tensor backward(const Tensor& grad, const ImageContext& ctx);
  std::vector<ParamRef> params();
  std::int64_t param_count() const;
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Mean over pixels of -log softmax(logits)[label].
class SoftmaxLogLoss {
 public:
  double forward(const Tensor& logits, const Eigen::VectorXi& labels);
  Tensor backward() const;
  const Eigen::MatrixXd& probabilities() const { return probs_; }

 private:
  Eigen::MatrixXd probs_;
  Eigen::VectorXi labels_;
  int h_ = 0, w_ = 0;
};

// Mean over all elements of (x - target)^2.
class MseLoss {
 public:
  double forward(const Tensor& x, const Eigen::MatrixXd& target);
  Tensor backward() const;

 private:
  Eigen::MatrixXd diff_;
  int h_ = 0, w_ = 0;
};

struct SgdConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
};

// v <- momentum * v - lr * (g + weight_decay * p); p <- p + v.
class Sgd {
 public:
  Sgd(std::vector<ParamRef> params, SgdConfig config);
  void step(double grad_scale = 1.0);
  void zero_grads();

 private:
  std::vector<ParamRef> params_;
  SgdConfig config_;
  std::vector<Eigen::VectorXd> velocity_;
};

// ---- tiles experiment ------------------------------------------------------

struct TileImage {
  Eigen::MatrixXd rgb;     // n x 3, values around [0, 1] plus noise
  Eigen::VectorXi labels;  // n, 1 on the tile
  int h = 0, w = 0;
};

struct TilesDataConfig {
  int image_size = 64;
  int tile_size = 20;
  double noise_std = 0.02;
};

TileImage make_tile_image(std::mt19937_64& rng, const TilesDataConfig& cfg = {});

enum class TilesVariant { bnn, cnn, pixel };

struct TilesConfig {
  TilesVariant variant = TilesVariant::bnn;
  int train_images = 1000;
  int val_images = 200;
  int test_images = 200;
  std::uint64_t seed = 42;
  int epochs = 30;
  int batch = 100;
  SgdConfig sgd;  // lr 0.01, momentum 0.9, weight decay 5e-4
  TilesDataConfig data;
  int cnn_kernel = 9;
  int bcl_s = 1;
  // Feature scaling: positions in pixels, colors on a 0..255 range.
  double position_scale = 0.05;
  double color_scale = 0.04;
  double stop_at_val_iou = -1.0;  // early stop once reached (if positive)
  std::size_t lattice_cache_budget_bytes = std::size_t{1} << 30;
};

struct TilesEpoch {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_iou = 0.0;
};

struct TilesResult {
  std::vector<TilesEpoch> curve;
  double test_iou = 0.0;
  std::int64_t param_count = 0;

  // First epoch reaching the threshold, or INT_MAX when never reached.
  int epochs_to(double iou) const {
    for (const TilesEpoch& e : curve)
      if (e.val_iou >= iou) return e.epoch;
    return std::numeric_limits<int>::max();
  }
  double best_val_iou() const {
    double best = 0.0;
    for (const TilesEpoch& e : curve) best = std::max(best, e.val_iou);
    return best;
  }
};

// Builds the 3-layer network of the requested variant (32, 16, 2 filters).
Sequential make_tiles_network(const TilesConfig& cfg);

// 5-D (x, y, r, g, b) features of an image, scaled for the lattice.
FeatureSet tiles_features(const TileImage& img, double position_scale,
                          double color_scale);

TilesResult train_tiles(const TilesConfig& cfg);

}  // namespace phlat::nn
