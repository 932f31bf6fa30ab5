#include "phlat/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace phlat::nn {

namespace {

void fill_uniform(Eigen::MatrixXd& m, double range, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(-range, range);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = unif(rng);
}

}  // namespace

BclLayer::BclLayer(int d, int s, int c_in, int c_out, std::uint64_t seed,
                   bool normalize_splat)
    : kernel_(d, s, c_in, c_out),
      grad_(d, s, c_in, c_out),
      bias_(Eigen::VectorXd::Zero(c_out)),
      bias_grad_(Eigen::VectorXd::Zero(c_out)),
      normalize_splat_(normalize_splat) {
  std::mt19937_64 rng(seed);
  fill_uniform(kernel_.weights(),
               std::sqrt(1.0 / (static_cast<double>(c_in) * kernel_.t())), rng);
}

namespace {

void divide_by_density(LatticeSignal& signal, const Eigen::VectorXd& density) {
  const Eigen::ArrayXd inv = density.cwiseMax(1e-12).cwiseInverse();
  signal.values.array().colwise() *= inv;
}

}  // namespace

Tensor BclLayer::forward(const Tensor& x, const ImageContext& ctx) {
  if (!ctx.lattice) throw std::invalid_argument("BclLayer: missing lattice");
  if (x.v.cols() != kernel_.c_in())
    throw std::invalid_argument("BclLayer: channel mismatch");
  in_h_ = x.h;
  in_w_ = x.w;

  tape_.lattice = ctx.lattice;
  tape_.kernel = kernel_;
  tape_.splatted = splat(ctx.lattice->in, x.v);
  if (normalize_splat_)
    divide_by_density(tape_.splatted, ctx.lattice->splat_density);
  const LatticeSignal blurred =
      convolve(ctx.lattice->blur, tape_.splatted, kernel_, tape_.convolve_opts);
  Tensor out;
  out.h = x.h;
  out.w = x.w;
  out.v = slice(ctx.lattice->out, blurred);
  out.v.rowwise() += bias_.transpose();
  return out;
}

Tensor BclLayer::backward(const Tensor& grad, const ImageContext& ctx) {
  // tape_.splatted already carries the density divisor, which is exactly
  // what the kernel gradient needs.
  grad_.weights() += backward_kernel(tape_, grad.v).weights();
  bias_grad_ += grad.v.colwise().sum().transpose();

  const LatticeArtifacts& lat = *ctx.lattice;
  const LatticeSignal up = splat(lat.out, grad.v);
  LatticeSignal back =
      convolve(lat.blur, up, kernel_.adjoint(), tape_.convolve_opts);
  if (normalize_splat_) divide_by_density(back, lat.splat_density);
  Tensor out;
  out.h = in_h_;
  out.w = in_w_;
  out.v = slice(lat.in, back);
  return out;
}

std::vector<ParamRef> BclLayer::params() {
  return {{kernel_.weights().data(), grad_.weights().data(),
           kernel_.weights().size()},
          {bias_.data(), bias_grad_.data(), bias_.size()}};
}

SpatialConvLayer::SpatialConvLayer(int k, int c_in, int c_out, std::uint64_t seed)
    : k_(k), c_in_(c_in), c_out_(c_out) {
  if (k < 1 || k % 2 == 0)
    throw std::invalid_argument("SpatialConvLayer: kernel must be odd");
  weights_.resize(c_out, static_cast<Eigen::Index>(c_in) * k * k);
  grad_ = Eigen::MatrixXd::Zero(weights_.rows(), weights_.cols());
  bias_ = Eigen::VectorXd::Zero(c_out);
  bias_grad_ = Eigen::VectorXd::Zero(c_out);
  std::mt19937_64 rng(seed);
  fill_uniform(weights_, std::sqrt(1.0 / double(weights_.cols())), rng);
}

Eigen::MatrixXd SpatialConvLayer::pad(const Eigen::MatrixXd& interior, int h,
                                      int w) const {
  const int half = k_ / 2;
  const int wp = w + 2 * half;
  const int hp = h + 2 * half;
  Eigen::MatrixXd padded =
      Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(wp) * hp, interior.cols());
  for (int y = 0; y < h; ++y)
    padded.middleRows((y + half) * wp + half, w) = interior.middleRows(y * w, w);
  return padded;
}

Eigen::MatrixXd SpatialConvLayer::unpad(const Eigen::MatrixXd& padded, int h,
                                        int w) const {
  const int half = k_ / 2;
  const int wp = w + 2 * half;
  Eigen::MatrixXd interior(static_cast<Eigen::Index>(w) * h, padded.cols());
  for (int y = 0; y < h; ++y)
    interior.middleRows(y * w, w) = padded.middleRows((y + half) * wp + half, w);
  return interior;
}

Tensor SpatialConvLayer::forward(const Tensor& x, const ImageContext&) {
  if (x.v.cols() != c_in_)
    throw std::invalid_argument("SpatialConvLayer: channel mismatch");
  in_h_ = x.h;
  in_w_ = x.w;
  const int half = k_ / 2;
  const int wp = x.w + 2 * half;

  padded_input_ = pad(x.v, x.h, x.w);
  const Eigen::Index np = padded_input_.rows();
  Eigen::MatrixXd out_p = Eigen::MatrixXd::Zero(np, c_out_);
  for (int dy = -half; dy <= half; ++dy)
    for (int dx = -half; dx <= half; ++dx) {
      const int tap = (dy + half) * k_ + (dx + half);
      // weights for this tap as c_in x c_out
      Eigen::MatrixXd w_tap(c_in_, c_out_);
      for (int b = 0; b < c_in_; ++b)
        for (int a = 0; a < c_out_; ++a)
          w_tap(b, a) = weights_(a, static_cast<Eigen::Index>(b) * k_ * k_ + tap);
      const Eigen::Index shift = static_cast<Eigen::Index>(dy) * wp + dx;
      const Eigen::Index len = np - std::abs(shift);
      const Eigen::Index dst = shift >= 0 ? 0 : -shift;
      const Eigen::Index src = shift >= 0 ? shift : 0;
      out_p.middleRows(dst, len).noalias() +=
          padded_input_.middleRows(src, len) * w_tap;
    }

  Tensor out;
  out.h = x.h;
  out.w = x.w;
  out.v = unpad(out_p, x.h, x.w);
  out.v.rowwise() += bias_.transpose();
  return out;
}

Tensor SpatialConvLayer::backward(const Tensor& grad, const ImageContext&) {
  bias_grad_ += grad.v.colwise().sum().transpose();
  const int half = k_ / 2;
  const int wp = in_w_ + 2 * half;
  const Eigen::MatrixXd grad_p = pad(grad.v, in_h_, in_w_);
  const Eigen::Index np = grad_p.rows();

  Eigen::MatrixXd in_grad_p = Eigen::MatrixXd::Zero(np, c_in_);
  for (int dy = -half; dy <= half; ++dy)
    for (int dx = -half; dx <= half; ++dx) {
      const int tap = (dy + half) * k_ + (dx + half);
      Eigen::MatrixXd w_tap(c_in_, c_out_);
      for (int b = 0; b < c_in_; ++b)
        for (int a = 0; a < c_out_; ++a)
          w_tap(b, a) = weights_(a, static_cast<Eigen::Index>(b) * k_ * k_ + tap);
      const Eigen::Index shift = static_cast<Eigen::Index>(dy) * wp + dx;
      const Eigen::Index len = np - std::abs(shift);
      const Eigen::Index dst = shift >= 0 ? 0 : -shift;
      const Eigen::Index src = shift >= 0 ? shift : 0;

      // Forward read out[i] += in[i + shift] W; adjoints flip the shift.
      in_grad_p.middleRows(src, len).noalias() +=
          grad_p.middleRows(dst, len) * w_tap.transpose();
      const Eigen::MatrixXd w_grad_tap =
          padded_input_.middleRows(src, len).transpose() *
          grad_p.middleRows(dst, len);
      for (int b = 0; b < c_in_; ++b)
        for (int a = 0; a < c_out_; ++a)
          grad_(a, static_cast<Eigen::Index>(b) * k_ * k_ + tap) +=
              w_grad_tap(b, a);
    }

  Tensor out;
  out.h = in_h_;
  out.w = in_w_;
  out.v = unpad(in_grad_p, in_h_, in_w_);
  return out;
}

std::vector<ParamRef> SpatialConvLayer::params() {
  return {{weights_.data(), grad_.data(), weights_.size()},
          {bias_.data(), bias_grad_.data(), bias_.size()}};
}

Tensor ReluLayer::forward(const Tensor& x, const ImageContext&) {
  mask_ = (x.v.array() > 0.0).cast<double>();
  Tensor out = x;
  out.v = x.v.cwiseMax(0.0);
  return out;
}

Tensor ReluLayer::backward(const Tensor& grad, const ImageContext&) {
  Tensor out = grad;
  out.v = grad.v.array() * mask_.array();
  return out;
}

Tensor Sequential::forward(const Tensor& x, const ImageContext& ctx) {
  Tensor cur = x;
  for (auto& layer : layers_) cur = layer->forward(cur, ctx);
  return cur;
}

Tensor Sequential::backward(const Tensor& grad, const ImageContext& ctx) {
  Tensor cur = grad;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
    cur = (*it)->backward(cur, ctx);
  return cur;
}

std::vector<ParamRef> Sequential::params() {
  std::vector<ParamRef> all;
  for (auto& layer : layers_)
    for (const ParamRef& p : layer->params()) all.push_back(p);
  return all;
}

std::int64_t Sequential::param_count() const {
  std::int64_t total = 0;
  for (const auto& layer : layers_) total += layer->param_count();
  return total;
}

double SoftmaxLogLoss::forward(const Tensor& logits, const Eigen::VectorXi& labels) {
  if (logits.v.rows() != labels.size())
    throw std::invalid_argument("SoftmaxLogLoss: label count mismatch");
  h_ = logits.h;
  w_ = logits.w;
  labels_ = labels;
  probs_ = logits.v;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < probs_.rows(); ++i) {
    const int label = labels[i];
    if (label < 0 || label >= probs_.cols())
      throw std::invalid_argument("SoftmaxLogLoss: label out of range");
    const double mx = probs_.row(i).maxCoeff();
    const Eigen::ArrayXd e = (probs_.row(i).array() - mx).exp();
    const double z = e.sum();
    probs_.row(i) = (e / z).matrix();
    loss -= std::log(std::max(probs_(i, label), 1e-300));
  }
  return loss / double(probs_.rows());
}

Tensor SoftmaxLogLoss::backward() const {
  Tensor g;
  g.h = h_;
  g.w = w_;
  g.v = probs_;
  for (Eigen::Index i = 0; i < g.v.rows(); ++i) g.v(i, labels_[i]) -= 1.0;
  g.v /= double(g.v.rows());
  return g;
}

double MseLoss::forward(const Tensor& x, const Eigen::MatrixXd& target) {
  if (x.v.rows() != target.rows() || x.v.cols() != target.cols())
    throw std::invalid_argument("MseLoss: shape mismatch");
  h_ = x.h;
  w_ = x.w;
  diff_ = x.v - target;
  return diff_.squaredNorm() / double(diff_.size());
}

Tensor MseLoss::backward() const {
  Tensor g;
  g.h = h_;
  g.w = w_;
  g.v = 2.0 * diff_ / double(diff_.size());
  return g;
}

Sgd::Sgd(std::vector<ParamRef> params, SgdConfig config)
    : params_(std::move(params)), config_(config) {
  velocity_.reserve(params_.size());
  for (const ParamRef& p : params_)
    velocity_.push_back(Eigen::VectorXd::Zero(p.size));
}

void Sgd::step(double grad_scale) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ParamRef& p = params_[k];
    Eigen::Map<Eigen::VectorXd> value(p.value, p.size);
    Eigen::Map<const Eigen::VectorXd> grad(p.grad, p.size);
    velocity_[k] = config_.momentum * velocity_[k] -
                   config_.lr * (grad_scale * grad + config_.weight_decay * value);
    value += velocity_[k];
  }
}

void Sgd::zero_grads() {
  for (ParamRef& p : params_) Eigen::Map<Eigen::VectorXd>(p.grad, p.size).setZero();
}

TileImage make_tile_image(std::mt19937_64& rng, const TilesDataConfig& cfg) {
  std::uniform_real_distribution<double> color(0.0, 1.0);
  std::uniform_int_distribution<int> place(0, cfg.image_size - cfg.tile_size);
  std::normal_distribution<double> noise(0.0, cfg.noise_std);

  TileImage img;
  img.h = img.w = cfg.image_size;
  const int n = img.h * img.w;
  Eigen::Vector3d bg(color(rng), color(rng), color(rng));
  Eigen::Vector3d fg(color(rng), color(rng), color(rng));
  const int x0 = place(rng);
  const int y0 = place(rng);

  img.rgb.resize(n, 3);
  img.labels = Eigen::VectorXi::Zero(n);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const int p = y * img.w + x;
      const bool inside =
          x >= x0 && x < x0 + cfg.tile_size && y >= y0 && y < y0 + cfg.tile_size;
      const Eigen::Vector3d& c = inside ? fg : bg;
      img.labels[p] = inside ? 1 : 0;
      for (int ch = 0; ch < 3; ++ch) img.rgb(p, ch) = c[ch] + noise(rng);
    }
  return img;
}

FeatureSet tiles_features(const TileImage& img, double position_scale,
                          double color_scale) {
  FeatureSet fs;
  fs.points.resize(img.rgb.rows(), 5);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const int p = y * img.w + x;
      fs.points(p, 0) = x;
      fs.points(p, 1) = y;
      // Colors enter the feature space on a 0..255 range.
      fs.points(p, 2) = 255.0 * img.rgb(p, 0);
      fs.points(p, 3) = 255.0 * img.rgb(p, 1);
      fs.points(p, 4) = 255.0 * img.rgb(p, 2);
    }
  fs.scales.resize(5);
  fs.scales << position_scale, position_scale, color_scale, color_scale,
      color_scale;
  return fs;
}

Sequential make_tiles_network(const TilesConfig& cfg) {
  Sequential net;
  const std::uint64_t seed = cfg.seed ^ 0x5eed;
  switch (cfg.variant) {
    case TilesVariant::bnn:
      net.add(std::make_unique<BclLayer>(5, cfg.bcl_s, 3, 32, seed + 1));
      net.add(std::make_unique<ReluLayer>());
      net.add(std::make_unique<BclLayer>(5, cfg.bcl_s, 32, 16, seed + 2));
      net.add(std::make_unique<ReluLayer>());
      net.add(std::make_unique<BclLayer>(5, cfg.bcl_s, 16, 2, seed + 3));
      break;
    case TilesVariant::cnn:
      net.add(std::make_unique<SpatialConvLayer>(cfg.cnn_kernel, 3, 32, seed + 1));
      net.add(std::make_unique<ReluLayer>());
      net.add(std::make_unique<SpatialConvLayer>(cfg.cnn_kernel, 32, 16, seed + 2));
      net.add(std::make_unique<ReluLayer>());
      net.add(std::make_unique<SpatialConvLayer>(cfg.cnn_kernel, 16, 2, seed + 3));
      break;
    case TilesVariant::pixel:
      net.add(std::make_unique<SpatialConvLayer>(1, 3, 2, seed + 1));
      break;
  }
  return net;
}

namespace {

struct LatticeCache {
  std::vector<std::shared_ptr<const LatticeArtifacts>> slots;
  std::size_t budget = 0;
  std::size_t used = 0;

  static std::size_t footprint(const LatticeArtifacts& art) {
    return sizeof(Index) * (art.in.corners.size() + art.blur.nbr.size()) +
           sizeof(double) * art.in.weights.size() +
           sizeof(Index) * art.in.m() * (art.in.dim() + 1);
  }

  std::shared_ptr<const LatticeArtifacts> get(int id, const TileImage& img,
                                              const TilesConfig& cfg) {
    if (id < static_cast<int>(slots.size()) && slots[id]) return slots[id];
    auto art = build_lattice_artifacts(
        tiles_features(img, cfg.position_scale, cfg.color_scale), cfg.bcl_s);
    const std::size_t bytes = footprint(*art);
    if (used + bytes <= budget) {
      if (id >= static_cast<int>(slots.size())) slots.resize(id + 1);
      slots[id] = art;
      used += bytes;
    }
    return art;
  }
};

double foreground_iou(const Eigen::VectorXi& pred, const Eigen::VectorXi& gt,
                      std::int64_t& inter, std::int64_t& uni) {
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == 1;
    const bool g = gt[i] == 1;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

}  // namespace

namespace {

// Splatting is unnormalized, so a bilateral layer's output scales with the
// lattice occupancy of its image. Rescale each kernel once at init so its
// activations come out with unit spread; the weights stay free afterwards.
void calibrate_activation_scale(Sequential& net,
                                const std::vector<TileImage>& sample,
                                const std::vector<ImageContext>& contexts) {
  for (std::size_t li = 0; li < net.size(); ++li) {
    auto* bcl = dynamic_cast<BclLayer*>(&net.layer(li));
    if (!bcl) continue;
    double sq_sum = 0.0;
    std::int64_t count = 0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
      Tensor cur{sample[i].rgb, sample[i].h, sample[i].w};
      for (std::size_t j = 0; j <= li; ++j)
        cur = net.layer(j).forward(cur, contexts[i]);
      sq_sum += cur.v.squaredNorm();
      count += cur.v.size();
    }
    const double rms = std::sqrt(sq_sum / std::max<std::int64_t>(count, 1));
    if (rms > 0.0) bcl->kernel().weights() /= rms;
  }
}

}  // namespace

TilesResult train_tiles(const TilesConfig& cfg) {
  std::mt19937_64 data_rng(cfg.seed);
  std::vector<TileImage> train(cfg.train_images), val(cfg.val_images),
      test(cfg.test_images);
  for (auto& img : train) img = make_tile_image(data_rng, cfg.data);
  for (auto& img : val) img = make_tile_image(data_rng, cfg.data);
  for (auto& img : test) img = make_tile_image(data_rng, cfg.data);

  Sequential net = make_tiles_network(cfg);

  const bool needs_lattice = cfg.variant == TilesVariant::bnn;
  LatticeCache train_cache, val_cache, test_cache;
  train_cache.budget = cfg.lattice_cache_budget_bytes / 2;
  val_cache.budget = cfg.lattice_cache_budget_bytes / 4;
  test_cache.budget = cfg.lattice_cache_budget_bytes / 4;

  auto context_for = [&](LatticeCache& cache, int id,
                         const TileImage& img) -> ImageContext {
    ImageContext ctx;
    if (needs_lattice) ctx.lattice = cache.get(id, img, cfg);
    return ctx;
  };

  if (needs_lattice) {
    const int sample_count = std::min<int>(4, cfg.train_images);
    std::vector<TileImage> sample(train.begin(), train.begin() + sample_count);
    std::vector<ImageContext> contexts;
    for (int i = 0; i < sample_count; ++i)
      contexts.push_back(context_for(train_cache, i, train[i]));
    calibrate_activation_scale(net, sample, contexts);
  }
  Sgd opt(net.params(), cfg.sgd);

  auto evaluate = [&](const std::vector<TileImage>& set, LatticeCache& cache) {
    std::int64_t inter = 0, uni = 0;
    double iou = 1.0;
    for (int i = 0; i < static_cast<int>(set.size()); ++i) {
      const TileImage& img = set[i];
      Tensor x{img.rgb, img.h, img.w};
      const Tensor logits = net.forward(x, context_for(cache, i, img));
      Eigen::VectorXi pred(logits.v.rows());
      for (Eigen::Index p = 0; p < logits.v.rows(); ++p)
        pred[p] = logits.v(p, 1) > logits.v(p, 0) ? 1 : 0;
      iou = foreground_iou(pred, img.labels, inter, uni);
    }
    return iou;
  };

  TilesResult result;
  result.param_count = net.param_count();

  std::vector<int> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0xc0ffee);
  SoftmaxLogLoss loss;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    int epoch_images = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
      const int batch = static_cast<int>(
          std::min<std::size_t>(cfg.batch, order.size() - b0));
      opt.zero_grads();
      for (int k = 0; k < batch; ++k) {
        const int id = order[b0 + k];
        const TileImage& img = train[id];
        const ImageContext ctx = context_for(train_cache, id, img);
        Tensor x{img.rgb, img.h, img.w};
        const Tensor logits = net.forward(x, ctx);
        epoch_loss += loss.forward(logits, img.labels);
        ++epoch_images;
        net.backward(loss.backward(), ctx);
      }
      opt.step(1.0 / batch);
    }

    TilesEpoch e;
    e.epoch = epoch;
    e.train_loss = epoch_loss / std::max(epoch_images, 1);
    e.val_iou = evaluate(val, val_cache);
    result.curve.push_back(e);
    if (cfg.stop_at_val_iou > 0.0 && e.val_iou >= cfg.stop_at_val_iou) break;
  }

  result.test_iou = evaluate(test, test_cache);
  return result;
}

}  // namespace phlat::nn
