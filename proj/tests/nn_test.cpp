#include <doctest.h>

#include <cmath>
#include <random>

#include "phlat/nn.hpp"

using namespace phlat;
using namespace phlat::nn;

namespace {

Tensor random_tensor(std::mt19937_64& rng, int h, int w, int c) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor t;
  t.h = h;
  t.w = w;
  t.v.resize(h * w, c);
  for (Eigen::Index i = 0; i < t.v.size(); ++i) t.v.data()[i] = gauss(rng);
  return t;
}

ImageContext context_for(const Tensor& x, int d_extra_channels_scale = 0) {
  // Features: (x, y, channels...) with mild scales, enough to spread the
  // pixels over a few cells.
  (void)d_extra_channels_scale;
  FeatureSet fs;
  const int c = x.channels();
  fs.points.resize(x.pixels(), 2 + c);
  for (int y = 0; y < x.h; ++y)
    for (int px = 0; px < x.w; ++px) {
      const int p = y * x.w + px;
      fs.points(p, 0) = px;
      fs.points(p, 1) = y;
      for (int ch = 0; ch < c; ++ch) fs.points(p, 2 + ch) = x.v(p, ch);
    }
  fs.scales = Eigen::VectorXd::Constant(2 + c, 0.5);
  ImageContext ctx;
  ctx.lattice = build_lattice_artifacts(fs, 1);
  return ctx;
}

// Central finite differences of `loss` with respect to `params`.
template <typename LossFn>
Eigen::VectorXd fd_grad(double* params, std::int64_t size, LossFn loss,
                        double h = 1e-6) {
  Eigen::VectorXd g(size);
  for (std::int64_t i = 0; i < size; ++i) {
    const double orig = params[i];
    params[i] = orig + h;
    const double lp = loss();
    params[i] = orig - h;
    const double lm = loss();
    params[i] = orig;
    g[i] = (lp - lm) / (2.0 * h);
  }
  return g;
}

double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) /
                                std::max({1e-12, std::abs(a[i]), std::abs(b[i])}));
  return worst;
}

// Central differences of a non-quadratic loss carry ~1e-10 absolute noise;
// entries that small are compared against an absolute floor instead.
bool grads_match(const Eigen::VectorXd& analytic, const Eigen::VectorXd& fd,
                 double rel = 1e-5, double floor = 1e-8) {
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double tol =
        rel * std::max(std::abs(analytic[i]), std::abs(fd[i])) + floor;
    if (std::abs(analytic[i] - fd[i]) > tol) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("relu clamps negatives") {
  Tensor x;
  x.h = 1;
  x.w = 2;
  x.v.resize(2, 1);
  x.v << -1.0, 2.0;
  ReluLayer relu;
  const Tensor y = relu.forward(x, {});
  CHECK(y.v(0, 0) == 0.0);
  CHECK(y.v(1, 0) == 2.0);
  Tensor g = x;
  g.v << 3.0, 4.0;
  const Tensor gx = relu.backward(g, {});
  CHECK(gx.v(0, 0) == 0.0);
  CHECK(gx.v(1, 0) == 4.0);
}

TEST_CASE("softmax log loss of uniform logits is ln L") {
  for (int labels : {2, 5}) {
    Tensor x;
    x.h = 2;
    x.w = 2;
    x.v = Eigen::MatrixXd::Constant(4, labels, 0.37);
    Eigen::VectorXi y = Eigen::VectorXi::Zero(4);
    SoftmaxLogLoss loss;
    CHECK(loss.forward(x, y) == doctest::Approx(std::log(double(labels))));
  }
}

TEST_CASE("softmax log loss gradient matches finite differences") {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor(rng, 2, 3, 4);
  Eigen::VectorXi y(6);
  y << 0, 1, 2, 3, 1, 0;
  SoftmaxLogLoss loss;
  loss.forward(x, y);
  const Tensor g = loss.backward();
  const Eigen::VectorXd fd =
      fd_grad(x.v.data(), x.v.size(), [&] { return loss.forward(x, y); });
  CHECK(rel_err(Eigen::Map<const Eigen::VectorXd>(g.v.data(), g.v.size()), fd) <
        1e-7);
}

TEST_CASE("mse loss and gradient") {
  std::mt19937_64 rng(2);
  Tensor x = random_tensor(rng, 2, 2, 2);
  Eigen::MatrixXd target = Eigen::MatrixXd::Zero(4, 2);
  MseLoss loss;
  const double l = loss.forward(x, target);
  CHECK(l == doctest::Approx(x.v.squaredNorm() / 8.0));
  const Tensor g = loss.backward();
  const Eigen::VectorXd fd =
      fd_grad(x.v.data(), x.v.size(), [&] { return loss.forward(x, target); });
  CHECK(rel_err(Eigen::Map<const Eigen::VectorXd>(g.v.data(), g.v.size()), fd) <
        1e-7);
}

TEST_CASE("sgd update rule") {
  SUBCASE("zero gradient and zero decay leave parameters alone") {
    double p = 1.5, g = 0.0;
    Sgd opt({{&p, &g, 1}}, {0.1, 0.9, 0.0});
    opt.step();
    CHECK(p == 1.5);
  }
  SUBCASE("single substitution") {
    double p = 0.0, g = 1.0;
    Sgd opt({{&p, &g, 1}}, {1.0, 0.9, 0.0});
    opt.step();
    CHECK(p == -1.0);
  }
  SUBCASE("momentum accumulates over two steps") {
    const double lr = 0.25, gval = 0.8;
    double p = 0.0, g = gval;
    Sgd opt({{&p, &g, 1}}, {lr, 0.9, 0.0});
    opt.step();
    opt.step();
    CHECK(p == doctest::Approx(-(1.0 + 1.9) * lr * gval).epsilon(1e-12));
  }
  SUBCASE("weight decay pulls parameters toward zero") {
    double p = 2.0, g = 0.0;
    Sgd opt({{&p, &g, 1}}, {1.0, 0.0, 0.0005});
    opt.step();
    CHECK(p == doctest::Approx(2.0 - 0.0005 * 2.0));
  }
}

TEST_CASE("bcl layer: zero kernel gives zero activations and gradients") {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor(rng, 4, 4, 3);
  const ImageContext ctx = context_for(x);
  BclLayer layer(5, 1, 3, 2, 7);
  layer.kernel().weights().setZero();
  const Tensor y = layer.forward(x, ctx);
  CHECK(y.v.cwiseAbs().maxCoeff() == 0.0);
  Tensor g = y;
  g.v.setOnes();
  const Tensor gx = layer.backward(g, ctx);
  CHECK(gx.v.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bcl layer on a single pixel matches the dense oracle") {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor(rng, 1, 1, 2);
  const ImageContext ctx = context_for(x);
  BclLayer layer(4, 1, 2, 3, 11, /*normalize_splat=*/false);
  const Tensor y = layer.forward(x, ctx);

  FeatureSet fs;
  fs.points.resize(1, 4);
  fs.points << 0, 0, x.v(0, 0), x.v(0, 1);
  fs.scales = Eigen::VectorXd::Constant(4, 0.5);
  const DenseOracleResult oracle = dense_oracle(fs, fs, x.v, layer.kernel());
  CHECK((y.v - oracle.forward).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("density-normalized bcl equals the manual composition") {
  std::mt19937_64 rng(14);
  Tensor x = random_tensor(rng, 4, 3, 2);
  const ImageContext ctx = context_for(x);
  BclLayer layer(4, 1, 2, 2, 15);
  const Tensor y = layer.forward(x, ctx);

  LatticeSignal l = splat(ctx.lattice->in, x.v);
  l.values.array().colwise() *=
      ctx.lattice->splat_density.cwiseMax(1e-12).cwiseInverse().array();
  const Eigen::MatrixXd expected = slice(
      ctx.lattice->out, convolve(ctx.lattice->blur, l, layer.kernel()));
  CHECK((y.v - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("layer gradients pass finite-difference checks") {
  std::mt19937_64 rng(5);

  SUBCASE("spatial convolution") {
    Tensor x = random_tensor(rng, 5, 4, 2);
    SpatialConvLayer layer(3, 2, 3, 13);
    Eigen::MatrixXd target = Eigen::MatrixXd::Zero(20, 3);
    MseLoss loss;
    auto run = [&] { return loss.forward(layer.forward(x, {}), target); };
    run();
    Tensor g0 = loss.backward();
    layer.params()[0];  // ensure params are exposed
    Eigen::Map<Eigen::VectorXd>(layer.params()[0].grad, layer.param_count())
        .setZero();
    layer.backward(g0, {});
    const Eigen::VectorXd analytic = Eigen::Map<const Eigen::VectorXd>(
        layer.params()[0].grad, layer.param_count());
    const Eigen::VectorXd fd =
        fd_grad(layer.params()[0].value, layer.param_count(), run);
    CHECK(rel_err(analytic, fd) < 1e-5);
  }

  SUBCASE("bilateral convolution layer") {
    Tensor x = random_tensor(rng, 3, 3, 2);
    const ImageContext ctx = context_for(x);
    BclLayer layer(4, 1, 2, 2, 17);
    Eigen::MatrixXd target = Eigen::MatrixXd::Zero(9, 2);
    MseLoss loss;
    auto run = [&] { return loss.forward(layer.forward(x, ctx), target); };
    run();
    Eigen::Map<Eigen::VectorXd>(layer.params()[0].grad, layer.param_count())
        .setZero();
    layer.backward(loss.backward(), ctx);
    const Eigen::VectorXd analytic = Eigen::Map<const Eigen::VectorXd>(
        layer.params()[0].grad, layer.param_count());
    const Eigen::VectorXd fd =
        fd_grad(layer.params()[0].value, layer.param_count(), run);
    CHECK(rel_err(analytic, fd) < 1e-5);
  }

  SUBCASE("three-layer network end to end") {
    Tensor x = random_tensor(rng, 3, 3, 3);
    const ImageContext ctx = context_for(x);
    Sequential net;
    net.add(std::make_unique<BclLayer>(5, 1, 3, 4, 19));
    net.add(std::make_unique<ReluLayer>());
    net.add(std::make_unique<SpatialConvLayer>(3, 4, 2, 23));
    Eigen::VectorXi labels(9);
    labels << 0, 1, 0, 1, 0, 1, 0, 1, 0;
    SoftmaxLogLoss loss;
    auto run = [&] { return loss.forward(net.forward(x, ctx), labels); };
    run();
    for (auto& p : net.params())
      Eigen::Map<Eigen::VectorXd>(p.grad, p.size).setZero();
    net.backward(loss.backward(), ctx);
    for (auto& p : net.params()) {
      const Eigen::VectorXd analytic =
          Eigen::Map<const Eigen::VectorXd>(p.grad, p.size);
      const Eigen::VectorXd fd = fd_grad(p.value, p.size, run);
      CHECK(grads_match(analytic, fd));
    }
  }
}

TEST_CASE("forward and backward leave parameters untouched") {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor(rng, 4, 4, 3);
  const ImageContext ctx = context_for(x);
  Sequential net;
  net.add(std::make_unique<BclLayer>(5, 1, 3, 2, 29));
  net.add(std::make_unique<ReluLayer>());

  std::vector<Eigen::VectorXd> before;
  for (auto& p : net.params())
    before.emplace_back(Eigen::Map<const Eigen::VectorXd>(p.value, p.size));
  Eigen::VectorXi labels = Eigen::VectorXi::Zero(16);
  SoftmaxLogLoss loss;
  loss.forward(net.forward(x, ctx), labels);
  net.backward(loss.backward(), ctx);
  auto params = net.params();
  for (std::size_t i = 0; i < params.size(); ++i)
    CHECK(Eigen::Map<const Eigen::VectorXd>(params[i].value, params[i].size) ==
          before[i]);
}

TEST_CASE("tiles networks have the documented parameter counts") {
  TilesConfig cfg;
  cfg.variant = TilesVariant::bnn;
  Sequential bnn = make_tiles_network(cfg);
  cfg.variant = TilesVariant::cnn;
  Sequential cnn = make_tiles_network(cfg);

  auto weight_count = [](Sequential& net) {
    std::int64_t total = 0;
    for (std::size_t i = 0; i < net.size(); ++i) {
      if (auto* b = dynamic_cast<BclLayer*>(&net.layer(i))) total += b->weight_count();
      if (auto* s = dynamic_cast<SpatialConvLayer*>(&net.layer(i)))
        total += s->weight_count();
    }
    return total;
  };
  CHECK(weight_count(bnn) == 40320);  // 63 * (3*32 + 32*16 + 16*2)
  CHECK(weight_count(cnn) == 51840);  // 81 * (3*32 + 32*16 + 16*2)
  CHECK(bnn.param_count() == 40320 + 50);  // per-channel biases
  CHECK(cnn.param_count() == 51840 + 50);
  CHECK(bnn.param_count() < cnn.param_count());
}

TEST_CASE("tile images have exactly one 20x20 tile strictly inside") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const TileImage img = make_tile_image(rng);
    CHECK(img.labels.sum() == 400);
    // Tile pixels stay away from nothing but the canvas bounds.
    int min_x = 64, max_x = -1, min_y = 64, max_y = -1;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (img.labels[y * 64 + x] == 1) {
          min_x = std::min(min_x, x);
          max_x = std::max(max_x, x);
          min_y = std::min(min_y, y);
          max_y = std::max(max_y, y);
        }
    CHECK(max_x - min_x + 1 == 20);
    CHECK(max_y - min_y + 1 == 20);
    CHECK(max_x <= 63);
    CHECK(max_y <= 63);
  }
}

TEST_CASE("a 5-D bilateral layer runs on a 64x64 image") {
  std::mt19937_64 rng(8);
  TilesConfig cfg;
  const TileImage img = make_tile_image(rng);
  ImageContext ctx;
  ctx.lattice = build_lattice_artifacts(
      tiles_features(img, cfg.position_scale, cfg.color_scale), 1);
  BclLayer layer(5, 1, 3, 32, 31);
  Tensor x{img.rgb, img.h, img.w};
  const Tensor y = layer.forward(x, ctx);
  CHECK(y.v.rows() == 64 * 64);
  CHECK(y.v.cols() == 32);
  CHECK(y.v.allFinite());
}

TEST_CASE("a pixel-only classifier stays near chance on tiles") {
  TilesConfig cfg;
  cfg.variant = TilesVariant::pixel;
  cfg.train_images = 30;
  cfg.val_images = 15;
  cfg.test_images = 15;
  cfg.epochs = 3;
  cfg.batch = 10;
  cfg.seed = 99;
  const TilesResult res = train_tiles(cfg);
  CHECK(res.best_val_iou() < 0.3);
}
