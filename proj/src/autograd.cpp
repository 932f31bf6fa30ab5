#include "phlat/autograd.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace phlat {

namespace {

Eigen::VectorXd ones_mass(const LatticeIndex& idx) {
  return splat(idx, Eigen::MatrixXd::Ones(idx.n(), 1)).values.col(0);
}

}  // namespace

std::shared_ptr<const LatticeArtifacts> build_lattice_artifacts(
    const FeatureSet& features_in, const FeatureSet& features_out, int s) {
  auto art = std::make_shared<LatticeArtifacts>();
  auto [idx_in, idx_out] = build_joint_index(features_in, features_out);
  art->in = std::move(idx_in);
  art->out = std::move(idx_out);
  art->blur = build_blur_matrix(art->in, s);
  art->splat_density = ones_mass(art->in);
  return art;
}

std::shared_ptr<const LatticeArtifacts> build_lattice_artifacts(
    const FeatureSet& features, int s) {
  auto art = std::make_shared<LatticeArtifacts>();
  art->in = build_index(features);
  art->out = art->in;
  art->blur = build_blur_matrix(art->in, s);
  art->splat_density = ones_mass(art->in);
  return art;
}

BilateralPipeline::BilateralPipeline(const FeatureSet& features_in,
                                     const FeatureSet& features_out, int s,
                                     ConvolveOptions opts)
    : lattice_(build_lattice_artifacts(features_in, features_out, s)),
      opts_(opts) {}

BilateralPipeline::BilateralPipeline(const FeatureSet& features, int s,
                                     ConvolveOptions opts)
    : lattice_(build_lattice_artifacts(features, s)), opts_(opts) {}

BilateralPipeline::BilateralPipeline(std::shared_ptr<const LatticeArtifacts> lattice,
                                     ConvolveOptions opts)
    : lattice_(std::move(lattice)), opts_(opts) {}

PipelineResult BilateralPipeline::forward_with_tape(
    const Eigen::MatrixXd& signal, const PermutohedralKernel& kernel,
    NormalizeMode mode) const {
  PipelineResult res;
  res.tape.lattice = lattice_;
  res.tape.kernel = kernel;
  res.tape.convolve_opts = opts_;
  res.tape.splatted = splat(lattice_->in, signal);
  const LatticeSignal blurred = convolve(lattice_->blur, res.tape.splatted, kernel, opts_);
  res.output = slice(lattice_->out, blurred);

  if (mode != NormalizeMode::off) {
    LatticeSignal ones =
        splat(lattice_->in, Eigen::MatrixXd::Ones(signal.rows(), signal.cols()));
    const LatticeSignal ones_blurred = convolve(lattice_->blur, ones, kernel, opts_);
    Eigen::MatrixXd div = slice(lattice_->out, ones_blurred);
    for (Eigen::Index i = 0; i < div.size(); ++i) {
      double& den = div.data()[i];
      if (std::abs(den) < 1e-12) den = den < 0.0 ? -1e-12 : 1e-12;
    }
    res.output.array() /= div.array();
    res.tape.divisor = std::move(div);
    if (mode == NormalizeMode::full) {
      res.tape.splatted_ones = std::move(ones);
      res.tape.normalized_output = res.output;
    }
  }
  return res;
}

Eigen::MatrixXd BilateralPipeline::forward(const Eigen::MatrixXd& signal,
                                           const PermutohedralKernel& kernel,
                                           NormalizeMode mode) const {
  return forward_with_tape(signal, kernel, mode).output;
}

namespace {

Eigen::MatrixXd apply_divisor(const PipelineTape& tape,
                              const Eigen::MatrixXd& grad_out) {
  if (tape.divisor.size() == 0) return grad_out;
  if (grad_out.rows() != tape.divisor.rows() ||
      grad_out.cols() != tape.divisor.cols())
    throw std::invalid_argument("backward: grad_out shape mismatch");
  return grad_out.array() / tape.divisor.array();
}

}  // namespace

Eigen::MatrixXd backward_signal(const PipelineTape& tape,
                                const Eigen::MatrixXd& grad_out) {
  const LatticeArtifacts& lat = *tape.lattice;
  if (grad_out.rows() != lat.out.n())
    throw std::invalid_argument("backward_signal: grad_out rows != output points");
  const Eigen::MatrixXd g = apply_divisor(tape, grad_out);
  const LatticeSignal up = splat(lat.out, g);
  const LatticeSignal back =
      convolve(lat.blur, up, tape.kernel.adjoint(), tape.convolve_opts);
  return slice(lat.in, back);
}

namespace {

// dB_{a,b,o} += sum_j up_{j,a} l_{nbr(j,o),b}, lattice-point-major.
void accumulate_kernel_grad(const BlurMatrix& blur, const Eigen::MatrixXd& up,
                            const Eigen::MatrixXd& l, PermutohedralKernel& grad) {
  const int m = blur.m;
  const int t = blur.t();
  Eigen::MatrixXd gathered(m, l.cols());
  for (int o = 0; o < t; ++o) {
    const Index* row = blur.nbr.data() + static_cast<std::size_t>(o) * m;
    for (Eigen::Index b = 0; b < l.cols(); ++b) {
      const double* src = l.col(b).data();
      double* dst = gathered.col(b).data();
      for (int j = 0; j < m; ++j)
        dst[j] = row[j] == kMissing ? 0.0 : src[row[j]];
    }
    if (grad.scalar()) {
      grad.at(0, 0, o) += (up.array() * gathered.array()).sum();
    } else {
      grad.weights().middleCols(static_cast<Eigen::Index>(o) * grad.c_in(),
                                grad.c_in()) += up.transpose() * gathered;
    }
  }
}

}  // namespace

PermutohedralKernel backward_kernel(const PipelineTape& tape,
                                    const Eigen::MatrixXd& grad_out) {
  const LatticeArtifacts& lat = *tape.lattice;
  if (grad_out.rows() != lat.out.n())
    throw std::invalid_argument("backward_kernel: grad_out rows != output points");
  const PermutohedralKernel& kernel = tape.kernel;
  const Eigen::MatrixXd g = apply_divisor(tape, grad_out);
  const LatticeSignal up = splat(lat.out, g);  // S_slice^T dL/dv'

  PermutohedralKernel grad(kernel.d(), kernel.s(), kernel.c_in(), kernel.c_out());
  accumulate_kernel_grad(lat.blur, up.values, tape.splatted.values, grad);

  if (tape.splatted_ones.values.size() > 0) {
    // Quotient rule: out = raw / den, den built from the same kernel.
    const Eigen::MatrixXd g_den =
        -(grad_out.array() * tape.normalized_output.array() /
          tape.divisor.array())
             .matrix();
    const LatticeSignal up_den = splat(lat.out, g_den);
    accumulate_kernel_grad(lat.blur, up_den.values, tape.splatted_ones.values,
                           grad);
  }
  return grad;
}

double max_relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                          double eps) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("max_relative_error: shape mismatch");
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i];
    const double y = b.data()[i];
    const double denom = std::max({eps, std::abs(x), std::abs(y)});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

FiniteDiffGrads finite_diff_grads(const BilateralPipeline& pipe,
                                  const Eigen::MatrixXd& signal,
                                  const PermutohedralKernel& kernel,
                                  const Eigen::MatrixXd& target,
                                  double step, NormalizeMode mode) {
  // Central difference of L = 0.5 |out - target|^2, evaluated through the
  // factored form L+ - L- = 0.5 sum (r+ - r-)(r+ + r-). Residual entries
  // the parameter does not reach cancel exactly, so the quotient stays
  // well conditioned even for tiny gradient entries.
  auto residual = [&](const Eigen::MatrixXd& v, const PermutohedralKernel& k) {
    return Eigen::MatrixXd(pipe.forward(v, k, mode) - target);
  };
  auto central = [&](const Eigen::MatrixXd& r_plus, const Eigen::MatrixXd& r_minus) {
    const double diff =
        0.5 * ((r_plus - r_minus).array() * (r_plus + r_minus).array()).sum();
    return diff / (2.0 * step);
  };

  FiniteDiffGrads fd;
  fd.signal.resizeLike(signal);
  Eigen::MatrixXd v = signal;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double orig = v.data()[i];
    v.data()[i] = orig + step;
    const Eigen::MatrixXd rp = residual(v, kernel);
    v.data()[i] = orig - step;
    const Eigen::MatrixXd rm = residual(v, kernel);
    v.data()[i] = orig;
    fd.signal.data()[i] = central(rp, rm);
  }

  fd.kernel = PermutohedralKernel(kernel.d(), kernel.s(), kernel.c_in(),
                                  kernel.c_out());
  PermutohedralKernel k = kernel;
  for (Eigen::Index i = 0; i < k.weights().size(); ++i) {
    const double orig = k.weights().data()[i];
    k.weights().data()[i] = orig + step;
    const Eigen::MatrixXd rp = residual(signal, k);
    k.weights().data()[i] = orig - step;
    const Eigen::MatrixXd rm = residual(signal, k);
    k.weights().data()[i] = orig;
    fd.kernel.weights().data()[i] = central(rp, rm);
  }
  return fd;
}

GradCheckReport grad_check(const GradCheckSpec& spec, double tolerance) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Features spread over a handful of lattice cells.
  const double extent = 3.0;
  FeatureSet in;
  in.points.resize(spec.n, spec.d);
  for (Eigen::Index i = 0; i < in.points.size(); ++i)
    in.points.data()[i] = extent * unif(rng);
  in.scales = Eigen::VectorXd::Ones(spec.d);

  FeatureSet out = in;
  if (!spec.shared_points) {
    out.points.resize(spec.n_out, spec.d);
    for (Eigen::Index i = 0; i < out.points.size(); ++i)
      out.points.data()[i] = extent * unif(rng);
  }

  const int c_in = spec.c_in;
  Eigen::MatrixXd signal(spec.n, c_in);
  for (Eigen::Index i = 0; i < signal.size(); ++i) signal.data()[i] = gauss(rng);

  PermutohedralKernel kernel =
      spec.scalar_kernel
          ? PermutohedralKernel(spec.d, spec.s, 1, 1)
          : PermutohedralKernel(spec.d, spec.s, spec.c_in, spec.c_out);
  for (Eigen::Index i = 0; i < kernel.weights().size(); ++i)
    kernel.weights().data()[i] = gauss(rng) / std::sqrt(double(kernel.t()));

  const int c_out = spec.scalar_kernel ? c_in : spec.c_out;
  const int n_out = spec.shared_points ? spec.n : spec.n_out;
  Eigen::MatrixXd target(n_out, c_out);
  for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = gauss(rng);

  BilateralPipeline pipe(in, out, spec.s);
  const PipelineResult res = pipe.forward_with_tape(signal, kernel, spec.normalize);
  const Eigen::MatrixXd g = res.output - target;
  const Eigen::MatrixXd grad_sig = backward_signal(res.tape, g);
  const PermutohedralKernel grad_ker = backward_kernel(res.tape, g);

  const FiniteDiffGrads fd = finite_diff_grads(pipe, signal, kernel, target,
                                               spec.fd_step, spec.normalize);

  GradCheckReport report;
  report.max_rel_err_signal = max_relative_error(grad_sig, fd.signal);
  report.max_rel_err_kernel =
      max_relative_error(grad_ker.weights(), fd.kernel.weights());
  report.params_checked = static_cast<int>(signal.size() + kernel.weights().size());
  report.tolerance = tolerance;
  report.passed = report.max_rel_err() < tolerance;
  return report;
}

}  // namespace phlat
