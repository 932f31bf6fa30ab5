#include "phlat/crf.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace phlat::crf {

Eigen::MatrixXd potts(int labels, double weight) {
  if (labels < 2) throw std::invalid_argument("potts: labels >= 2");
  Eigen::MatrixXd mu = Eigen::MatrixXd::Constant(labels, labels, weight);
  mu.diagonal().setZero();
  return mu;
}

MeanFieldModel MeanFieldModel::gaussian(int labels, double potts_weight,
                                        std::vector<KernelFeatureSpec> specs,
                                        int steps) {
  MeanFieldModel model;
  model.labels = labels;
  model.compat = potts(labels, potts_weight);
  model.kernel_specs = std::move(specs);
  model.steps = steps;
  model.loose = false;
  model.normalization = Normalization::symmetric;
  model.banks.resize(1);
  for (const KernelFeatureSpec& spec : model.kernel_specs)
    model.banks[0].push_back(gaussian_kernel(spec.dim(), spec.s));
  return model;
}

MeanFieldModel MeanFieldModel::trainable(bool loose_banks) const {
  MeanFieldModel model = *this;
  model.normalization = Normalization::none;
  model.loose = loose_banks;
  if (loose_banks) {
    if (loose && static_cast<int>(banks.size()) == steps)
      model.banks = banks;  // already per-step
    else
      model.banks.assign(static_cast<std::size_t>(model.steps), banks[0]);
  } else {
    model.banks.assign(1, banks[0]);
  }
  return model;
}

Eigen::MatrixXd unary_from_logits(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd unary(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = std::log((logits.row(i).array() - mx).exp().sum()) + mx;
    unary.row(i) = (lse - logits.row(i).array()).matrix();
  }
  return unary;
}

FeatureSet crf_features(const CrfImage& img, const KernelFeatureSpec& spec) {
  const int n = img.h * img.w;
  FeatureSet fs;
  fs.points.resize(n, spec.dim());
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const int p = y * img.w + x;
      fs.points(p, 0) = x;
      fs.points(p, 1) = y;
      if (spec.kind == KernelFeatureSpec::Kind::position_color)
        for (int c = 0; c < 3; ++c) fs.points(p, 2 + c) = 255.0 * img.rgb(p, c);
    }
  fs.scales = Eigen::VectorXd::Constant(spec.dim(), spec.position_scale);
  if (spec.kind == KernelFeatureSpec::Kind::position_color)
    fs.scales.tail(3).setConstant(spec.color_scale);
  return fs;
}

CrfArtifacts build_crf_artifacts(const MeanFieldModel& model, const CrfImage& img) {
  CrfArtifacts art;
  art.kernels.reserve(model.kernel_specs.size());
  for (std::size_t k = 0; k < model.kernel_specs.size(); ++k) {
    const KernelFeatureSpec& spec = model.kernel_specs[k];
    KernelArtifacts ka;
    ka.lattice = build_lattice_artifacts(crf_features(img, spec), spec.s);
    const LatticeIndex& idx = ka.lattice->in;
    ka.self_geometry.resize(idx.n());
    for (int i = 0; i < idx.n(); ++i)
      ka.self_geometry[i] = idx.weights.row(i).squaredNorm();
    if (model.normalization == MeanFieldModel::Normalization::symmetric) {
      BilateralPipeline pipe(ka.lattice);
      const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(idx.n(), 1);
      const Eigen::MatrixXd raw = pipe.forward(ones, model.banks[0][k]);
      ka.sym_scale = raw.col(0).cwiseMax(1e-12).cwiseSqrt().cwiseInverse();
    }
    art.kernels.push_back(std::move(ka));
  }
  return art;
}

Eigen::MatrixXd init_marginals(const Eigen::MatrixXd& unary) {
  if (!unary.allFinite())
    throw std::invalid_argument("init_marginals: non-finite unaries");
  Eigen::MatrixXd q(unary.rows(), unary.cols());
  for (Eigen::Index i = 0; i < unary.rows(); ++i) {
    const Eigen::ArrayXd z = -unary.row(i).array();
    const Eigen::ArrayXd e = (z - z.maxCoeff()).exp();
    q.row(i) = (e / e.sum()).matrix();
  }
  return q;
}

bool marginals_on_simplex(const Eigen::MatrixXd& q, double tol) {
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    if (q.row(i).minCoeff() < 0.0) return false;
    if (std::abs(q.row(i).sum() - 1.0) > tol) return false;
  }
  return true;
}

namespace {

struct StepTape {
  Eigen::MatrixXd q_in;
  Eigen::MatrixXd q_out;
  std::vector<PipelineTape> filters;
  std::vector<Eigen::VectorXd> self_coeff;  // per kernel, per point
};

// Shared forward pass; fills `tape` when given (training path).
Eigen::MatrixXd step_forward(const MeanFieldModel& model, const CrfArtifacts& art,
                             const Eigen::MatrixXd& unary, const Eigen::MatrixXd& q,
                             int step, StepTape* tape) {
  if (!unary.allFinite()) throw std::invalid_argument("mf_step: non-finite unaries");
  if (q.rows() != unary.rows() || q.cols() != unary.cols())
    throw std::invalid_argument("mf_step: marginal shape mismatch");
  const bool symmetric =
      model.normalization == MeanFieldModel::Normalization::symmetric;

  Eigen::MatrixXd msg = Eigen::MatrixXd::Zero(q.rows(), q.cols());
  for (std::size_t k = 0; k < model.kernel_specs.size(); ++k) {
    const PermutohedralKernel& kernel = model.kernel(step, static_cast<int>(k));
    const KernelArtifacts& ka = art.kernels[k];
    BilateralPipeline pipe(ka.lattice);

    Eigen::MatrixXd input = q;
    if (symmetric) input.array().colwise() *= ka.sym_scale.array();
    PipelineResult res = pipe.forward_with_tape(input, kernel);
    Eigen::MatrixXd filtered = std::move(res.output);
    if (symmetric) filtered.array().colwise() *= ka.sym_scale.array();

    // Remove the central-weight self response.
    Eigen::VectorXd self_coeff = kernel.at(0, 0, 0) * ka.self_geometry;
    if (symmetric)
      self_coeff.array() *= ka.sym_scale.array() * ka.sym_scale.array();
    filtered -= self_coeff.asDiagonal() * q;

    msg += filtered * model.compat;
    if (tape) {
      tape->filters.push_back(std::move(res.tape));
      tape->self_coeff.push_back(std::move(self_coeff));
    }
  }

  Eigen::MatrixXd q_next(q.rows(), q.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const Eigen::ArrayXd z = -unary.row(i).array() - msg.row(i).array();
    const Eigen::ArrayXd e = (z - z.maxCoeff()).exp();
    q_next.row(i) = (e / e.sum()).matrix();
  }
  if (tape) {
    tape->q_in = q;
    tape->q_out = q_next;
  }
  return q_next;
}

// Reverse of step_forward for Normalization::none. Returns dL/dq_in and
// accumulates kernel gradients.
Eigen::MatrixXd step_backward(const MeanFieldModel& model, const CrfArtifacts& art,
                              const StepTape& tape, const Eigen::MatrixXd& grad_q_out,
                              int step,
                              std::vector<std::vector<PermutohedralKernel>>& bank_grads) {
  const Eigen::MatrixXd& qo = tape.q_out;
  // Softmax backward per row.
  Eigen::MatrixXd dz(qo.rows(), qo.cols());
  for (Eigen::Index i = 0; i < qo.rows(); ++i) {
    const double dot = grad_q_out.row(i).dot(qo.row(i));
    dz.row(i) = qo.row(i).array() * (grad_q_out.row(i).array() - dot);
  }
  const Eigen::MatrixXd dmsg = -dz;

  Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(qo.rows(), qo.cols());
  const int bank = model.loose ? step : 0;
  for (std::size_t k = 0; k < model.kernel_specs.size(); ++k) {
    const Eigen::MatrixXd dfiltered = dmsg * model.compat.transpose();
    // filtered = raw - self_coeff .* q
    dq -= tape.self_coeff[k].asDiagonal() * dfiltered;
    dq += backward_signal(tape.filters[k], dfiltered);

    PermutohedralKernel kgrad = backward_kernel(tape.filters[k], dfiltered);
    // self_coeff = central * geometry: credit the central weight.
    const KernelArtifacts& ka = art.kernels[k];
    double central_extra = 0.0;
    for (Eigen::Index i = 0; i < dfiltered.rows(); ++i)
      central_extra -= ka.self_geometry[i] * dfiltered.row(i).dot(tape.q_in.row(i));
    kgrad.at(0, 0, 0) += central_extra;
    bank_grads[bank][k].weights() += kgrad.weights();
  }
  return dq;
}

}  // namespace

Eigen::MatrixXd mf_step(const MeanFieldModel& model, const CrfArtifacts& art,
                        const Eigen::MatrixXd& unary, const Eigen::MatrixXd& q,
                        int step) {
  return step_forward(model, art, unary, q, step, nullptr);
}

Eigen::MatrixXd mf_inference(const MeanFieldModel& model, const CrfArtifacts& art,
                             const Eigen::MatrixXd& unary, int steps,
                             const Eigen::MatrixXd* init) {
  if (steps < 0) steps = model.steps;
  Eigen::MatrixXd q = init ? *init : init_marginals(unary);
  for (int t = 0; t < steps; ++t) q = mf_step(model, art, unary, q, t);
  return q;
}

double mf_loss(const MeanFieldModel& model, const CrfImage& img,
               const CrfArtifacts& art,
               std::vector<std::vector<PermutohedralKernel>>* bank_grads) {
  if (bank_grads &&
      model.normalization != MeanFieldModel::Normalization::none)
    throw std::invalid_argument("mf_loss: gradients need unnormalized filtering");
  if (img.labels.size() != img.unary.rows())
    throw std::invalid_argument("mf_loss: labels required");

  std::vector<StepTape> tapes(model.steps);
  Eigen::MatrixXd q = init_marginals(img.unary);
  for (int t = 0; t < model.steps; ++t)
    q = step_forward(model, art, img.unary, q, t,
                     bank_grads ? &tapes[t] : nullptr);

  const double inv_n = 1.0 / double(q.rows());
  double loss = 0.0;
  Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(q.rows(), q.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const int label = img.labels[i];
    if (label < 0 || label >= model.labels)
      throw std::invalid_argument("mf_loss: label out of range");
    const double p = std::max(q(i, label), 1e-300);
    loss -= std::log(p) * inv_n;
    dq(i, label) = -inv_n / p;
  }
  if (bank_grads)
    for (int t = model.steps - 1; t >= 0; --t)
      dq = step_backward(model, art, tapes[t], dq, t, *bank_grads);
  return loss;
}

MfTrainResult mf_train(MeanFieldModel& model, const std::vector<CrfImage>& images,
                       const std::vector<CrfArtifacts>& artifacts,
                       const MfTrainConfig& cfg) {
  if (model.normalization != MeanFieldModel::Normalization::none)
    throw std::invalid_argument("mf_train: requires unnormalized filtering");
  if (images.size() != artifacts.size())
    throw std::invalid_argument("mf_train: artifact count mismatch");

  // Gradient buffers mirroring the kernel banks. Parameter pointers are
  // collected only after every buffer exists.
  std::vector<std::vector<PermutohedralKernel>> bank_grads(model.banks.size());
  for (std::size_t b = 0; b < model.banks.size(); ++b)
    for (const PermutohedralKernel& kernel : model.banks[b])
      bank_grads[b].emplace_back(kernel.d(), kernel.s(), kernel.c_in(),
                                 kernel.c_out());
  std::vector<nn::ParamRef> params;
  for (std::size_t b = 0; b < model.banks.size(); ++b)
    for (std::size_t k = 0; k < model.banks[b].size(); ++k)
      params.push_back({model.banks[b][k].weights().data(),
                        bank_grads[b][k].weights().data(),
                        model.banks[b][k].weights().size()});
  nn::Sgd opt(params, cfg.sgd);

  std::vector<int> order(images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x6d66);

  MfTrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    int counted = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch) {
      const int batch =
          static_cast<int>(std::min<std::size_t>(cfg.batch, order.size() - b0));
      opt.zero_grads();
      for (int kimg = 0; kimg < batch; ++kimg) {
        const int id = order[b0 + kimg];
        epoch_loss += mf_loss(model, images[id], artifacts[id], &bank_grads);
        ++counted;
      }
      opt.step(1.0 / batch);
    }
    result.epoch_loss.push_back(epoch_loss / std::max(counted, 1));
  }
  return result;
}

double pixel_accuracy(const Eigen::MatrixXd& q, const Eigen::VectorXi& labels) {
  if (q.rows() != labels.size())
    throw std::invalid_argument("pixel_accuracy: shape mismatch");
  std::int64_t hits = 0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    Eigen::Index best = 0;
    q.row(i).maxCoeff(&best);
    hits += best == labels[i];
  }
  return double(hits) / double(q.rows());
}

}  // namespace phlat::crf
