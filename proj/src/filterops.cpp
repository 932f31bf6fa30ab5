#include "phlat/filterops.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

namespace phlat {

OffsetSet::OffsetSet(int d, int s) : d_(d), s_(s) {
  const std::int64_t t = filter_size(d, s);
  if (t > (std::int64_t{1} << 30))
    throw std::invalid_argument("OffsetSet: neighborhood too large");
  t_ = static_cast<int>(t);

  const auto keys = neighbors(LatticeKey::zero(d), s);
  coords_.reserve(keys.size() * (d + 1));
  lookup_ = std::make_unique<LatticeTable>(d, t_);
  for (const LatticeKey& k : keys) {
    coords_.insert(coords_.end(), k.coords().begin(), k.coords().end());
    lookup_->find_or_insert(k.coords());
  }

  negation_.resize(keys.size());
  std::vector<Index> neg(static_cast<std::size_t>(d) + 1);
  for (int o = 0; o < t_; ++o) {
    const auto off = offset(o);
    for (int i = 0; i <= d; ++i) neg[i] = -off[i];
    negation_[o] = lookup_->find(neg);
  }
}

int OffsetSet::find(std::span<const Index> off) const {
  return lookup_->find(off);
}

std::shared_ptr<const OffsetSet> OffsetSet::get(int d, int s) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::weak_ptr<const OffsetSet>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[{d, s}];
  if (auto existing = slot.lock()) return existing;
  std::shared_ptr<const OffsetSet> fresh(new OffsetSet(d, s));
  slot = fresh;
  return fresh;
}

PermutohedralKernel::PermutohedralKernel(int d, int s, int c_in, int c_out)
    : d_(d), s_(s), c_in_(c_in), c_out_(c_out), offsets_(OffsetSet::get(d, s)) {
  if (c_in < 1 || c_out < 1)
    throw std::invalid_argument("PermutohedralKernel: channels >= 1");
  w_ = Eigen::MatrixXd::Zero(c_out, static_cast<Eigen::Index>(t()) * c_in);
}

PermutohedralKernel PermutohedralKernel::delta(int d, int s, int c, double gain) {
  PermutohedralKernel k(d, s, c, c);
  for (int a = 0; a < c; ++a) k.at(a, a, 0) = gain;
  return k;
}

PermutohedralKernel PermutohedralKernel::adjoint() const {
  PermutohedralKernel k(d_, s_, c_out_, c_in_);
  for (int o = 0; o < t(); ++o) {
    const int no = offsets_->negated(o);
    for (int a = 0; a < c_out_; ++a)
      for (int b = 0; b < c_in_; ++b) k.at(b, a, no) = at(a, b, o);
  }
  return k;
}

PermutohedralKernel gaussian_kernel(int d, int s) {
  if (d < 1 || s < 1) throw std::invalid_argument("gaussian_kernel: d, s >= 1");
  PermutohedralKernel k(d, s, 1, 1);
  const auto& off = k.offsets();
  // One lattice edge has squared length d(d+1) in elevated coordinates.
  const double sigma_sq = static_cast<double>(d) * (d + 1);
  double sum = 0.0;
  for (int o = 0; o < k.t(); ++o) {
    double norm_sq = 0.0;
    for (Index c : off.offset(o)) norm_sq += static_cast<double>(c) * c;
    const double w = std::exp(-norm_sq / (2.0 * sigma_sq));
    k.at(0, 0, o) = w;
    sum += w;
  }
  k.weights() /= sum;
  return k;
}

BlurMatrix build_blur_matrix(const LatticeIndex& index, int s) {
  const int d = index.dim();
  BlurMatrix blur;
  blur.offsets = OffsetSet::get(d, s);
  blur.m = index.m();
  const int t = blur.t();
  blur.nbr.assign(static_cast<std::size_t>(t) * blur.m, kMissing);

  const LatticeTable& table = *index.table;
  std::vector<Index> probe(static_cast<std::size_t>(d) + 1);
  for (Index j = 0; j < blur.m; ++j) {
    const auto key = table.key(j);
    blur.nbr[static_cast<std::size_t>(j)] = j;  // zero offset
    for (int o = 1; o < t; ++o) {
      const auto off = blur.offsets->offset(o);
      for (int i = 0; i <= d; ++i) probe[i] = key[i] + off[i];
      blur.nbr[static_cast<std::size_t>(o) * blur.m + j] = table.find(probe);
    }
  }
  return blur;
}

LatticeSignal splat(const LatticeIndex& index, const Eigen::MatrixXd& signal) {
  if (signal.rows() != index.n())
    throw std::invalid_argument("splat: signal row count != point count");
  const int d = index.dim();
  const int n = index.n();
  LatticeSignal out;
  out.values = Eigen::MatrixXd::Zero(index.m(), signal.cols());
  // Channel-outer keeps the column-major accesses contiguous.
  for (int ch = 0; ch < signal.cols(); ++ch) {
    const double* src = signal.col(ch).data();
    double* dst = out.values.col(ch).data();
    for (int i = 0; i < n; ++i) {
      const double v = src[i];
      for (int r = 0; r <= d; ++r) {
        const Index j = index.corners(i, r);
        if (j == kMissing) continue;
        dst[j] += index.weights(i, r) * v;
      }
    }
  }
  return out;
}

namespace {

void check_convolve_shapes(const BlurMatrix& blur, const LatticeSignal& input,
                           const PermutohedralKernel& kernel) {
  if (input.m() != blur.m)
    throw std::invalid_argument("convolve: signal rows != populated points");
  if (blur.offsets->d() != kernel.d() || blur.offsets->s() != kernel.s())
    throw std::invalid_argument("convolve: kernel/blur neighborhood mismatch");
  if (!kernel.scalar() && input.channels() != kernel.c_in())
    throw std::invalid_argument("convolve: channel count != kernel c_in");
}

}  // namespace

LatticeSignal convolve(const BlurMatrix& blur, const LatticeSignal& input,
                       const PermutohedralKernel& kernel,
                       const ConvolveOptions& opts) {
  check_convolve_shapes(blur, input, kernel);
  const int m = blur.m;
  const int t = blur.t();
  const int c_in = kernel.scalar() ? 1 : kernel.c_in();
  const int channels = input.channels();

  const std::size_t row_bytes = sizeof(double) * static_cast<std::size_t>(t) * c_in;
  int block = static_cast<int>(
      std::max<std::size_t>(1, opts.gather_budget_bytes / std::max<std::size_t>(row_bytes, 1)));
  block = std::min(block, std::max(m, 1));

  LatticeSignal out;
  if (kernel.scalar()) {
    out.values.resize(m, channels);
    Eigen::MatrixXd gathered(t, block);
    for (int j0 = 0; j0 < m; j0 += block) {
      const int nb = std::min(block, m - j0);
      for (int ch = 0; ch < channels; ++ch) {
        for (int o = 0; o < t; ++o) {
          const Index* row = blur.nbr.data() + static_cast<std::size_t>(o) * m + j0;
          for (int jj = 0; jj < nb; ++jj) {
            const Index nb_id = row[jj];
            gathered(o, jj) = nb_id == kMissing ? 0.0 : input.values(nb_id, ch);
          }
        }
        out.values.block(j0, ch, nb, 1).noalias() =
            (kernel.weights() * gathered.leftCols(nb)).transpose();
      }
    }
  } else {
    out.values.resize(m, kernel.c_out());
    Eigen::MatrixXd gathered(static_cast<Eigen::Index>(t) * c_in, block);
    for (int j0 = 0; j0 < m; j0 += block) {
      const int nb = std::min(block, m - j0);
      for (int o = 0; o < t; ++o) {
        const Index* row = blur.nbr.data() + static_cast<std::size_t>(o) * m + j0;
        for (int jj = 0; jj < nb; ++jj) {
          const Index nb_id = row[jj];
          for (int b = 0; b < c_in; ++b)
            gathered(static_cast<Eigen::Index>(o) * c_in + b, jj) =
                nb_id == kMissing ? 0.0 : input.values(nb_id, b);
        }
      }
      out.values.middleRows(j0, nb).noalias() =
          (kernel.weights() * gathered.leftCols(nb)).transpose();
    }
  }
  return out;
}

LatticeSignal convolve(const LatticeIndex& index, const LatticeSignal& input,
                       const PermutohedralKernel& kernel,
                       const ConvolveOptions& opts) {
  return convolve(build_blur_matrix(index, kernel.s()), input, kernel, opts);
}

Eigen::MatrixXd slice(const LatticeIndex& index, const LatticeSignal& input,
                      std::int64_t* key_misses) {
  if (input.m() != index.m())
    throw std::invalid_argument("slice: signal rows != populated points");
  const int d = index.dim();
  const int n = index.n();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, input.channels());
  std::int64_t misses = 0;
  for (int i = 0; i < n; ++i)
    for (int r = 0; r <= d; ++r)
      if (index.corners(i, r) == kMissing && index.weights(i, r) > 0.0) ++misses;
  for (int ch = 0; ch < input.channels(); ++ch) {
    const double* src = input.values.col(ch).data();
    double* dst = out.col(ch).data();
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int r = 0; r <= d; ++r) {
        const Index j = index.corners(i, r);
        if (j == kMissing) continue;
        acc += index.weights(i, r) * src[j];
      }
      dst[i] = acc;
    }
  }
  if (key_misses) *key_misses += misses;
  return out;
}

Eigen::MatrixXd bilateral_filter(const FeatureSet& features_in,
                                 const FeatureSet& features_out,
                                 const Eigen::MatrixXd& signal,
                                 const PermutohedralKernel& kernel,
                                 const BilateralOptions& opts) {
  if (features_in.dim() != features_out.dim())
    throw std::invalid_argument("bilateral_filter: feature dimension mismatch");
  if (features_in.dim() != kernel.d())
    throw std::invalid_argument("bilateral_filter: kernel dimension mismatch");

  auto [idx_in, idx_out] = build_joint_index(features_in, features_out);
  const BlurMatrix blur = build_blur_matrix(idx_in, kernel.s());

  auto run = [&](const Eigen::MatrixXd& v) {
    const LatticeSignal splatted = splat(idx_in, v);
    const LatticeSignal blurred = convolve(blur, splatted, kernel, opts.convolve);
    return slice(idx_out, blurred);
  };

  Eigen::MatrixXd out = run(signal);
  if (opts.normalize) {
    const Eigen::MatrixXd norm =
        run(Eigen::MatrixXd::Ones(signal.rows(), signal.cols()));
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      for (Eigen::Index c = 0; c < out.cols(); ++c) {
        double den = norm(i, c);
        if (std::abs(den) < 1e-12) den = den < 0.0 ? -1e-12 : 1e-12;
        out(i, c) /= den;
      }
  }
  return out;
}

}  // namespace phlat
