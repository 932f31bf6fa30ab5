#include <stdexcept>
#include <vector>

#include "phlat/autograd.hpp"

// Reference route: assemble S_splat, the per-channel-pair convolution
// blocks and S_slice as explicit dense matrices straight from the lattice
// index, then differentiate the matrix product by hand. Shares only the
// lattice geometry with the fast path, none of its operator code.
namespace phlat {

namespace {

void guard(std::int64_t rows, std::int64_t cols, std::int64_t limit,
           const char* what) {
  if (rows * cols > limit)
    throw std::length_error(std::string("dense_oracle: size guard exceeded for ") +
                            what);
}

Eigen::MatrixXd interpolation_matrix(const LatticeIndex& idx) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(idx.m(), idx.n());
  for (int i = 0; i < idx.n(); ++i)
    for (int r = 0; r <= idx.dim(); ++r) {
      const Index j = idx.corners(i, r);
      if (j != kMissing) s(j, i) += idx.weights(i, r);
    }
  return s;
}

}  // namespace

DenseOracleResult dense_oracle(const FeatureSet& features_in,
                               const FeatureSet& features_out,
                               const Eigen::MatrixXd& signal,
                               const PermutohedralKernel& kernel,
                               const Eigen::MatrixXd* grad_out,
                               std::int64_t max_entries_per_matrix) {
  auto [idx_in, idx_out] = build_joint_index(features_in, features_out);
  const int m = idx_in.m();
  const int d = idx_in.dim();
  guard(m, idx_in.n(), max_entries_per_matrix, "S_splat");
  guard(idx_out.n(), m, max_entries_per_matrix, "S_slice");
  guard(m, m, max_entries_per_matrix, "B");

  DenseOracleResult res;
  res.splat_matrix = interpolation_matrix(idx_in);
  res.slice_matrix = interpolation_matrix(idx_out).transpose();

  // Offsets re-enumerated through the public neighbor op; entry (j, k) of a
  // block is the kernel weight at the offset leading from j to k.
  const std::vector<LatticeKey> offsets = neighbors(LatticeKey::zero(d), kernel.s());
  const int t = static_cast<int>(offsets.size());
  const LatticeTable& table = *idx_in.table;

  const bool scalar = kernel.scalar();
  const int c_in = scalar ? static_cast<int>(signal.cols()) : kernel.c_in();
  const int c_out = scalar ? c_in : kernel.c_out();
  if (!scalar && signal.cols() != kernel.c_in())
    throw std::invalid_argument("dense_oracle: channel mismatch");

  // adjacency[o][j] = dense id of key_j + offset_o, or missing.
  std::vector<std::vector<Index>> adjacency(
      static_cast<std::size_t>(t), std::vector<Index>(static_cast<std::size_t>(m)));
  {
    std::vector<Index> probe(static_cast<std::size_t>(d) + 1);
    for (int o = 0; o < t; ++o)
      for (Index j = 0; j < m; ++j) {
        const auto key = table.key(j);
        for (int i = 0; i <= d; ++i) probe[i] = key[i] + offsets[o][i];
        adjacency[o][j] = table.find(probe);
      }
  }

  auto block = [&](int a, int b) {
    Eigen::MatrixXd mat = Eigen::MatrixXd::Zero(m, m);
    for (int o = 0; o < t; ++o)
      for (Index j = 0; j < m; ++j) {
        const Index k = adjacency[o][j];
        if (k != kMissing) mat(j, k) += scalar ? kernel.at(0, 0, o) : kernel.at(a, b, o);
      }
    return mat;
  };

  if (scalar) {
    res.conv_blocks.push_back(block(0, 0));
  } else {
    for (int a = 0; a < c_out; ++a)
      for (int b = 0; b < c_in; ++b) res.conv_blocks.push_back(block(a, b));
  }

  // Forward: v'_a = S_slice sum_b M_ab S_splat v_b.
  Eigen::MatrixXd splatted = res.splat_matrix * signal;  // m x c_in
  Eigen::MatrixXd mixed = Eigen::MatrixXd::Zero(m, c_out);
  for (int a = 0; a < c_out; ++a)
    for (int b = 0; b < c_in; ++b) {
      const Eigen::MatrixXd& mat =
          scalar ? res.conv_blocks[0] : res.conv_blocks[static_cast<std::size_t>(a) * c_in + b];
      if (scalar && a != b) continue;
      mixed.col(a) += mat * splatted.col(b);
    }
  res.forward = res.slice_matrix * mixed;

  if (grad_out) {
    if (grad_out->rows() != res.forward.rows() ||
        grad_out->cols() != res.forward.cols())
      throw std::invalid_argument("dense_oracle: grad_out shape mismatch");
    const Eigen::MatrixXd up = res.slice_matrix.transpose() * (*grad_out);  // m x c_out

    res.grad_signal = Eigen::MatrixXd::Zero(signal.rows(), signal.cols());
    for (int b = 0; b < c_in; ++b) {
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(m);
      for (int a = 0; a < c_out; ++a) {
        if (scalar && a != b) continue;
        const Eigen::MatrixXd& mat =
            scalar ? res.conv_blocks[0] : res.conv_blocks[static_cast<std::size_t>(a) * c_in + b];
        acc += mat.transpose() * up.col(a);
      }
      res.grad_signal.col(b) = res.splat_matrix.transpose() * acc;
    }

    res.grad_kernel = PermutohedralKernel(kernel.d(), kernel.s(), kernel.c_in(),
                                          kernel.c_out());
    for (int o = 0; o < t; ++o)
      for (Index j = 0; j < m; ++j) {
        const Index k = adjacency[o][j];
        if (k == kMissing) continue;
        if (scalar) {
          double acc = 0.0;
          for (int ch = 0; ch < c_in; ++ch) acc += up(j, ch) * splatted(k, ch);
          res.grad_kernel.at(0, 0, o) += acc;
        } else {
          for (int a = 0; a < c_out; ++a)
            for (int b = 0; b < c_in; ++b)
              res.grad_kernel.at(a, b, o) += up(j, a) * splatted(k, b);
        }
      }
  }
  return res;
}

}  // namespace phlat
