#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "phlat/filterops.hpp"

// Binary tensor container: magic "PHLT", version u16, rank u16, dims u64
// each, then row-major f64 payload, all little-endian. Kernel checkpoints
// ("PHLK") add the lattice geometry and feature scales in front of the
// weight payload. Format violations report the offending byte offset.
namespace phlat::io {

struct TensorData {
  std::vector<std::uint64_t> dims;
  std::vector<double> values;  // row-major

  std::uint64_t count() const {
    std::uint64_t n = 1;
    for (std::uint64_t d : dims) n *= d;
    return n;
  }
};

void write_tensor(const std::string& path, const TensorData& tensor);
TensorData read_tensor(const std::string& path);

// Rank-2 helpers.
void write_matrix(const std::string& path, const Eigen::MatrixXd& m);
Eigen::MatrixXd read_matrix(const std::string& path);

struct KernelCheckpoint {
  PermutohedralKernel kernel;
  Eigen::VectorXd scales;  // feature scaling D, one entry per dimension
};

void write_kernel_checkpoint(const std::string& path,
                             const PermutohedralKernel& kernel,
                             const Eigen::VectorXd& scales);
KernelCheckpoint read_kernel_checkpoint(const std::string& path);

}  // namespace phlat::io
