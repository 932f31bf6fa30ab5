#include "phlat/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace phlat::metrics {

double psnr(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double max_value) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("psnr: shape mismatch");
  const double mse = (a - b).squaredNorm() / double(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(max_value / std::sqrt(mse));
}

double iou(const Eigen::VectorXi& prediction, const Eigen::VectorXi& truth,
           int label) {
  if (prediction.size() != truth.size())
    throw std::invalid_argument("iou: shape mismatch");
  std::int64_t inter = 0, uni = 0;
  for (Eigen::Index i = 0; i < prediction.size(); ++i) {
    const bool p = prediction[i] == label;
    const bool t = truth[i] == label;
    inter += p && t;
    uni += p || t;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

}  // namespace phlat::metrics
