#pragma once

#include <Eigen/Core>

// PSNR = 20 log10(max / RMSE), IoU = |intersection| / |union|.
namespace phlat::metrics {

// Identical inputs report +infinity.
double psnr(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
            double max_value = 1.0);

double iou(const Eigen::VectorXi& prediction, const Eigen::VectorXi& truth,
           int label);

}  // namespace phlat::metrics
