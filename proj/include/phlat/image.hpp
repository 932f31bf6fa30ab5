#pragma once

#include <Eigen/Core>

#include <string>

// 8-bit binary PGM (P5) and PPM (P6) in, doubles in [0, 1] out, and the
// resampling helpers the upsampling pipeline needs.
namespace phlat::img {

struct Image {
  int w = 0;
  int h = 0;
  Eigen::MatrixXd pixels;  // (h*w) x channels, row-major pixel order

  int channels() const { return static_cast<int>(pixels.cols()); }
  int count() const { return w * h; }
  double& at(int x, int y, int c) { return pixels(y * w + x, c); }
  double at(int x, int y, int c) const { return pixels(y * w + x, c); }
};

Image make_image(int w, int h, int channels);

Image read_pnm(const std::string& path);
void write_pnm(const std::string& path, const Image& image);

// Luma 0.299 R + 0.587 G + 0.114 B; gray images pass through.
Image to_gray(const Image& image);

// Box average over factor x factor blocks; requires divisible dimensions.
Image box_downsample(const Image& image, int factor);

// Catmull-Rom (a = -0.5) with clamp-to-edge sampling.
Image bicubic_upsample(const Image& image, int factor);

}  // namespace phlat::img
