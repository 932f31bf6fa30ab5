#include "phlat/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace phlat::img {

namespace {

[[noreturn]] void fail(const std::string& path, std::int64_t offset,
                       const std::string& what) {
  throw std::runtime_error(path + ": " + what + " at byte " +
                           std::to_string(offset));
}

// Header tokens separated by whitespace; '#' starts a comment.
int read_header_int(std::ifstream& in, const std::string& path) {
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
    } else if (!std::isspace(c)) {
      break;
    }
  }
  if (c == EOF) fail(path, in.tellg(), "truncated header");
  int value = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) fail(path, std::int64_t(in.tellg()) - 1, "expected integer");
  return value;
}

}  // namespace

Image make_image(int w, int h, int channels) {
  Image img;
  img.w = w;
  img.h = h;
  img.pixels = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(w) * h, channels);
  return img;
}

Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open");
  char p, kind;
  in.get(p);
  in.get(kind);
  if (!in || p != 'P' || (kind != '5' && kind != '6'))
    fail(path, 0, "not a binary PGM/PPM (P5/P6)");
  const int channels = kind == '6' ? 3 : 1;
  const int w = read_header_int(in, path);
  const int h = read_header_int(in, path);
  const int maxval = read_header_int(in, path);
  if (w < 1 || h < 1) fail(path, in.tellg(), "bad dimensions");
  if (maxval != 255) fail(path, in.tellg(), "only 8-bit images supported");

  Image img = make_image(w, h, channels);
  const std::size_t bytes = static_cast<std::size_t>(w) * h * channels;
  std::vector<unsigned char> raw(bytes);
  const std::int64_t payload_at = in.tellg();
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes)
    fail(path, payload_at + in.gcount(), "truncated pixel data");
  for (int p_i = 0; p_i < w * h; ++p_i)
    for (int c = 0; c < channels; ++c)
      img.pixels(p_i, c) = raw[static_cast<std::size_t>(p_i) * channels + c] / 255.0;
  return img;
}

void write_pnm(const std::string& path, const Image& image) {
  if (image.channels() != 1 && image.channels() != 3)
    throw std::invalid_argument(path + ": only 1- or 3-channel images");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << (image.channels() == 3 ? "P6" : "P5") << "\n"
      << image.w << " " << image.h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(image.count()) *
                                 image.channels());
  for (int p = 0; p < image.count(); ++p)
    for (int c = 0; c < image.channels(); ++c) {
      const double v = std::clamp(image.pixels(p, c), 0.0, 1.0);
      raw[static_cast<std::size_t>(p) * image.channels() + c] =
          static_cast<unsigned char>(std::lround(v * 255.0));
    }
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error(path + ": write failed");
}

Image to_gray(const Image& image) {
  if (image.channels() == 1) return image;
  Image gray = make_image(image.w, image.h, 1);
  gray.pixels.col(0) = 0.299 * image.pixels.col(0) +
                       0.587 * image.pixels.col(1) +
                       0.114 * image.pixels.col(2);
  return gray;
}

Image box_downsample(const Image& image, int factor) {
  if (factor < 1 || image.w % factor != 0 || image.h % factor != 0)
    throw std::invalid_argument("box_downsample: dimensions not divisible");
  Image low = make_image(image.w / factor, image.h / factor, image.channels());
  const double inv = 1.0 / double(factor * factor);
  for (int y = 0; y < low.h; ++y)
    for (int x = 0; x < low.w; ++x)
      for (int c = 0; c < image.channels(); ++c) {
        double acc = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            acc += image.at(x * factor + dx, y * factor + dy, c);
        low.at(x, y, c) = acc * inv;
      }
  return low;
}

namespace {

double catmull_rom(double x) {
  const double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

}  // namespace

Image bicubic_upsample(const Image& image, int factor) {
  Image up = make_image(image.w * factor, image.h * factor, image.channels());
  for (int y = 0; y < up.h; ++y) {
    const double sy = (y + 0.5) / factor - 0.5;
    const int iy = static_cast<int>(std::floor(sy));
    for (int x = 0; x < up.w; ++x) {
      const double sx = (x + 0.5) / factor - 0.5;
      const int ix = static_cast<int>(std::floor(sx));
      for (int c = 0; c < image.channels(); ++c) {
        double acc = 0.0;
        double wsum = 0.0;
        for (int ky = -1; ky <= 2; ++ky) {
          const int cy = std::clamp(iy + ky, 0, image.h - 1);
          const double wy = catmull_rom(sy - (iy + ky));
          for (int kx = -1; kx <= 2; ++kx) {
            const int cx = std::clamp(ix + kx, 0, image.w - 1);
            const double w = wy * catmull_rom(sx - (ix + kx));
            acc += w * image.at(cx, cy, c);
            wsum += w;
          }
        }
        up.at(x, y, c) = acc / wsum;
      }
    }
  }
  return up;
}

}  // namespace phlat::img
