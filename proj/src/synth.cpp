#include "phlat/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace phlat::synth {

img::Image scene(std::uint64_t seed, int w, int h, int channels) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  img::Image image = img::make_image(w, h, channels);

  // Low-frequency shading.
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<std::vector<Wave>> waves(channels);
  for (int c = 0; c < channels; ++c)
    for (int k = 0; k < 3; ++k)
      waves[c].push_back({(0.5 + 2.0 * unif(rng)) / w, (0.5 + 2.0 * unif(rng)) / h,
                          2 * M_PI * unif(rng), 0.08 + 0.06 * unif(rng)});

  std::vector<double> base(channels);
  for (int c = 0; c < channels; ++c) base[c] = 0.3 + 0.4 * unif(rng);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        double v = base[c];
        for (const Wave& wv : waves[c])
          v += wv.amp * std::sin(2 * M_PI * (wv.fx * x + wv.fy * y) + wv.phase);
        image.at(x, y, c) = v;
      }

  // Flat shapes with crisp borders: rectangles and disks.
  const int shapes = 6 + static_cast<int>(unif(rng) * 5);
  for (int sidx = 0; sidx < shapes; ++sidx) {
    const bool disk = unif(rng) < 0.5;
    std::vector<double> color(channels);
    for (int c = 0; c < channels; ++c) color[c] = 0.15 + 0.7 * unif(rng);
    const double shade = 0.1 * unif(rng);
    if (disk) {
      const double cx = unif(rng) * w, cy = unif(rng) * h;
      const double r = (0.06 + 0.18 * unif(rng)) * std::min(w, h);
      for (int y = std::max(0, int(cy - r) - 1); y < std::min(h, int(cy + r) + 2); ++y)
        for (int x = std::max(0, int(cx - r) - 1); x < std::min(w, int(cx + r) + 2); ++x)
          if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
            for (int c = 0; c < channels; ++c)
              image.at(x, y, c) = color[c] + shade * (y - cy) / std::max(r, 1.0);
    } else {
      const int x0 = static_cast<int>(unif(rng) * (w - 4));
      const int y0 = static_cast<int>(unif(rng) * (h - 4));
      const int bw = 4 + static_cast<int>(unif(rng) * (w / 2));
      const int bh = 4 + static_cast<int>(unif(rng) * (h / 2));
      for (int y = y0; y < std::min(h, y0 + bh); ++y)
        for (int x = x0; x < std::min(w, x0 + bw); ++x)
          for (int c = 0; c < channels; ++c)
            image.at(x, y, c) = color[c] + shade * (x - x0) / double(bw);
    }
  }

  for (int p = 0; p < image.count(); ++p)
    for (int c = 0; c < channels; ++c)
      image.pixels(p, c) = std::clamp(image.pixels(p, c), 0.1, 0.9);
  return image;
}

std::vector<img::Image> scene_set(std::uint64_t seed, int count, int w, int h,
                                  int channels) {
  std::vector<img::Image> set;
  set.reserve(count);
  for (int i = 0; i < count; ++i)
    set.push_back(scene(seed + 1000003ull * (i + 1), w, h, channels));
  return set;
}

img::Image add_gaussian_noise(const img::Image& image, double sigma,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  img::Image out = image;
  for (Eigen::Index i = 0; i < out.pixels.size(); ++i)
    out.pixels.data()[i] += noise(rng);
  return out;
}

std::vector<crf::CrfImage> crf_benchmark(const CrfBenchConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> logit_noise(0.0, cfg.unary_noise);

  nn::TilesDataConfig data;
  data.image_size = cfg.size;
  data.tile_size = cfg.tile;
  data.noise_std = cfg.noise_std;

  std::vector<crf::CrfImage> images;
  images.reserve(cfg.images);
  for (int i = 0; i < cfg.images; ++i) {
    const nn::TileImage tile = nn::make_tile_image(rng, data);
    crf::CrfImage img;
    img.h = tile.h;
    img.w = tile.w;
    img.rgb = tile.rgb;
    img.labels = tile.labels;

    const int n = img.h * img.w;
    Eigen::MatrixXd logits(n, 2);
    for (int p = 0; p < n; ++p) {
      logits(p, 0) = (tile.labels[p] == 0 ? cfg.unary_strength : 0.0) + logit_noise(rng);
      logits(p, 1) = (tile.labels[p] == 1 ? cfg.unary_strength : 0.0) + logit_noise(rng);
    }

    // Solid regions whose unaries argue for the wrong label.
    int flipped = 0;
    const int want = static_cast<int>(cfg.flip_fraction * n);
    while (flipped < want) {
      const int bw = 3 + static_cast<int>(unif(rng) * (cfg.size / 4));
      const int bh = 3 + static_cast<int>(unif(rng) * (cfg.size / 4));
      const int x0 = static_cast<int>(unif(rng) * (cfg.size - bw));
      const int y0 = static_cast<int>(unif(rng) * (cfg.size - bh));
      for (int y = y0; y < y0 + bh; ++y)
        for (int x = x0; x < x0 + bw; ++x) {
          const int p = y * img.w + x;
          const int wrong = 1 - tile.labels[p];
          logits(p, wrong) = cfg.unary_strength + logit_noise(rng);
          logits(p, 1 - wrong) = logit_noise(rng);
          ++flipped;
        }
    }
    img.unary = crf::unary_from_logits(logits);
    images.push_back(std::move(img));
  }
  return images;
}

}  // namespace phlat::synth
