#pragma once

#include <cstdint>
#include <vector>

#include "phlat/crf.hpp"
#include "phlat/image.hpp"
#include "phlat/nn.hpp"

// Seeded stand-ins for external datasets: piecewise-smooth scenes for the
// filtering benchmarks and a tiles-style labeling task with corrupted
// unaries for the CRF benchmark.
namespace phlat::synth {

// Smooth shaded background with overlapping flat-ish shapes; crisp edges
// plus gentle gradients, values kept inside [0.1, 0.9] so additive noise
// rarely clips.
img::Image scene(std::uint64_t seed, int w, int h, int channels);

std::vector<img::Image> scene_set(std::uint64_t seed, int count, int w, int h,
                                  int channels);

img::Image add_gaussian_noise(const img::Image& image, double sigma,
                              std::uint64_t seed);

struct CrfBenchConfig {
  int images = 40;
  int size = 32;
  int tile = 12;
  double noise_std = 0.02;     // image noise
  double unary_strength = 2.0; // logit magnitude of the true label
  double unary_noise = 1.5;    // per-pixel logit noise
  double flip_fraction = 0.10; // area covered by label-flipped regions
  std::uint64_t seed = 1;
};

// Tile images with unaries built from true-label logits plus noise, and
// solid rectangles whose unaries argue for the wrong label.
std::vector<crf::CrfImage> crf_benchmark(const CrfBenchConfig& cfg);

}  // namespace phlat::synth
