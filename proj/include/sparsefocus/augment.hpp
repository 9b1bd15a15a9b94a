#pragma once

#include <cstdint>

#include "sparsefocus/image.hpp"
#include "sparsefocus/rng.hpp"

namespace sf {

struct AugmentConfig {
  double brightness_lo = 0.9, brightness_hi = 1.4;
  double contrast_lo = 0.8, contrast_hi = 1.5;
};

struct AugmentFactors {
  double brightness = 1.0;
  double contrast = 1.0;
};

inline AugmentFactors draw_augment(std::uint64_t seed, const AugmentConfig& cfg = {}) {
  Rng rng(derive_seed(seed, 0xA06));
  AugmentFactors f;
  f.brightness = rng.uniform(cfg.brightness_lo, cfg.brightness_hi);
  f.contrast = rng.uniform(cfg.contrast_lo, cfg.contrast_hi);
  return f;
}

/// Brightness scaling, then contrast stretch about the scaled mean, then clip.
inline Image augment(const Image& img, const AugmentFactors& f) {
  Image out = img;
  if (f.brightness != 1.0) {
    for (float& v : out.pixels()) v = static_cast<float>(v * f.brightness);
  }
  if (f.contrast != 1.0) {
    const double mu = out.mean();
    for (float& v : out.pixels()) v = static_cast<float>((v - mu) * f.contrast + mu);
  }
  out.clip01();
  return out;
}

inline Image augment(const Image& img, std::uint64_t seed, const AugmentConfig& cfg = {}) {
  return augment(img, draw_augment(seed, cfg));
}

}  // namespace sf
