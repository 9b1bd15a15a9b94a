#pragma once

#include <string>
#include <string_view>

#include "sparsefocus/errors.hpp"
#include "sparsefocus/image.hpp"

namespace sf {

enum class SharpnessMethod { tenengrad, varlap, brenner };

inline std::string_view to_string(SharpnessMethod m) {
  switch (m) {
    case SharpnessMethod::tenengrad: return "tenengrad";
    case SharpnessMethod::varlap: return "varlap";
    case SharpnessMethod::brenner: return "brenner";
  }
  return "?";
}

inline SharpnessMethod parse_sharpness(std::string_view s) {
  if (s == "tenengrad") return SharpnessMethod::tenengrad;
  if (s == "varlap") return SharpnessMethod::varlap;
  if (s == "brenner") return SharpnessMethod::brenner;
  throw ConfigError("unknown sharpness method '" + std::string(s) + "'");
}

// Mean squared Sobel gradient magnitude over interior pixels.
inline double tenengrad(const Image& img) {
  const std::size_t h = img.height(), w = img.width();
  double acc = 0.0;
  for (std::size_t y = 1; y + 1 < h; ++y)
    for (std::size_t x = 1; x + 1 < w; ++x) {
      const double gx = (img(y - 1, x + 1) + 2.0 * img(y, x + 1) + img(y + 1, x + 1)) -
                        (img(y - 1, x - 1) + 2.0 * img(y, x - 1) + img(y + 1, x - 1));
      const double gy = (img(y + 1, x - 1) + 2.0 * img(y + 1, x) + img(y + 1, x + 1)) -
                        (img(y - 1, x - 1) + 2.0 * img(y - 1, x) + img(y - 1, x + 1));
      acc += gx * gx + gy * gy;
    }
  return acc / static_cast<double>((h - 2) * (w - 2));
}

// Variance of the 4-neighbour Laplacian over interior pixels.
inline double varlap(const Image& img) {
  const std::size_t h = img.height(), w = img.width();
  double s = 0.0, s2 = 0.0;
  for (std::size_t y = 1; y + 1 < h; ++y)
    for (std::size_t x = 1; x + 1 < w; ++x) {
      const double l = static_cast<double>(img(y - 1, x)) + img(y + 1, x) + img(y, x - 1) + img(y, x + 1) -
                       4.0 * img(y, x);
      s += l;
      s2 += l * l;
    }
  const double n = static_cast<double>((h - 2) * (w - 2));
  const double mean = s / n;
  return std::max(0.0, s2 / n - mean * mean);
}

// Mean of horizontal (I[x+2] - I[x])^2 over all valid offsets.
inline double brenner(const Image& img) {
  const std::size_t h = img.height(), w = img.width();
  double acc = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x + 2 < w; ++x) {
      const double d = static_cast<double>(img(y, x + 2)) - img(y, x);
      acc += d * d;
    }
  return acc / static_cast<double>(h * (w - 2));
}

inline double sharpness(const Image& img, SharpnessMethod method = SharpnessMethod::tenengrad) {
  if (img.height() < 3 || img.width() < 3) {
    throw ShapeError("sharpness", img.height() < 3 ? "height" : "width", "image must be at least 3x3");
  }
  switch (method) {
    case SharpnessMethod::tenengrad: return tenengrad(img);
    case SharpnessMethod::varlap: return varlap(img);
    case SharpnessMethod::brenner: return brenner(img);
  }
  return 0.0;
}

}  // namespace sf
