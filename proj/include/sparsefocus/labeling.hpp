#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "sparsefocus/errors.hpp"
#include "sparsefocus/image.hpp"
#include "sparsefocus/optics.hpp"
#include "sparsefocus/sharpness.hpp"

namespace sf {

struct Region {
  std::size_t y0 = 0, x0 = 0, height = 0, width = 0;
};

inline Region full_region(const Image& img) { return {0, 0, img.height(), img.width()}; }

enum class LabelStatus { ok, boundary, flat };

inline std::string_view to_string(LabelStatus s) {
  switch (s) {
    case LabelStatus::ok: return "ok";
    case LabelStatus::boundary: return "boundary";
    case LabelStatus::flat: return "flat";
  }
  return "?";
}

inline LabelStatus parse_label_status(std::string_view s) {
  if (s == "ok") return LabelStatus::ok;
  if (s == "boundary") return LabelStatus::boundary;
  if (s == "flat") return LabelStatus::flat;
  throw IoError("unknown label status '" + std::string(s) + "'");
}

/// Stack coordinate of the sharpest plane for one image region.
struct FocusLabel {
  double focus_um = 0.0;
  LabelStatus status = LabelStatus::ok;
  std::size_t argmax_slice = 0;
};

struct LabelConfig {
  SharpnessMethod method = SharpnessMethod::tenengrad;
  // A curve whose (max - min) / max falls below this is reported as flat.
  double flat_rel_tol = 0.1;
};

inline std::vector<double> sharpness_curve(const ZStack& stack, const Region& region, SharpnessMethod method) {
  std::vector<double> curve;
  curve.reserve(stack.slices.size());
  for (const Image& s : stack.slices) {
    curve.push_back(sharpness(s.crop(region.y0, region.x0, region.height, region.width), method));
  }
  return curve;
}

/// Sub-slice vertex of the parabola through (k-1, k, k+1), as an offset in
/// slice units clamped to [-0.5, 0.5].
inline double parabolic_offset(double left, double centre, double right) {
  const double denom = left - 2.0 * centre + right;
  if (!(denom < 0.0)) return 0.0;
  return std::clamp(0.5 * (left - right) / denom, -0.5, 0.5);
}

inline FocusLabel label_from_curve(const std::vector<double>& curve, const std::vector<double>& z_um,
                                   double flat_rel_tol) {
  if (curve.size() < 3 || curve.size() != z_um.size()) {
    throw ShapeError("label_focal_plane", "slices", "need at least 3 slices with matching coordinates");
  }
  const auto it = std::max_element(curve.begin(), curve.end());
  const auto k = static_cast<std::size_t>(it - curve.begin());
  const double hi = *it, lo = *std::min_element(curve.begin(), curve.end());
  FocusLabel out;
  out.argmax_slice = k;
  out.focus_um = z_um[k];
  if (!(hi > 0.0) || (hi - lo) <= flat_rel_tol * hi) {
    out.status = LabelStatus::flat;
    return out;
  }
  if (k == 0 || k + 1 == curve.size()) {
    out.status = LabelStatus::boundary;
    return out;
  }
  const double step = z_um[k + 1] - z_um[k];
  out.focus_um = std::clamp(z_um[k] + step * parabolic_offset(curve[k - 1], curve[k], curve[k + 1]),
                            z_um.front(), z_um.back());
  return out;
}

inline FocusLabel label_focal_plane(const ZStack& stack, const Region& region, const LabelConfig& cfg = {}) {
  if (stack.slices.empty()) throw ShapeError("label_focal_plane", "slices", "empty stack");
  const Image& first = stack.slices.front();
  if (region.height == 0 || region.width == 0 || region.y0 + region.height > first.height() ||
      region.x0 + region.width > first.width()) {
    throw ShapeError("label_focal_plane", "region", "region outside image bounds");
  }
  return label_from_curve(sharpness_curve(stack, region, cfg.method), stack.defocus_um, cfg.flat_rel_tol);
}

/// Per-pixel standard deviation over the 5x5 window (truncated at the border).
inline Image local_std(const Image& img, std::size_t radius = 2) {
  const std::size_t h = img.height(), w = img.width();
  std::vector<double> s((h + 1) * (w + 1), 0.0), s2((h + 1) * (w + 1), 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double v = img(y, x);
      s[(y + 1) * (w + 1) + x + 1] = v + s[y * (w + 1) + x + 1] + s[(y + 1) * (w + 1) + x] - s[y * (w + 1) + x];
      s2[(y + 1) * (w + 1) + x + 1] =
          v * v + s2[y * (w + 1) + x + 1] + s2[(y + 1) * (w + 1) + x] - s2[y * (w + 1) + x];
    }
  auto box = [&](const std::vector<double>& t, std::size_t ya, std::size_t xa, std::size_t yb, std::size_t xb) {
    return t[yb * (w + 1) + xb] - t[ya * (w + 1) + xb] - t[yb * (w + 1) + xa] + t[ya * (w + 1) + xa];
  };
  Image out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t ya = y >= radius ? y - radius : 0, xa = x >= radius ? x - radius : 0;
      const std::size_t yb = std::min(h, y + radius + 1), xb = std::min(w, x + radius + 1);
      const double n = static_cast<double>((yb - ya) * (xb - xa));
      const double m = box(s, ya, xa, yb, xb) / n;
      const double var = box(s2, ya, xa, yb, xb) / n - m * m;
      out(y, x) = static_cast<float>(std::sqrt(std::max(0.0, var)));
    }
  return out;
}

struct RichnessConfig {
  double tau_c = 0.05;
  // Local-std level above which a pixel counts as foreground.
  double std_threshold = 0.047;
};

/// G x G binary content-richness grid, row-major.
struct RichnessMatrix {
  std::size_t grid = 0;
  std::vector<float> cells;
  float operator()(std::size_t i, std::size_t j) const { return cells[i * grid + j]; }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](float v) { return v > 0.5f; }));
  }
};

inline RichnessMatrix content_richness(const Image& in_focus, std::size_t grid, const RichnessConfig& cfg = {}) {
  if (grid == 0 || in_focus.height() % grid != 0 || in_focus.width() % grid != 0) {
    throw ShapeError("content_richness", "grid", "image side must be divisible by G");
  }
  const Image sd = local_std(in_focus);
  const double thr = cfg.std_threshold;
  const std::size_t ch = in_focus.height() / grid, cw = in_focus.width() / grid;
  RichnessMatrix out{grid, std::vector<float>(grid * grid, 0.0f)};
  for (std::size_t i = 0; i < grid; ++i)
    for (std::size_t j = 0; j < grid; ++j) {
      std::size_t fg = 0;
      for (std::size_t y = i * ch; y < (i + 1) * ch; ++y)
        for (std::size_t x = j * cw; x < (j + 1) * cw; ++x) fg += sd(y, x) > thr ? 1 : 0;
      const double frac = static_cast<double>(fg) / static_cast<double>(ch * cw);
      out.cells[i * grid + j] = frac >= cfg.tau_c ? 1.0f : 0.0f;
    }
  return out;
}

}  // namespace sf
