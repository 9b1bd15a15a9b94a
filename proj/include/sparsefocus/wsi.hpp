#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sparsefocus/baselines.hpp"
#include "sparsefocus/json_fields.hpp"
#include "sparsefocus/metrics.hpp"
#include "sparsefocus/optics.hpp"

namespace sf {

/// Row-major R x C grid of heights (µm).
struct Grid2 {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  Grid2() = default;
  Grid2(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}
  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

enum class SurfaceKind { plane, bumpy };

inline std::string_view to_string(SurfaceKind k) { return k == SurfaceKind::plane ? "plane" : "bumpy"; }

inline SurfaceKind parse_surface(std::string_view s) {
  if (s == "plane") return SurfaceKind::plane;
  if (s == "bumpy") return SurfaceKind::bumpy;
  throw ConfigError("unknown surface kind '" + std::string(s) + "'");
}

struct SurfaceParams {
  SurfaceKind kind = SurfaceKind::bumpy;
  std::size_t rows = 20, cols = 20;
  // Plane z = a*col + b*row + c (µm per tile).
  double a = 0.0, b = 0.0, c = 0.0;
  // Peak-to-peak height of the bump field added on top of the plane.
  double amplitude_um = 8.0;
  std::size_t bumps = 6;
  double bump_sigma_tiles = 3.0;
  double z_limit_um = 25.0;
};

/// Heights are rounded to this grid so stage arithmetic on them is exact.
inline constexpr double kHeightQuantum = 1.0 / 65536.0;

inline double quantize_height(double z) { return std::round(z / kHeightQuantum) * kHeightQuantum; }

struct FocalSurface {
  SurfaceKind kind = SurfaceKind::plane;
  Grid2 z;
};

/// Plane plus (for bumpy) a seeded sum of signed Gaussian bumps rescaled to
/// the requested peak-to-peak amplitude and zero mean.
inline FocalSurface gen_surface(const SurfaceParams& p, std::uint64_t seed) {
  if (p.rows == 0 || p.cols == 0) throw ConfigError("gen_surface: empty tile grid");
  if (p.amplitude_um < 0.0) throw ConfigError("gen_surface: negative amplitude");
  FocalSurface s;
  s.kind = p.kind;
  s.z = Grid2(p.rows, p.cols);
  Grid2 field(p.rows, p.cols);
  if (p.kind == SurfaceKind::bumpy && p.amplitude_um > 0.0 && p.bumps > 0) {
    Rng rng(derive_seed(seed, 0xB0B));
    for (std::size_t k = 0; k < p.bumps; ++k) {
      const double cy = rng.uniform(0.0, static_cast<double>(p.rows - 1));
      const double cx = rng.uniform(0.0, static_cast<double>(p.cols - 1));
      const double w = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 1.0);
      const double sg = p.bump_sigma_tiles * rng.uniform(0.7, 1.3);
      for (std::size_t r = 0; r < p.rows; ++r)
        for (std::size_t c = 0; c < p.cols; ++c) {
          const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
          field(r, c) += w * std::exp(-(dx * dx + dy * dy) / (2.0 * sg * sg));
        }
    }
    const auto [lo, hi] = std::minmax_element(field.v.begin(), field.v.end());
    const double span = *hi - *lo;
    if (span > 0.0) {
      const double mid = 0.5 * (*hi + *lo);
      for (double& v : field.v) v = (v - mid) * p.amplitude_um / span;
    } else {
      std::fill(field.v.begin(), field.v.end(), 0.0);
    }
  }
  for (std::size_t r = 0; r < p.rows; ++r)
    for (std::size_t c = 0; c < p.cols; ++c) {
      const double z = p.a * static_cast<double>(c) + p.b * static_cast<double>(r) + p.c + field(r, c);
      if (std::abs(z) > p.z_limit_um) throw ConfigError("gen_surface: surface leaves the +-z range");
      s.z(r, c) = quantize_height(z);
    }
  return s;
}

/// Stage visit order: row-major with alternating direction.
inline std::vector<std::pair<std::size_t, std::size_t>> serpentine_path(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw ConfigError("serpentine_path: empty grid");
  std::vector<std::pair<std::size_t, std::size_t>> path;
  path.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < cols; ++k) path.emplace_back(r, r % 2 == 0 ? k : cols - 1 - k);
  return path;
}

struct SparsityMixture {
  double dense = 0.2, sparse = 0.5, ex_sparse = 0.3;
};

/// A slide: focal surface plus one independent specimen per tile.
class SlideSim {
 public:
  SlideSim(FocalSurface surface, OpticsConfig optics, SparsityMixture mix, std::uint64_t seed)
      : surface_(std::move(surface)), optics_(optics), seed_(seed) {
    const double total = mix.dense + mix.sparse + mix.ex_sparse;
    if (!(total > 0.0) || mix.dense < 0 || mix.sparse < 0 || mix.ex_sparse < 0) {
      throw ConfigError("wsi: sparsity mixture weights must be non-negative with a positive sum");
    }
    const std::size_t n = surface_.z.rows * surface_.z.cols;
    classes_.resize(n);
    scenes_.resize(n);
    Rng rng(derive_seed(seed, 0x711E));
    for (auto& cls : classes_) {
      const double u = rng.uniform() * total;
      cls = u < mix.dense ? Sparsity::dense : (u < mix.dense + mix.sparse ? Sparsity::sparse : Sparsity::ex_sparse);
    }
  }

  const FocalSurface& surface() const noexcept { return surface_; }
  const OpticsConfig& optics() const noexcept { return optics_; }
  std::size_t rows() const noexcept { return surface_.z.rows; }
  std::size_t cols() const noexcept { return surface_.z.cols; }
  Sparsity tile_class(std::size_t r, std::size_t c) const { return classes_[r * cols() + c]; }

  const Scene& scene(std::size_t r, std::size_t c) {
    auto& slot = scenes_[r * cols() + c];
    if (!slot) {
      slot = std::make_unique<Scene>(
          gen_specimen(tile_class(r, c), optics_.image_px, derive_seed(seed_, 0x7111E, r * cols() + c)));
    }
    return *slot;
  }

  /// Signed defocus the camera sees at stage height z over tile (r, c).
  double defocus(std::size_t r, std::size_t c, double z_um) const { return z_um - surface_.z(r, c); }

  FocusProbe probe(std::size_t r, std::size_t c) {
    return simulated_probe(scene(r, c), optics_, surface_.z(r, c), derive_seed(seed_, 0xCA93, r * cols() + c));
  }

 private:
  FocalSurface surface_;
  OpticsConfig optics_;
  std::uint64_t seed_;
  std::vector<Sparsity> classes_;
  std::vector<std::unique_ptr<Scene>> scenes_;
};

enum class MapSource { truth, kfp_interp, one_shot };

inline std::string_view to_string(MapSource s) {
  switch (s) {
    case MapSource::truth: return "ground-truth";
    case MapSource::kfp_interp: return "kfp-interp";
    case MapSource::one_shot: return "one-shot";
  }
  return "?";
}

struct FocusMap {
  MapSource source = MapSource::truth;
  Grid2 z;
  std::vector<std::uint8_t> flagged;  // per tile: truncated KFP or estimator fallback
  std::size_t exposures = 0;
  std::size_t z_moves = 0;
  std::size_t key_points = 0;
};

inline FocusMap truth_map(const FocalSurface& s) {
  FocusMap m;
  m.source = MapSource::truth;
  m.z = s.z;
  m.flagged.assign(s.z.v.size(), 0);
  return m;
}

/// Key-point row/column indices: every `spacing` tiles plus the last one.
inline std::vector<std::size_t> key_indices(std::size_t n, std::size_t spacing) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; i += spacing) idx.push_back(i);
  if (idx.back() != n - 1) idx.push_back(n - 1);
  return idx;
}

/// Hill-climbs at every key point, then fills the map by bilinear
/// interpolation between the surrounding key points.
inline FocusMap kfp_focusmap(SlideSim& slide, std::size_t spacing, const HillClimbConfig& hc, double z0_um = 0.0) {
  if (spacing < 2) throw ConfigError("kfp_focusmap: spacing must be at least 2");
  const auto kr = key_indices(slide.rows(), spacing), kc = key_indices(slide.cols(), spacing);
  FocusMap m;
  m.source = MapSource::kfp_interp;
  m.z = Grid2(slide.rows(), slide.cols());
  m.flagged.assign(m.z.v.size(), 0);
  Grid2 key(kr.size(), kc.size());
  for (std::size_t i = 0; i < kr.size(); ++i)
    for (std::size_t j = 0; j < kc.size(); ++j) {
      FocusProbe probe = slide.probe(kr[i], kc[j]);
      const HillClimbResult res = hillclimb(probe, z0_um, hc);
      key(i, j) = res.z_best_um;
      m.exposures += probe.captures();
      m.z_moves += res.evaluations;
      ++m.key_points;
      if (res.truncated) m.flagged[kr[i] * slide.cols() + kc[j]] = 1;
    }
  auto bracket = [](const std::vector<std::size_t>& keys, std::size_t x) {
    std::size_t k = 0;
    while (k + 2 < keys.size() && keys[k + 1] <= x) ++k;
    if (keys.size() == 1) return std::pair<std::size_t, double>{0, 0.0};
    const double t = static_cast<double>(x - keys[k]) / static_cast<double>(keys[k + 1] - keys[k]);
    return std::pair<std::size_t, double>{k, t};
  };
  for (std::size_t r = 0; r < slide.rows(); ++r) {
    const auto [i, ty] = bracket(kr, r);
    for (std::size_t c = 0; c < slide.cols(); ++c) {
      const auto [j, tx] = bracket(kc, c);
      const std::size_t i1 = std::min(i + 1, kr.size() - 1), j1 = std::min(j + 1, kc.size() - 1);
      const double top = key(i, j) * (1 - tx) + key(i, j1) * tx;
      const double bot = key(i1, j) * (1 - tx) + key(i1, j1) * tx;
      m.z(r, c) = top * (1 - ty) + bot * ty;
    }
  }
  return m;
}

struct TileEstimate {
  double d_um = 0.0;
  bool used_fallback = false;
};

/// Estimator for one tile image. `true_defocus_um` is supplied so an oracle
/// can be plugged in; learned estimators ignore it.
using TileEstimator = std::function<TileEstimate(const Image& image, double true_defocus_um)>;

inline TileEstimator oracle_estimator() {
  return [](const Image&, double d) { return TileEstimate{d, false}; };
}

/// One exposure per tile in serpentine order, each taken at the previous
/// tile's estimated focus (the first at z0_um); tile focus = z - d_hat.
inline FocusMap oneshot_focusmap(SlideSim& slide, const TileEstimator& estimator, double z0_um = 0.0) {
  FocusMap m;
  m.source = MapSource::one_shot;
  m.z = Grid2(slide.rows(), slide.cols());
  m.flagged.assign(m.z.v.size(), 0);
  const double lim = slide.optics().z_range_um;
  double z = z0_um;
  for (auto [r, c] : serpentine_path(slide.rows(), slide.cols())) {
    FocusProbe probe = slide.probe(r, c);
    const Image img = probe.capture(z);
    const TileEstimate est = estimator(img, slide.defocus(r, c, z));
    const double focus = std::clamp(z - est.d_um, -lim, lim);
    m.z(r, c) = focus;
    m.flagged[r * slide.cols() + c] = est.used_fallback ? 1 : 0;
    m.exposures += probe.captures();
    ++m.z_moves;
    z = focus;
  }
  return m;
}

struct ErrorMap {
  Grid2 abs_error;
  double mean = 0.0;
  double max = 0.0;
};

inline ErrorMap error_map(const FocusMap& map, const FocalSurface& truth) {
  if (map.z.rows != truth.z.rows || map.z.cols != truth.z.cols) {
    throw ShapeError("error_map", map.z.rows != truth.z.rows ? "rows" : "cols", "map and surface differ in size");
  }
  ErrorMap e;
  e.abs_error = Grid2(map.z.rows, map.z.cols);
  double s = 0.0;
  for (std::size_t i = 0; i < map.z.v.size(); ++i) {
    const double d = std::abs(map.z.v[i] - truth.z.v[i]);
    e.abs_error.v[i] = d;
    s += d;
    e.max = std::max(e.max, d);
  }
  e.mean = s / static_cast<double>(map.z.v.size());
  return e;
}

inline std::string grid_csv(const Grid2& g) {
  std::string out;
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t c = 0; c < g.cols; ++c) {
      if (c) out += ',';
      out += detail::fmt(g(r, c));
    }
    out += '\n';
  }
  return out;
}

inline Image grid_image(const Grid2& g) {
  Image img(g.rows, g.cols);
  for (std::size_t i = 0; i < g.v.size(); ++i) img.pixels()[i] = static_cast<float>(g.v[i]);
  return img;
}

inline Json scan_json(const FocusMap& m, const ErrorMap& e) {
  std::size_t flagged = 0;
  for (auto f : m.flagged) flagged += f;
  Json j{{"source", to_string(m.source)}, {"exposures", m.exposures}, {"z_moves", m.z_moves},
         {"flagged_tiles", flagged}, {"mean_abs_error_um", e.mean}, {"max_abs_error_um", e.max}};
  if (m.source == MapSource::kfp_interp) j["key_points"] = m.key_points;
  return j;
}

}  // namespace sf
