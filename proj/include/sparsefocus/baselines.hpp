#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "sparsefocus/optics.hpp"
#include "sparsefocus/pipeline.hpp"
#include "sparsefocus/sharpness.hpp"

namespace sf {

/// DPN on every cell of the grid, median over all of them.
inline DefocusEstimate patchvote_predict(DpnModel<float>& dpn, const Image& raw, const GridGeometry& geo) {
  const auto [oy, ox] = crop_origin(raw.height(), raw.width(), geo);
  const Image crop = raw.crop(oy, ox, geo.crop_px(), geo.crop_px());
  std::vector<std::size_t> cells(geo.grid * geo.grid);
  std::iota(cells.begin(), cells.end(), std::size_t{0});
  return estimate_from_cells(dpn, crop, cells, geo);
}

/// Camera stand-in: returns the image captured with the stage at z (µm) and
/// counts every capture.
class FocusProbe {
 public:
  using CaptureFn = std::function<Image(double z_um)>;

  explicit FocusProbe(CaptureFn capture) : capture_(std::move(capture)) {}

  Image capture(double z_um) {
    ++captures_;
    return capture_(z_um);
  }
  std::size_t captures() const noexcept { return captures_; }

 private:
  CaptureFn capture_;
  std::size_t captures_ = 0;
};

/// Probe backed by the optics simulator: the scene's focal plane sits at
/// focal_um, so the image at stage z is rendered at defocus z - focal_um
/// (clamped to the simulated range). Noise is seeded by z, so repeated
/// captures at one height are identical.
inline FocusProbe simulated_probe(const Scene& scene, const OpticsConfig& optics, double focal_um,
                                  std::uint64_t seed) {
  return FocusProbe([&scene, optics, focal_um, seed](double z_um) {
    const double d = std::clamp(z_um - focal_um, -optics.z_range_um, optics.z_range_um);
    const auto key = static_cast<std::int64_t>(std::llround(z_um * 1e6));
    return render_defocused(scene, d, optics, derive_seed(seed, static_cast<std::uint64_t>(key)));
  });
}

struct HillClimbConfig {
  double initial_step_um = 4.0;
  double shrink = 0.5;
  double min_step_um = 0.25;
  std::size_t max_evaluations = 40;
  SharpnessMethod method = SharpnessMethod::tenengrad;
  double z_min_um = -25.0, z_max_um = 25.0;

  void validate() const {
    if (!(shrink > 0.0 && shrink < 1.0)) throw ConfigError("hillclimb: shrink must lie in (0, 1)");
    if (!(min_step_um > 0.0)) throw ConfigError("hillclimb: min_step_um must be positive");
    if (!(initial_step_um >= min_step_um)) throw ConfigError("hillclimb: initial step below min step");
    if (max_evaluations < 1) throw ConfigError("hillclimb: max_evaluations must be positive");
    if (!(z_min_um < z_max_um)) throw ConfigError("hillclimb: empty stage range");
  }
};

struct HillClimbStep {
  double z_um = 0.0;
  double sharpness = 0.0;
};

struct HillClimbResult {
  double z_best_um = 0.0;
  double best_sharpness = 0.0;
  std::size_t evaluations = 0;
  bool truncated = false;
  std::vector<HillClimbStep> trajectory;
};

/// Marches in the direction of rising sharpness; on a drop it reverses and
/// shrinks the step, stopping once the step falls below min_step_um.
inline HillClimbResult hillclimb(FocusProbe& probe, double z0_um, const HillClimbConfig& cfg) {
  cfg.validate();
  if (z0_um < cfg.z_min_um || z0_um > cfg.z_max_um) throw ConfigError("hillclimb: z0 outside the stage range");
  HillClimbResult res;
  auto measure = [&](double z) {
    const double s = sharpness(probe.capture(z), cfg.method);
    res.trajectory.push_back({z, s});
    ++res.evaluations;
    if (res.trajectory.size() == 1 || s > res.best_sharpness) {
      res.best_sharpness = s;
      res.z_best_um = z;
    }
    return s;
  };
  double z = z0_um, s = measure(z), step = cfg.initial_step_um, dir = 1.0;
  while (true) {
    if (res.evaluations >= cfg.max_evaluations) {
      res.truncated = true;
      break;
    }
    const double zn = std::clamp(z + dir * step, cfg.z_min_um, cfg.z_max_um);
    const double sn = zn == z ? s : measure(zn);
    if (sn > s) {
      z = zn;
      s = sn;
      continue;
    }
    dir = -dir;
    step *= cfg.shrink;
    if (step < cfg.min_step_um) break;
  }
  return res;
}

}  // namespace sf
