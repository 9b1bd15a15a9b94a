#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "sparsefocus/errors.hpp"
#include "sparsefocus/image.hpp"
#include "sparsefocus/rng.hpp"

namespace sf {

enum class Sparsity { dense, sparse, ex_sparse };

inline constexpr Sparsity kAllSparsities[] = {Sparsity::dense, Sparsity::sparse, Sparsity::ex_sparse};

inline std::string_view to_string(Sparsity s) {
  switch (s) {
    case Sparsity::dense: return "dense";
    case Sparsity::sparse: return "sparse";
    case Sparsity::ex_sparse: return "ex-sparse";
  }
  return "?";
}

inline Sparsity parse_sparsity(std::string_view s) {
  if (s == "dense") return Sparsity::dense;
  if (s == "sparse") return Sparsity::sparse;
  if (s == "ex-sparse" || s == "ex_sparse") return Sparsity::ex_sparse;
  throw ConfigError("unknown sparsity class '" + std::string(s) + "'");
}

struct OpticsConfig {
  double z_range_um = 25.0;
  double z_step_um = 2.5;
  double dof_um = 1.0;
  double psf_sigma0_px = 0.8;
  double psf_slope_px_per_um = 0.3;
  double asym_gamma = 0.8;
  // Width of the d > 0 ring profile as a fraction of the core sigma.
  double ring_width_frac = 0.5;
  double noise_sigma = 0.005;
  std::size_t image_px = 288;

  void validate() const {
    if (!(z_step_um > 0)) throw ConfigError("optics: z_step_um must be positive");
    if (!(z_range_um >= z_step_um)) throw ConfigError("optics: z_range_um must be >= z_step_um");
    if (!(dof_um > 0)) throw ConfigError("optics: dof_um must be positive");
    if (!(psf_sigma0_px >= 0) || !(psf_slope_px_per_um >= 0))
      throw ConfigError("optics: PSF sigma parameters must be non-negative");
    if (!(asym_gamma >= 0 && asym_gamma <= 1)) throw ConfigError("optics: asym_gamma must lie in [0,1]");
    if (!(ring_width_frac > 0)) throw ConfigError("optics: ring_width_frac must be positive");
    if (!(noise_sigma >= 0)) throw ConfigError("optics: noise_sigma must be non-negative");
    if (image_px == 0) throw ConfigError("optics: image_px must be positive");
  }

  // Number of slices per side of focus; throws when the range is not a whole
  // number of steps.
  std::size_t half_slices() const {
    const double q = z_range_um / z_step_um;
    const double r = std::round(q);
    if (std::abs(q - r) > 1e-9) {
      throw ConfigError("optics: z_range_um must be an integer multiple of z_step_um");
    }
    return static_cast<std::size_t>(r);
  }
};

/// One textured elliptical cell: cytoplasm with an off-center nucleus.
struct ObjectRecord {
  double cx = 0, cy = 0;
  double semi_major = 0, semi_minor = 0;
  double angle = 0;
  double cytoplasm_level = 0.5;
  double nucleus_level = 0.2;
  std::uint64_t texture_seed = 0;
};

struct Scene {
  Image canvas;
  std::vector<ObjectRecord> objects;
  Sparsity sparsity = Sparsity::dense;
  std::uint64_t seed = 0;
};

struct ZStack {
  std::vector<Image> slices;
  std::vector<double> defocus_um;
};

inline constexpr float kBackgroundLevel = 0.8f;

namespace detail {

inline double hash01(std::uint64_t seed, std::int64_t x, std::int64_t y) {
  const std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(x) * 0x9E3779B1ULL +
                                                       static_cast<std::uint64_t>(y) * 0x85EBCA77ULL));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Bilinear value noise on a lattice of `cell` pixels, in [-1, 1].
inline double value_noise(std::uint64_t seed, double x, double y, double cell) {
  const double gx = x / cell, gy = y / cell;
  const auto ix = static_cast<std::int64_t>(std::floor(gx));
  const auto iy = static_cast<std::int64_t>(std::floor(gy));
  const double fx = gx - static_cast<double>(ix), fy = gy - static_cast<double>(iy);
  auto lat = [&](std::int64_t a, std::int64_t b) { return 2.0 * hash01(seed, a, b) - 1.0; };
  const double top = lat(ix, iy) * (1 - fx) + lat(ix + 1, iy) * fx;
  const double bot = lat(ix, iy + 1) * (1 - fx) + lat(ix + 1, iy + 1) * fx;
  return top * (1 - fy) + bot * fy;
}

inline double object_texture(std::uint64_t seed, double x, double y) {
  return 0.10 * value_noise(seed, x, y, 3.0) + 0.05 * (2.0 * hash01(~seed, static_cast<std::int64_t>(x),
                                                                   static_cast<std::int64_t>(y)) -
                                                       1.0);
}

// Mirror index with edge repetition (…, 1, 0, 0, 1, …), valid for any offset.
inline std::size_t reflect_index(long i, long n) {
  const long period = 2 * n;
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < n ? m : period - 1 - m);
}

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace detail

/// Composites one object onto the canvas (alpha-blended, anti-aliased edge).
inline void paint_object(Image& canvas, const ObjectRecord& obj) {
  const double a = obj.semi_major, b = obj.semi_minor;
  const double ca = std::cos(obj.angle), sa = std::sin(obj.angle);
  const long y0 = std::max(0L, static_cast<long>(std::floor(obj.cy - a - 2)));
  const long y1 = std::min(static_cast<long>(canvas.height()) - 1, static_cast<long>(std::ceil(obj.cy + a + 2)));
  const long x0 = std::max(0L, static_cast<long>(std::floor(obj.cx - a - 2)));
  const long x1 = std::min(static_cast<long>(canvas.width()) - 1, static_cast<long>(std::ceil(obj.cx + a + 2)));
  for (long y = y0; y <= y1; ++y) {
    for (long x = x0; x <= x1; ++x) {
      const double dx = static_cast<double>(x) - obj.cx, dy = static_cast<double>(y) - obj.cy;
      const double u = dx * ca + dy * sa, v = -dx * sa + dy * ca;
      const double r = std::sqrt((u / a) * (u / a) + (v / b) * (v / b));
      const double alpha = std::clamp(0.5 - (r - 1.0) * b, 0.0, 1.0);
      if (alpha <= 0.0) continue;
      const double tex = detail::object_texture(obj.texture_seed, static_cast<double>(x), static_cast<double>(y));
      const double nu = (u - 0.2 * a) / (0.4 * a), nv = v / (0.4 * b);
      const double nr = std::sqrt(nu * nu + nv * nv);
      const double nalpha = std::clamp(0.5 - (nr - 1.0) * 0.4 * b, 0.0, 1.0);
      const double val = (obj.cytoplasm_level + tex) * (1 - nalpha) + (obj.nucleus_level + tex) * nalpha;
      float& px = canvas(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
      px = static_cast<float>(px * (1 - alpha) + val * alpha);
    }
  }
}

inline Image blank_canvas(std::size_t size_px) { return Image(size_px, size_px, kBackgroundLevel); }

/// Draws a random object of the given class's size range centred inside the canvas.
inline ObjectRecord random_object(Rng& rng, Sparsity cls, double size_px) {
  ObjectRecord o;
  o.semi_major = cls == Sparsity::dense ? rng.uniform(10.0, 18.0) : rng.uniform(8.0, 14.0);
  o.semi_minor = o.semi_major * rng.uniform(0.6, 1.0);
  o.angle = rng.uniform(0.0, std::numbers::pi);
  o.cx = rng.uniform(o.semi_major, size_px - o.semi_major);
  o.cy = rng.uniform(o.semi_major, size_px - o.semi_major);
  o.cytoplasm_level = rng.uniform(0.45, 0.6);
  o.nucleus_level = rng.uniform(0.15, 0.3);
  o.texture_seed = rng.next();
  return o;
}

inline std::pair<int, int> object_count_range(Sparsity cls) {
  switch (cls) {
    case Sparsity::dense: return {40, 80};
    case Sparsity::sparse: return {4, 10};
    case Sparsity::ex_sparse: return {1, 2};
  }
  return {0, 0};
}

/// Synthetic in-focus specimen: a bright background with textured cells whose
/// count is drawn uniformly from the class range.
inline Scene gen_specimen(Sparsity cls, std::size_t size_px, std::uint64_t seed) {
  if (size_px < 32) throw ConfigError("gen_specimen: size_px must be at least 32");
  Rng rng(derive_seed(seed, 0x5CE4E));
  Scene scene;
  scene.sparsity = cls;
  scene.seed = seed;
  scene.canvas = blank_canvas(size_px);
  const auto [lo, hi] = object_count_range(cls);
  const auto count = rng.uniform_int(lo, hi);
  for (std::int64_t i = 0; i < count; ++i) {
    scene.objects.push_back(random_object(rng, cls, static_cast<double>(size_px)));
    paint_object(scene.canvas, scene.objects.back());
  }
  scene.canvas.clip01();
  return scene;
}

inline double psf_sigma(double d_um, const OpticsConfig& cfg) {
  const double sgn = d_um > 0 ? 1.0 : (d_um < 0 ? -1.0 : 0.0);
  return cfg.psf_sigma0_px + cfg.psf_slope_px_per_um * std::abs(d_um) * (1.0 + cfg.asym_gamma * sgn);
}

/// Normalized defocus kernel: isotropic Gaussian core, plus a faint ring at
/// radius 2*sigma on the positive side of focus.
inline Image make_psf(double d_um, const OpticsConfig& cfg) {
  const double sigma = psf_sigma(d_um, cfg);
  auto side = static_cast<std::size_t>(std::ceil(6.0 * sigma + 1.0));
  if (side % 2 == 0) ++side;
  const long r = static_cast<long>(side / 2);
  Image k(side, side);
  if (sigma <= 0.0) {
    k(static_cast<std::size_t>(r), static_cast<std::size_t>(r)) = 1.0f;
    return k;
  }
  const double ring_amp = d_um > 0 ? cfg.asym_gamma * 0.2 : 0.0;
  const double ring_w = cfg.ring_width_frac * sigma;
  std::vector<double> vals(side * side);
  double total = 0.0;
  for (long y = -r; y <= r; ++y)
    for (long x = -r; x <= r; ++x) {
      const double rr = std::sqrt(static_cast<double>(x * x + y * y));
      double v = std::exp(-rr * rr / (2.0 * sigma * sigma));
      if (ring_amp > 0) v += ring_amp * std::exp(-(rr - 2 * sigma) * (rr - 2 * sigma) / (2.0 * ring_w * ring_w));
      vals[static_cast<std::size_t>((y + r) * static_cast<long>(side) + (x + r))] = v;
      total += v;
    }
  for (std::size_t i = 0; i < vals.size(); ++i) k.pixels()[i] = static_cast<float>(vals[i] / total);
  return k;
}

/// Convolves with a centred odd-sided kernel under mirror boundary handling.
/// The kernel is assumed point-symmetric, so convolution equals correlation.
inline Image convolve_reflect(const Image& img, const Image& kernel) {
  const std::size_t h = img.height(), w = img.width();
  const std::size_t ks = kernel.height();
  if (kernel.width() != ks || ks % 2 == 0) throw ShapeError("convolve_reflect", "kernel", "must be odd square");
  if (ks == 1) {
    Image out = img;
    for (float& v : out.pixels()) v *= kernel(0, 0);
    return out;
  }
  const long r = static_cast<long>(ks / 2);
  const std::size_t ph = h + 2 * static_cast<std::size_t>(r), pw = w + 2 * static_cast<std::size_t>(r);
  const std::size_t cw = pw / 2 + 1;

  double* in = fftw_alloc_real(ph * pw);
  double* kin = fftw_alloc_real(ph * pw);
  fftw_complex* fa = fftw_alloc_complex(ph * cw);
  fftw_complex* fb = fftw_alloc_complex(ph * cw);
  fftw_plan pa, pb, pinv;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    pa = fftw_plan_dft_r2c_2d(static_cast<int>(ph), static_cast<int>(pw), in, fa, FFTW_ESTIMATE);
    pb = fftw_plan_dft_r2c_2d(static_cast<int>(ph), static_cast<int>(pw), kin, fb, FFTW_ESTIMATE);
    pinv = fftw_plan_dft_c2r_2d(static_cast<int>(ph), static_cast<int>(pw), fa, in, FFTW_ESTIMATE);
  }
  for (std::size_t y = 0; y < ph; ++y) {
    const std::size_t sy = detail::reflect_index(static_cast<long>(y) - r, static_cast<long>(h));
    for (std::size_t x = 0; x < pw; ++x) {
      const std::size_t sx = detail::reflect_index(static_cast<long>(x) - r, static_cast<long>(w));
      in[y * pw + x] = img(sy, sx);
    }
  }
  std::fill(kin, kin + ph * pw, 0.0);
  for (std::size_t y = 0; y < ks; ++y)
    for (std::size_t x = 0; x < ks; ++x) kin[y * pw + x] = kernel(y, x);
  fftw_execute(pa);
  fftw_execute(pb);
  for (std::size_t i = 0; i < ph * cw; ++i) {
    const double re = fa[i][0] * fb[i][0] - fa[i][1] * fb[i][1];
    const double im = fa[i][0] * fb[i][1] + fa[i][1] * fb[i][0];
    fa[i][0] = re;
    fa[i][1] = im;
  }
  fftw_execute(pinv);
  // Circular indices >= 2r carry no wrap-around; they map to centre (y - r).
  Image out(h, w);
  const double norm = 1.0 / static_cast<double>(ph * pw);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      out(y, x) = static_cast<float>(in[(y + 2 * r) * pw + (x + 2 * r)] * norm);
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(pa);
    fftw_destroy_plan(pb);
    fftw_destroy_plan(pinv);
  }
  fftw_free(in);
  fftw_free(kin);
  fftw_free(fa);
  fftw_free(fb);
  return out;
}

/// Blurs the canvas by make_psf(d), adds seeded Gaussian read noise, then clips to [0, 1].
inline Image render_defocused(const Image& canvas, double d_um, const OpticsConfig& cfg, std::uint64_t seed) {
  if (std::abs(d_um) > cfg.z_range_um + 1e-9) {
    throw ConfigError("render_defocused: |d| exceeds z_range_um");
  }
  Image out = convolve_reflect(canvas, make_psf(d_um, cfg));
  if (cfg.noise_sigma > 0) {
    Rng rng(derive_seed(seed, 0xA015E));
    for (float& v : out.pixels()) v += static_cast<float>(cfg.noise_sigma * rng.normal());
  }
  out.clip01();
  return out;
}

inline Image render_defocused(const Scene& scene, double d_um, const OpticsConfig& cfg, std::uint64_t seed) {
  return render_defocused(scene.canvas, d_um, cfg, seed);
}

inline std::vector<double> zstack_positions(const OpticsConfig& cfg) {
  cfg.validate();
  const auto half = static_cast<long>(cfg.half_slices());
  std::vector<double> zs;
  for (long i = -half; i <= half; ++i) zs.push_back(static_cast<double>(i) * cfg.z_step_um);
  return zs;
}

/// Renders the scene at every stack position. `focal_plane_um` shifts the
/// specimen along z, so the slice at that coordinate is the sharpest one.
inline ZStack gen_zstack(const Scene& scene, const OpticsConfig& cfg, std::uint64_t seed,
                         double focal_plane_um = 0.0) {
  ZStack stack;
  stack.defocus_um = zstack_positions(cfg);
  for (std::size_t i = 0; i < stack.defocus_um.size(); ++i) {
    const double local = std::clamp(stack.defocus_um[i] - focal_plane_um, -cfg.z_range_um, cfg.z_range_um);
    stack.slices.push_back(render_defocused(scene, local, cfg, derive_seed(seed, i)));
  }
  return stack;
}

}  // namespace sf
