#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string_view>
#include <vector>

#include "sparsefocus/dataset.hpp"
#include "sparsefocus/image.hpp"
#include "sparsefocus/models.hpp"

namespace sf {

/// Box-filter resize where every output pixel averages the exact (fractional)
/// footprint it covers in the source.
inline Image area_resize(const Image& src, std::size_t out_h, std::size_t out_w) {
  if (out_h == src.height() && out_w == src.width()) return src;
  if (out_h == 0 || out_w == 0) throw ShapeError("area_resize", out_h == 0 ? "height" : "width", "zero extent");
  // Per-axis weights: weight[o] lists (source index, overlap) pairs.
  auto axis = [](std::size_t in, std::size_t out) {
    std::vector<std::vector<std::pair<std::size_t, double>>> w(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      const double lo = static_cast<double>(o) * ratio, hi = lo + ratio;
      for (auto i = static_cast<std::size_t>(std::floor(lo)); i < in && static_cast<double>(i) < hi; ++i) {
        const double overlap = std::min(hi, static_cast<double>(i + 1)) - std::max(lo, static_cast<double>(i));
        if (overlap > 0) w[o].emplace_back(i, overlap / ratio);
      }
    }
    return w;
  };
  const auto wy = axis(src.height(), out_h), wx = axis(src.width(), out_w);
  Image out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x) {
      double acc = 0.0;
      for (auto [sy, fy] : wy[y])
        for (auto [sx, fx] : wx[x]) acc += fy * fx * src(sy, sx);
      out(y, x) = static_cast<float>(acc);
    }
  return out;
}

struct Preprocessed {
  Image crop;         // G*patch square at full resolution, source of DPN patches
  Image model_input;  // crop area-resized to the RIN input side
};

inline Preprocessed preprocess(const Image& raw, const GridGeometry& geo, std::size_t input_px) {
  const auto [oy, ox] = crop_origin(raw.height(), raw.width(), geo);
  Preprocessed p;
  p.crop = raw.crop(oy, ox, geo.crop_px(), geo.crop_px());
  p.model_input = area_resize(p.crop, input_px, input_px);
  return p;
}

inline Image extract_patch(const Image& crop, std::size_t row, std::size_t col, std::size_t patch_px) {
  return crop.crop(row * patch_px, col * patch_px, patch_px, patch_px);
}

/// Stacks the listed patches (row-major cell indices) into [k, 1, P, P].
inline Tensor<float> patch_batch(const Image& crop, const std::vector<std::size_t>& cells, const GridGeometry& geo) {
  const std::size_t p = geo.patch_px, plane = p * p;
  Tensor<float> batch({cells.size(), 1, p, p});
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const Image patch = extract_patch(crop, cells[k] / geo.grid, cells[k] % geo.grid, p);
    std::copy(patch.pixels().begin(), patch.pixels().end(), batch.raw() + k * plane);
  }
  return batch;
}

enum class Regime { dense, sparse, ex_sparse };

inline std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::dense: return "dense";
    case Regime::sparse: return "sparse";
    case Regime::ex_sparse: return "ex-sparse";
  }
  return "?";
}

struct SelectionConfig {
  double rho = 0.8;
  std::size_t k_dense = 31, k_sparse = 9, k_ex_sparse = 3;
  // Above-threshold counts at which the dense and sparse caps apply.
  std::size_t dense_min = 20, sparse_min = 4;

  void validate(std::size_t grid) const {
    if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("selection: rho must lie in (0, 1)");
    for (std::size_t k : {k_dense, k_sparse, k_ex_sparse}) {
      if (k < 1 || k > grid * grid) throw ConfigError("selection: k values must lie in [1, G*G]");
    }
  }
};

struct Selection {
  std::vector<std::size_t> cells;
  std::size_t above = 0;
  Regime regime = Regime::ex_sparse;
  bool used_fallback = false;
};

/// Cells with W >= rho, highest first (row-major among ties), capped by the
/// regime inferred from how many cells cleared rho.
inline Selection select_patches(const std::vector<float>& importance, const SelectionConfig& cfg) {
  if (importance.empty()) throw UsageError("select_patches: empty importance matrix");
  Selection s;
  for (std::size_t i = 0; i < importance.size(); ++i)
    if (importance[i] >= cfg.rho) s.cells.push_back(i);
  s.above = s.cells.size();
  if (s.above == 0) {
    s.cells = {static_cast<std::size_t>(std::max_element(importance.begin(), importance.end()) - importance.begin())};
    s.used_fallback = true;
    return s;
  }
  std::stable_sort(s.cells.begin(), s.cells.end(),
                   [&](std::size_t a, std::size_t b) { return importance[a] > importance[b]; });
  std::size_t k = cfg.k_ex_sparse;
  s.regime = Regime::ex_sparse;
  if (s.above >= cfg.dense_min) {
    k = cfg.k_dense;
    s.regime = Regime::dense;
  } else if (s.above >= cfg.sparse_min) {
    k = cfg.k_sparse;
    s.regime = Regime::sparse;
  }
  if (s.cells.size() > k) s.cells.resize(k);
  return s;
}

/// Median; an even count averages the two central values.
inline double aggregate(std::vector<double> values) {
  if (values.empty()) throw UsageError("aggregate: empty list");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

struct PatchPrediction {
  std::size_t cell = 0;
  double d_um = 0.0;
};

struct DefocusEstimate {
  double d_um = 0.0;
  std::vector<PatchPrediction> per_patch;
  std::vector<std::size_t> selected;
  bool used_fallback = false;
  std::vector<float> importance;
};

struct PipelineConfig {
  GridGeometry geometry;
  std::size_t input_px = 288;
  SelectionConfig selection;
};

inline std::vector<float> rin_forward(RinModel<float>& rin, const Image& model_input) {
  const std::size_t s = model_input.height();
  Graph<float> g;
  Var w = rin.forward(g, Tensor<float>({1, 1, s, model_input.width()}, model_input.pixels()), NormMode::eval, false);
  const auto data = g.value(w).data();
  return {data.begin(), data.end()};
}

/// DPN over the given cells, aggregated by median.
inline DefocusEstimate estimate_from_cells(DpnModel<float>& dpn, const Image& crop,
                                           const std::vector<std::size_t>& cells, const GridGeometry& geo) {
  DefocusEstimate est;
  est.selected = cells;
  const auto preds = dpn.predict(patch_batch(crop, cells, geo));
  for (std::size_t k = 0; k < cells.size(); ++k) est.per_patch.push_back({cells[k], preds[k]});
  est.d_um = aggregate(preds);
  return est;
}

inline DefocusEstimate predict(RinModel<float>& rin, DpnModel<float>& dpn, const Image& raw,
                               const PipelineConfig& cfg) {
  const Preprocessed p = preprocess(raw, cfg.geometry, cfg.input_px);
  auto importance = rin_forward(rin, p.model_input);
  const Selection sel = select_patches(importance, cfg.selection);
  DefocusEstimate est = estimate_from_cells(dpn, p.crop, sel.cells, cfg.geometry);
  est.used_fallback = sel.used_fallback;
  est.importance = std::move(importance);
  return est;
}

}  // namespace sf
