#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "sparsefocus/adam.hpp"
#include "sparsefocus/augment.hpp"
#include "sparsefocus/dataset.hpp"
#include "sparsefocus/models.hpp"
#include "sparsefocus/pipeline.hpp"

namespace sf {

enum class LrSchedule { constant, cosine };

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch = 128;
  std::size_t epochs = 40;
  // Stops early once this many optimizer steps ran; 0 means no limit.
  std::size_t max_steps = 0;
  LrSchedule schedule = LrSchedule::cosine;
  bool augment = true;
  AugmentConfig augmentation;
  std::uint64_t seed = 1;
  // Cap on positive patches drawn from one image (DPN only), 0 = no cap.
  std::size_t max_patches_per_image = 12;
};

inline TrainConfig default_rin_train() {
  TrainConfig c;
  c.lr = 5e-5;
  c.batch = 16;
  return c;
}

inline TrainConfig default_dpn_train() {
  TrainConfig c;
  c.lr = 1e-4;
  c.batch = 128;
  return c;
}

struct TrainReport {
  std::vector<double> step_loss;
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
  std::size_t skipped_batches = 0;
  std::size_t positive_patches = 0;
  std::size_t negative_patches = 0;
  std::size_t samples = 0;
};

using ProgressFn = std::function<void(std::size_t epoch, double mean_loss)>;

inline double scheduled_lr(const TrainConfig& cfg, std::size_t step, std::size_t total) {
  if (cfg.schedule == LrSchedule::constant || total == 0) return cfg.lr;
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

inline void require_finite_loss(double loss, const char* stage, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw NumericError(std::string(stage) + ": non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                       std::to_string(step));
  }
}

struct RinSample {
  Image input;
  std::vector<float> target;
};

inline std::vector<RinSample> rin_samples(const Manifest& m, Split split, std::size_t input_px) {
  std::vector<RinSample> out;
  for (const auto& r : m.records) {
    if (r.split != split) continue;
    out.push_back({preprocess(m.load_image(r), m.spec.geometry, input_px).model_input, r.richness});
  }
  return out;
}

/// Minimizes BCE between predicted importance and W* over the samples.
inline TrainReport train_rin(RinModel<float>& model, const std::vector<RinSample>& samples, const TrainConfig& cfg,
                             const ProgressFn& progress = {}) {
  if (samples.empty()) throw ConfigError("train_rin: no training samples");
  const std::size_t s = model.config().input_px, g = model.config().grid;
  const std::size_t batch = std::min(cfg.batch, samples.size());
  const std::size_t per_epoch = (samples.size() + batch - 1) / batch;
  std::size_t total = per_epoch * cfg.epochs;
  if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);
  Adam<float> opt(model.parameters(), AdamConfig{cfg.lr});
  Rng rng(derive_seed(cfg.seed, 0x7219));
  std::vector<std::size_t> order(samples.size());
  TrainReport rep;
  for (std::size_t epoch = 0; epoch < cfg.epochs && rep.steps < total; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t b0 = 0; b0 < order.size() && rep.steps < total; b0 += batch) {
      const std::size_t nb = std::min(batch, order.size() - b0);
      Tensor<float> x({nb, 1, s, s});
      Tensor<float> t({nb, 1, g, g});
      for (std::size_t k = 0; k < nb; ++k) {
        const RinSample& smp = samples[order[b0 + k]];
        const Image img = cfg.augment ? augment(smp.input, derive_seed(cfg.seed, epoch, order[b0 + k]), cfg.augmentation)
                                      : smp.input;
        std::copy(img.pixels().begin(), img.pixels().end(), x.raw() + k * s * s);
        std::copy(smp.target.begin(), smp.target.end(), t.raw() + k * g * g);
      }
      Graph<float> graph;
      Var loss = loss_bce(graph, model.forward(graph, std::move(x), NormMode::train, true), t);
      const double lv = graph.value(loss)[0];
      require_finite_loss(lv, "train_rin", epoch, rep.steps);
      opt.zero_grad();
      graph.backward(loss);
      opt.step(scheduled_lr(cfg, rep.steps, total));
      rep.step_loss.push_back(lv);
      rep.samples += nb;
      ++rep.steps;
      epoch_sum += lv;
      ++epoch_steps;
    }
    rep.epoch_loss.push_back(epoch_sum / static_cast<double>(std::max<std::size_t>(1, epoch_steps)));
    if (progress) progress(epoch, rep.epoch_loss.back());
  }
  return rep;
}

/// Share of grid cells where thresholding the prediction at 0.5 matches W*.
inline double rin_cell_accuracy(RinModel<float>& model, const std::vector<RinSample>& samples) {
  if (samples.empty()) return 0.0;
  std::size_t hit = 0, total = 0;
  for (const auto& smp : samples) {
    const auto w = rin_forward(model, smp.input);
    for (std::size_t i = 0; i < w.size(); ++i) {
      hit += ((w[i] >= 0.5f) == (smp.target[i] > 0.5f)) ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

/// Patch-level regression samples: pixels stored contiguously, [n, P, P].
struct PatchSet {
  std::size_t patch_px = 0;
  std::vector<float> pixels;
  std::vector<float> target;
  std::vector<float> richness;
  std::vector<Sparsity> sparsity;

  std::size_t size() const noexcept { return target.size(); }
};

/// Collects richness-1 patches from the split, at most cap per image (chosen
/// by a seeded shuffle); cap 0 keeps all.
inline PatchSet positive_patches(const Manifest& m, Split split, std::size_t cap, std::uint64_t seed) {
  const GridGeometry& geo = m.spec.geometry;
  PatchSet ps;
  ps.patch_px = geo.patch_px;
  for (std::size_t ri = 0; ri < m.records.size(); ++ri) {
    const auto& r = m.records[ri];
    if (r.split != split) continue;
    std::vector<std::size_t> cells;
    for (std::size_t c = 0; c < r.richness.size(); ++c)
      if (r.richness[c] > 0.5f) cells.push_back(c);
    if (cells.empty()) continue;
    if (cap > 0 && cells.size() > cap) {
      Rng rng(derive_seed(seed, 0xCA9, ri));
      rng.shuffle(cells.begin(), cells.end());
      cells.resize(cap);
      std::sort(cells.begin(), cells.end());
    }
    const Image crop = preprocess(m.load_image(r), geo, geo.crop_px()).crop;
    for (std::size_t c : cells) {
      const Image p = extract_patch(crop, c / geo.grid, c % geo.grid, geo.patch_px);
      ps.pixels.insert(ps.pixels.end(), p.pixels().begin(), p.pixels().end());
      ps.target.push_back(static_cast<float>(r.patch_d_um[c]));
      ps.richness.push_back(r.richness[c]);
      ps.sparsity.push_back(r.sparsity);
    }
  }
  return ps;
}

/// Minimizes the L2 defocus loss over richness-1 patches only; a batch that
/// ends up with no positive patch is skipped and counted.
inline TrainReport train_dpn(DpnModel<float>& model, const PatchSet& data, const TrainConfig& cfg,
                             const ProgressFn& progress = {}) {
  if (data.size() == 0) throw ConfigError("train_dpn: no training patches");
  if (data.patch_px != model.config().patch_px) throw ShapeError("train_dpn", "patch_px", "model/data mismatch");
  const std::size_t p = data.patch_px, plane = p * p;
  const std::size_t batch = std::min(cfg.batch, data.size());
  const std::size_t per_epoch = (data.size() + batch - 1) / batch;
  std::size_t total = per_epoch * cfg.epochs;
  if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);
  Adam<float> opt(model.parameters(), AdamConfig{cfg.lr});
  Rng rng(derive_seed(cfg.seed, 0xD9A1));
  std::vector<std::size_t> order(data.size());
  TrainReport rep;
  for (std::size_t epoch = 0; epoch < cfg.epochs && rep.steps < total; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t b0 = 0; b0 < order.size() && rep.steps < total; b0 += batch) {
      const std::size_t nb = std::min(batch, order.size() - b0);
      std::vector<std::size_t> pos;
      for (std::size_t k = 0; k < nb; ++k) {
        if (data.richness[order[b0 + k]] > 0.5f) {
          pos.push_back(order[b0 + k]);
        } else {
          ++rep.negative_patches;
        }
      }
      if (pos.empty()) {
        ++rep.skipped_batches;
        continue;
      }
      Tensor<float> x({pos.size(), 1, p, p});
      Tensor<float> t({pos.size()});
      for (std::size_t k = 0; k < pos.size(); ++k) {
        Image img(p, p, std::vector<float>(data.pixels.begin() + static_cast<std::ptrdiff_t>(pos[k] * plane),
                                           data.pixels.begin() + static_cast<std::ptrdiff_t>((pos[k] + 1) * plane)));
        if (cfg.augment) img = augment(img, derive_seed(cfg.seed, epoch, pos[k]), cfg.augmentation);
        std::copy(img.pixels().begin(), img.pixels().end(), x.raw() + k * plane);
        t[k] = data.target[pos[k]];
      }
      Graph<float> graph;
      Var pred = reshape(graph, model.forward(graph, std::move(x), NormMode::train, true), Dims{pos.size()});
      Var loss = loss_l2(graph, pred, t);
      const double lv = graph.value(loss)[0];
      require_finite_loss(lv, "train_dpn", epoch, rep.steps);
      opt.zero_grad();
      graph.backward(loss);
      opt.step(scheduled_lr(cfg, rep.steps, total));
      rep.step_loss.push_back(lv);
      rep.positive_patches += pos.size();
      rep.samples += pos.size();
      ++rep.steps;
      epoch_sum += lv;
      ++epoch_steps;
    }
    rep.epoch_loss.push_back(epoch_sum / static_cast<double>(std::max<std::size_t>(1, epoch_steps)));
    if (progress) progress(epoch, rep.epoch_loss.back());
  }
  return rep;
}

/// Predictions for every patch of a set, in chunks.
inline std::vector<double> dpn_predict_set(DpnModel<float>& model, const PatchSet& data, std::size_t chunk = 256) {
  std::vector<double> out;
  const std::size_t p = data.patch_px, plane = p * p;
  for (std::size_t b0 = 0; b0 < data.size(); b0 += chunk) {
    const std::size_t nb = std::min(chunk, data.size() - b0);
    Tensor<float> x({nb, 1, p, p}, std::vector<float>(data.pixels.begin() + static_cast<std::ptrdiff_t>(b0 * plane),
                                                      data.pixels.begin() + static_cast<std::ptrdiff_t>((b0 + nb) * plane)));
    const auto pr = model.predict(x);
    out.insert(out.end(), pr.begin(), pr.end());
  }
  return out;
}

/// Share of patches with |d*| >= min_abs_um whose predicted sign matches.
inline double sign_agreement(const std::vector<double>& pred, const std::vector<float>& target, double min_abs_um) {
  std::size_t hit = 0, n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (std::abs(target[i]) < min_abs_um) continue;
    ++n;
    hit += (pred[i] > 0) == (target[i] > 0) ? 1 : 0;
  }
  return n == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(n);
}

}  // namespace sf
