#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sparsefocus/checkpoint.hpp"
#include "sparsefocus/graph.hpp"
#include "sparsefocus/json_fields.hpp"
#include "sparsefocus/ops.hpp"
#include "sparsefocus/rng.hpp"

namespace sf {

/// Convolution (optionally biased) followed by batch norm.
template <typename T>
struct ConvBn {
  Parameter<T> weight;
  Parameter<T> gamma, beta;
  BatchNormStats<T> stats;
  std::size_t stride = 1, padding = 0;

  ConvBn() = default;
  ConvBn(const std::string& name, std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t stride_,
         std::size_t padding_, Rng& rng)
      : weight(name + ".conv.weight", Tensor<T>({out_c, in_c, k, k})),
        gamma(name + ".bn.gamma", Tensor<T>({out_c}, T{1})),
        beta(name + ".bn.beta", Tensor<T>({out_c})),
        stats{Parameter<T>(name + ".bn.running_mean", Tensor<T>({out_c}), false),
              Parameter<T>(name + ".bn.running_var", Tensor<T>({out_c}, T{1}), false)},
        stride(stride_),
        padding(padding_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_c * k * k));
    for (T& v : weight.value.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  }

  Var forward(Graph<T>& g, Var x, NormMode mode, bool track) {
    Var y = conv2d(g, x, bind(g, weight, track), Var{}, stride, padding);
    return batchnorm2d(g, y, bind(g, gamma, track), bind(g, beta, track), stats, mode, T(0.1), T(1e-5));
  }

  void collect(std::vector<Parameter<T>*>& trainable, std::vector<Parameter<T>*>& all) {
    for (auto* p : {&weight, &gamma, &beta}) {
      trainable.push_back(p);
      all.push_back(p);
    }
    all.push_back(&stats.mean);
    all.push_back(&stats.var);
  }

  static Var bind(Graph<T>& g, Parameter<T>& p, bool track) { return track ? g.param(p) : g.constant(p.value); }
};

struct DpnConfig {
  std::size_t patch_px = 32;
  std::vector<std::size_t> widths{16, 32, 64, 128};
  std::size_t block_kernel = 7;
  // Regression head output is multiplied by this (µm), so unit-scale
  // activations cover the defocus range.
  double output_scale = 25.0;
  // Patches are standardized as (x - mean) / (std + input_eps).
  double input_eps = 0.02;
};

/// Per-patch defocus regressor: 4x4/4 stem, residual large-kernel blocks with
/// 2x downsampling between them, global max pool, linear head.
template <typename T>
class DpnModel {
 public:
  explicit DpnModel(DpnConfig cfg = {}, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    if (cfg_.widths.empty()) throw ConfigError("dpn: widths must not be empty");
    if (cfg_.patch_px % 4 != 0) throw ConfigError("dpn: patch_px must be a multiple of 4");
    if (cfg_.block_kernel % 2 == 0) throw ConfigError("dpn: block_kernel must be odd");
    Rng rng(derive_seed(seed, 0xD9));
    stem_ = ConvBn<T>("stem", 1, cfg_.widths[0], 4, 4, 0, rng);
    const std::size_t pad = cfg_.block_kernel / 2;
    for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
      const std::size_t w = cfg_.widths[i];
      blocks_.emplace_back("block" + std::to_string(i), w, w, cfg_.block_kernel, 1, pad, rng);
      if (i + 1 < cfg_.widths.size()) {
        downs_.emplace_back("down" + std::to_string(i), w, cfg_.widths[i + 1], 2, 2, 0, rng);
      }
    }
    const std::size_t d = cfg_.widths.back();
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    head_w_ = Parameter<T>("head.weight", Tensor<T>({1, d}));
    head_b_ = Parameter<T>("head.bias", Tensor<T>({1}));
    for (T& v : head_w_.value.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    head_b_.value[0] = static_cast<T>(rng.uniform(-bound, bound));
    collect();
  }

  DpnModel(const DpnModel&) = delete;
  DpnModel& operator=(const DpnModel&) = delete;

  const DpnConfig& config() const noexcept { return cfg_; }
  const std::vector<Parameter<T>*>& parameters() const noexcept { return trainable_; }
  const std::vector<Parameter<T>*>& tensors() const noexcept { return all_; }

  /// Standardizes each patch of an [N, 1, P, P] batch in place.
  void standardize(Tensor<T>& batch) const {
    const std::size_t plane = batch.dim(2) * batch.dim(3);
    for (std::size_t n = 0; n < batch.dim(0); ++n) {
      T* p = batch.raw() + n * plane;
      double s = 0.0, s2 = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        s += p[i];
        s2 += static_cast<double>(p[i]) * p[i];
      }
      const double mean = s / static_cast<double>(plane);
      const double var = std::max(0.0, (s2 - s * mean) / static_cast<double>(plane - 1));
      const double inv = 1.0 / (std::sqrt(var) + cfg_.input_eps);
      for (std::size_t i = 0; i < plane; ++i) p[i] = static_cast<T>((p[i] - mean) * inv);
    }
  }

  /// [N, 1, P, P] raw patches -> [N, 1] defocus (µm). `track` records
  /// parameter gradients; eval mode uses running batch-norm statistics.
  Var forward(Graph<T>& g, Tensor<T> patches, NormMode mode, bool track) {
    require_rank(patches, 4, "dpn_forward", "input");
    if (patches.dim(1) != 1 || patches.dim(2) != cfg_.patch_px || patches.dim(3) != cfg_.patch_px) {
      throw ShapeError("dpn_forward", patches.dim(1) != 1 ? "channels" : "height",
                       "expected [N, 1, " + std::to_string(cfg_.patch_px) + ", " +
                           std::to_string(cfg_.patch_px) + "], got " + dims_string(patches.dims()));
    }
    standardize(patches);
    Var h = stem_.forward(g, g.constant(std::move(patches)), mode, track);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      h = add(g, h, activation(g, blocks_[i].forward(g, h, mode, track), Activation::relu));
      if (i < downs_.size()) h = downs_[i].forward(g, h, mode, track);
    }
    h = global_max_pool(g, h);
    Var y = linear(g, h, ConvBn<T>::bind(g, head_w_, track), ConvBn<T>::bind(g, head_b_, track));
    return scale(g, y, static_cast<T>(cfg_.output_scale));
  }

  /// Inference on a batch of patches; returns one value per patch.
  std::vector<double> predict(const Tensor<T>& patches) {
    Graph<T> g;
    Var y = forward(g, patches, NormMode::eval, false);
    std::vector<double> out;
    for (T v : g.value(y).data()) out.push_back(static_cast<double>(v));
    return out;
  }

 private:
  void collect() {
    stem_.collect(trainable_, all_);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i].collect(trainable_, all_);
      if (i < downs_.size()) downs_[i].collect(trainable_, all_);
    }
    trainable_.push_back(&head_w_);
    trainable_.push_back(&head_b_);
    all_.push_back(&head_w_);
    all_.push_back(&head_b_);
  }

  DpnConfig cfg_;
  ConvBn<T> stem_;
  std::vector<ConvBn<T>> blocks_, downs_;
  Parameter<T> head_w_, head_b_;
  std::vector<Parameter<T>*> trainable_, all_;
};

struct RinConfig {
  std::size_t input_px = 288;
  std::size_t grid = 9;
  std::size_t stem_channels = 8;
  std::vector<std::size_t> widths{16, 32, 32};
  Activation trunk_activation = Activation::hardswish;
};

/// Fully convolutional importance scorer: S x S image -> G x G sigmoid grid.
template <typename T>
class RinModel {
 public:
  explicit RinModel(RinConfig cfg = {}, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    if (cfg_.input_px % 4 != 0) throw ConfigError("rin: input_px must be a multiple of 4");
    if (cfg_.grid == 0) throw ConfigError("rin: grid must be positive");
    Rng rng(derive_seed(seed, 0x21));
    stem_ = ConvBn<T>("stem", 1, cfg_.stem_channels, 4, 4, 0, rng);
    std::size_t c = cfg_.stem_channels, side = cfg_.input_px / 4;
    for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
      trunk_.emplace_back("trunk" + std::to_string(i), c, cfg_.widths[i], 3, 2, 1, rng);
      c = cfg_.widths[i];
      side = (side - 1) / 2 + 1;
    }
    if (side < cfg_.grid) throw ConfigError("rin: trunk output smaller than the grid");
    trunk_side_ = side;
    const double bound = 1.0 / std::sqrt(static_cast<double>(c));
    head_w_ = Parameter<T>("head.conv.weight", Tensor<T>({1, c, 1, 1}));
    head_b_ = Parameter<T>("head.conv.bias", Tensor<T>({1}));
    for (T& v : head_w_.value.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    head_b_.value[0] = static_cast<T>(rng.uniform(-bound, bound));
    stem_.collect(trainable_, all_);
    for (auto& t : trunk_) t.collect(trainable_, all_);
    for (auto* p : {&head_w_, &head_b_}) {
      trainable_.push_back(p);
      all_.push_back(p);
    }
  }

  RinModel(const RinModel&) = delete;
  RinModel& operator=(const RinModel&) = delete;

  const RinConfig& config() const noexcept { return cfg_; }
  const std::vector<Parameter<T>*>& parameters() const noexcept { return trainable_; }
  const std::vector<Parameter<T>*>& tensors() const noexcept { return all_; }

  /// [N, 1, S, S] -> [N, 1, G, G] importance in (0, 1).
  Var forward(Graph<T>& g, Tensor<T> images, NormMode mode, bool track) {
    require_rank(images, 4, "rin_forward", "input");
    if (images.dim(1) != 1 || images.dim(2) != cfg_.input_px || images.dim(3) != cfg_.input_px) {
      throw ShapeError("rin_forward", images.dim(1) != 1 ? "channels" : "height",
                       "expected [N, 1, " + std::to_string(cfg_.input_px) + ", " +
                           std::to_string(cfg_.input_px) + "], got " + dims_string(images.dims()));
    }
    Var h = activation(g, stem_.forward(g, g.constant(std::move(images)), mode, track), cfg_.trunk_activation);
    for (auto& t : trunk_) h = activation(g, t.forward(g, h, mode, track), cfg_.trunk_activation);
    if (trunk_side_ != cfg_.grid) h = adaptive_avg_pool2d(g, h, cfg_.grid, cfg_.grid);
    Var logits = conv2d(g, h, ConvBn<T>::bind(g, head_w_, track), ConvBn<T>::bind(g, head_b_, track), 1, 0);
    return activation(g, logits, Activation::sigmoid);
  }

 private:
  RinConfig cfg_;
  ConvBn<T> stem_;
  std::vector<ConvBn<T>> trunk_;
  std::size_t trunk_side_ = 0;
  Parameter<T> head_w_, head_b_;
  std::vector<Parameter<T>*> trainable_, all_;
};

inline Json to_json(const DpnConfig& c) {
  return Json{{"patch_px", c.patch_px},
              {"widths", c.widths},
              {"block_kernel", c.block_kernel},
              {"output_scale", c.output_scale},
              {"input_eps", c.input_eps}};
}

inline DpnConfig dpn_config_from_json(const Json& j, DpnConfig c = {}) {
  JsonFields f(j, "dpn");
  f.read("patch_px", c.patch_px);
  f.read("widths", c.widths);
  f.read("block_kernel", c.block_kernel);
  f.read("output_scale", c.output_scale);
  f.read("input_eps", c.input_eps);
  f.finish();
  return c;
}

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::hardswish: return "hardswish";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "hardswish") return Activation::hardswish;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

inline Json to_json(const RinConfig& c) {
  return Json{{"input_px", c.input_px},
              {"grid", c.grid},
              {"stem_channels", c.stem_channels},
              {"widths", c.widths},
              {"trunk_activation", to_string(c.trunk_activation)}};
}

inline RinConfig rin_config_from_json(const Json& j, RinConfig c = {}) {
  JsonFields f(j, "rin");
  f.read("input_px", c.input_px);
  f.read("grid", c.grid);
  f.read("stem_channels", c.stem_channels);
  f.read("widths", c.widths);
  std::string act(to_string(c.trunk_activation));
  f.read("trunk_activation", act);
  c.trunk_activation = parse_activation(act);
  f.finish();
  return c;
}

template <typename Model>
std::vector<const Parameter<float>*> const_tensors(const Model& m) {
  return {m.tensors().begin(), m.tensors().end()};
}

/// Writes `<stem>.sfnn` and the `<stem>.json` sidecar.
template <typename Model>
void save_model(const std::filesystem::path& stem, const Model& model, const Json& sidecar) {
  save_checkpoint(stem.string() + ".sfnn", const_tensors(model));
  std::ofstream out(stem.string() + ".json", std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + stem.string() + ".json");
  out << sidecar.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + stem.string() + ".json");
}

inline Json read_sidecar(const std::filesystem::path& stem) {
  std::ifstream in(stem.string() + ".json");
  if (!in) throw IoError("cannot open model sidecar: " + stem.string() + ".json");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw IoError("model sidecar is not valid JSON: " + std::string(e.what()));
  }
}

}  // namespace sf
