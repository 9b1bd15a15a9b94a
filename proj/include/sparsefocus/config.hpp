#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sparsefocus/baselines.hpp"
#include "sparsefocus/dataset.hpp"
#include "sparsefocus/json_fields.hpp"
#include "sparsefocus/models.hpp"
#include "sparsefocus/pipeline.hpp"
#include "sparsefocus/training.hpp"
#include "sparsefocus/wsi.hpp"

namespace sf {

struct DataSection {
  std::size_t scenes_per_class = 60;
  std::uint64_t seed = 1;
};

struct EvalSection {
  std::vector<double> bin_edges{0.0, 5.0, 10.0, 15.0, 20.0, 30.0};
  HillClimbConfig hillclimb;
  std::uint64_t seed = 7;
};

struct WsiSection {
  SurfaceParams surface;
  std::size_t kfp_spacing = 5;
  SparsityMixture mixture;
  std::uint64_t seed = 11;
};

struct PathsSection {
  std::string data = "data";
  std::string models = "models";
  std::string out = "out";
};

/// Everything a command needs; every field has a default.
struct RunConfig {
  OpticsConfig optics;
  PipelineConfig pipeline;
  RinConfig rin;
  DpnConfig dpn;
  TrainConfig train_rin = default_rin_train();
  TrainConfig train_dpn = default_dpn_train();
  std::uint64_t model_seed = 3;
  DataSection data;
  EvalSection eval;
  WsiSection wsi;
  PathsSection paths;
  std::size_t threads = 1;

  void validate() const {
    optics.validate();
    pipeline.selection.validate(pipeline.geometry.grid);
    if (rin.grid != pipeline.geometry.grid) throw ConfigError("model: rin.grid must equal grid");
    if (rin.input_px != pipeline.input_px) throw ConfigError("model: rin.input_px must equal input_px");
    if (dpn.patch_px != pipeline.geometry.patch_px) throw ConfigError("model: dpn.patch_px must equal patch_px");
    eval.hillclimb.validate();
    if (wsi.kfp_spacing < 2) throw ConfigError("wsi: kfp_spacing must be at least 2");
    if (threads == 0) throw ConfigError("threads must be positive");
  }
};

inline std::string_view to_string(LrSchedule s) { return s == LrSchedule::cosine ? "cosine" : "constant"; }

inline LrSchedule parse_schedule(std::string_view s) {
  if (s == "cosine") return LrSchedule::cosine;
  if (s == "constant") return LrSchedule::constant;
  throw ConfigError("unknown lr schedule '" + std::string(s) + "'");
}

inline Json to_json(const TrainConfig& c) {
  return Json{{"lr", c.lr},
              {"batch", c.batch},
              {"epochs", c.epochs},
              {"max_steps", c.max_steps},
              {"schedule", to_string(c.schedule)},
              {"augment", c.augment},
              {"brightness", {c.augmentation.brightness_lo, c.augmentation.brightness_hi}},
              {"contrast", {c.augmentation.contrast_lo, c.augmentation.contrast_hi}},
              {"seed", c.seed},
              {"max_patches_per_image", c.max_patches_per_image}};
}

inline TrainConfig train_from_json(const Json& j, TrainConfig c, const char* section) {
  JsonFields f(j, section);
  f.read("lr", c.lr);
  f.read("batch", c.batch);
  f.read("epochs", c.epochs);
  f.read("max_steps", c.max_steps);
  std::string sched(to_string(c.schedule));
  f.read("schedule", sched);
  c.schedule = parse_schedule(sched);
  f.read("augment", c.augment);
  std::vector<double> range;
  range = {c.augmentation.brightness_lo, c.augmentation.brightness_hi};
  f.read("brightness", range);
  if (range.size() != 2) throw ConfigError(std::string(section) + ".brightness must be [lo, hi]");
  c.augmentation.brightness_lo = range[0];
  c.augmentation.brightness_hi = range[1];
  range = {c.augmentation.contrast_lo, c.augmentation.contrast_hi};
  f.read("contrast", range);
  if (range.size() != 2) throw ConfigError(std::string(section) + ".contrast must be [lo, hi]");
  c.augmentation.contrast_lo = range[0];
  c.augmentation.contrast_hi = range[1];
  f.read("seed", c.seed);
  f.read("max_patches_per_image", c.max_patches_per_image);
  f.finish();
  if (!(c.lr > 0.0)) throw ConfigError(std::string(section) + ".lr must be positive");
  if (c.batch == 0) throw ConfigError(std::string(section) + ".batch must be positive");
  return c;
}

inline Json to_json(const HillClimbConfig& h) {
  return Json{{"initial_step_um", h.initial_step_um}, {"shrink", h.shrink},
              {"min_step_um", h.min_step_um},         {"max_evaluations", h.max_evaluations},
              {"method", to_string(h.method)}};
}

inline HillClimbConfig hillclimb_from_json(const Json& j, HillClimbConfig h) {
  JsonFields f(j, "eval.hillclimb");
  f.read("initial_step_um", h.initial_step_um);
  f.read("shrink", h.shrink);
  f.read("min_step_um", h.min_step_um);
  f.read("max_evaluations", h.max_evaluations);
  std::string method(to_string(h.method));
  f.read("method", method);
  h.method = parse_sharpness(method);
  f.finish();
  return h;
}

inline Json to_json(const RunConfig& c) {
  const auto& sel = c.pipeline.selection;
  const auto& s = c.wsi.surface;
  return Json{
      {"optics", to_json(c.optics)},
      {"model",
       {{"grid", c.pipeline.geometry.grid},
        {"patch_px", c.pipeline.geometry.patch_px},
        {"input_px", c.pipeline.input_px},
        {"seed", c.model_seed},
        {"selection",
         {{"rho", sel.rho},
          {"k_dense", sel.k_dense},
          {"k_sparse", sel.k_sparse},
          {"k_ex_sparse", sel.k_ex_sparse},
          {"dense_min", sel.dense_min},
          {"sparse_min", sel.sparse_min}}},
        {"rin", to_json(c.rin)},
        {"dpn", to_json(c.dpn)}}},
      {"training", {{"rin", to_json(c.train_rin)}, {"dpn", to_json(c.train_dpn)}}},
      {"data", {{"scenes_per_class", c.data.scenes_per_class}, {"seed", c.data.seed}}},
      {"eval", {{"bin_edges", c.eval.bin_edges}, {"hillclimb", to_json(c.eval.hillclimb)}, {"seed", c.eval.seed}}},
      {"wsi",
       {{"rows", s.rows},
        {"cols", s.cols},
        {"plane", {s.a, s.b, s.c}},
        {"amplitude_um", s.amplitude_um},
        {"bumps", s.bumps},
        {"bump_sigma_tiles", s.bump_sigma_tiles},
        {"kfp_spacing", c.wsi.kfp_spacing},
        {"mixture", {c.wsi.mixture.dense, c.wsi.mixture.sparse, c.wsi.mixture.ex_sparse}},
        {"seed", c.wsi.seed}}},
      {"paths", {{"data", c.paths.data}, {"models", c.paths.models}, {"out", c.paths.out}}},
      {"threads", c.threads}};
}

inline RunConfig config_from_json(const Json& j) {
  RunConfig c;
  JsonFields top(j, "config");
  if (const Json* o = top.sub("optics")) c.optics = optics_from_json(*o, c.optics);
  if (const Json* m = top.sub("model")) {
    JsonFields f(*m, "model");
    f.read("grid", c.pipeline.geometry.grid);
    f.read("patch_px", c.pipeline.geometry.patch_px);
    f.read("input_px", c.pipeline.input_px);
    f.read("seed", c.model_seed);
    c.rin.grid = c.pipeline.geometry.grid;
    c.rin.input_px = c.pipeline.input_px;
    c.dpn.patch_px = c.pipeline.geometry.patch_px;
    if (const Json* s = f.sub("selection")) {
      JsonFields fs(*s, "model.selection");
      auto& sel = c.pipeline.selection;
      fs.read("rho", sel.rho);
      fs.read("k_dense", sel.k_dense);
      fs.read("k_sparse", sel.k_sparse);
      fs.read("k_ex_sparse", sel.k_ex_sparse);
      fs.read("dense_min", sel.dense_min);
      fs.read("sparse_min", sel.sparse_min);
      fs.finish();
    }
    if (const Json* r = f.sub("rin")) c.rin = rin_config_from_json(*r, c.rin);
    if (const Json* d = f.sub("dpn")) c.dpn = dpn_config_from_json(*d, c.dpn);
    f.finish();
  }
  if (const Json* t = top.sub("training")) {
    JsonFields f(*t, "training");
    if (const Json* r = f.sub("rin")) c.train_rin = train_from_json(*r, c.train_rin, "training.rin");
    if (const Json* d = f.sub("dpn")) c.train_dpn = train_from_json(*d, c.train_dpn, "training.dpn");
    f.finish();
  }
  if (const Json* d = top.sub("data")) {
    JsonFields f(*d, "data");
    f.read("scenes_per_class", c.data.scenes_per_class);
    f.read("seed", c.data.seed);
    f.finish();
  }
  if (const Json* e = top.sub("eval")) {
    JsonFields f(*e, "eval");
    f.read("bin_edges", c.eval.bin_edges);
    if (const Json* h = f.sub("hillclimb")) c.eval.hillclimb = hillclimb_from_json(*h, c.eval.hillclimb);
    f.read("seed", c.eval.seed);
    f.finish();
  }
  if (const Json* w = top.sub("wsi")) {
    JsonFields f(*w, "wsi");
    auto& s = c.wsi.surface;
    f.read("rows", s.rows);
    f.read("cols", s.cols);
    std::vector<double> plane{s.a, s.b, s.c};
    f.read("plane", plane);
    if (plane.size() != 3) throw ConfigError("wsi.plane must be [a, b, c]");
    s.a = plane[0];
    s.b = plane[1];
    s.c = plane[2];
    f.read("amplitude_um", s.amplitude_um);
    f.read("bumps", s.bumps);
    f.read("bump_sigma_tiles", s.bump_sigma_tiles);
    f.read("kfp_spacing", c.wsi.kfp_spacing);
    std::vector<double> mix{c.wsi.mixture.dense, c.wsi.mixture.sparse, c.wsi.mixture.ex_sparse};
    f.read("mixture", mix);
    if (mix.size() != 3) throw ConfigError("wsi.mixture must be [dense, sparse, ex_sparse]");
    c.wsi.mixture = {mix[0], mix[1], mix[2]};
    f.read("seed", c.wsi.seed);
    f.finish();
  }
  if (const Json* p = top.sub("paths")) {
    JsonFields f(*p, "paths");
    f.read("data", c.paths.data);
    f.read("models", c.paths.models);
    f.read("out", c.paths.out);
    f.finish();
  }
  top.read("threads", c.threads);
  top.finish();
  c.wsi.surface.z_limit_um = c.optics.z_range_um;
  c.eval.hillclimb.z_min_um = -c.optics.z_range_um;
  c.eval.hillclimb.z_max_um = c.optics.z_range_um;
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return config_from_json(j);
}

inline void write_config_echo(const std::filesystem::path& dir, const RunConfig& c) {
  std::ofstream out(dir / "config.json", std::ios::trunc);
  if (!out) throw IoError("cannot write config echo into " + dir.string());
  out << to_json(c).dump(2) << '\n';
}

}  // namespace sf
