#pragma once

#include <filesystem>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sparsefocus/config.hpp"
#include "sparsefocus/gradcheck_suite.hpp"
#include "sparsefocus/metrics.hpp"
#include "sparsefocus/parallel.hpp"

namespace sf {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitNumeric = 4,
  kExitMissingModel = 5,
};

class MissingModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs a command body and maps the error taxonomy onto exit codes.
template <typename Body>
int run_guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const MissingModelError& e) {
    err << "missing model: " << e.what() << '\n';
    return kExitMissingModel;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

inline void prepare_out_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create output directory " + dir.string() + (ec ? ": " + ec.message() : ""));
  }
}

// ---------------------------------------------------------------- gen-data

inline DatasetSpec dataset_spec(const RunConfig& cfg) {
  DatasetSpec spec;
  spec.scenes_per_class = cfg.data.scenes_per_class;
  spec.optics = cfg.optics;
  spec.geometry = cfg.pipeline.geometry;
  spec.seed = cfg.data.seed;
  return spec;
}

inline std::string split_summary(const Manifest& m) {
  std::map<std::pair<std::string, std::string>, std::set<std::size_t>> scenes;
  for (const auto& r : m.records) scenes[{std::string(to_string(r.sparsity)), std::string(to_string(r.split))}].insert(r.scene_id);
  std::ostringstream os;
  os << "class      train  val  test  (scenes)\n";
  for (Sparsity cls : kAllSparsities) {
    const std::string c(to_string(cls));
    os << std::left << std::setw(10) << c << std::right << std::setw(6) << scenes[{c, "train"}].size() << std::setw(5)
       << scenes[{c, "val"}].size() << std::setw(6) << scenes[{c, "test"}].size() << '\n';
  }
  os << m.records.size() << " images\n";
  return os.str();
}

inline std::filesystem::path cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  if (cfg.data.scenes_per_class == 0) throw ConfigError("scenes_per_class must be positive");
  prepare_out_dir(out);
  const Manifest m = build_dataset(dataset_spec(cfg), out, cfg.threads);
  write_config_echo(out, cfg);
  log << split_summary(m);
  return out / "manifest.json";
}

// ---------------------------------------------------------------- models

inline Json rin_sidecar(const RunConfig& cfg) {
  return Json{{"kind", "rin"}, {"config", to_json(cfg.rin)}, {"grid", cfg.pipeline.geometry.grid},
              {"patch_px", cfg.pipeline.geometry.patch_px}};
}

inline Json dpn_sidecar(const RunConfig& cfg) {
  return Json{{"kind", "dpn"}, {"config", to_json(cfg.dpn)}, {"grid", cfg.pipeline.geometry.grid},
              {"patch_px", cfg.pipeline.geometry.patch_px}};
}

namespace detail {

inline Json sidecar_for(const std::filesystem::path& dir, const std::string& kind) {
  const auto stem = dir / kind;
  if (!std::filesystem::exists(stem.string() + ".sfnn") || !std::filesystem::exists(stem.string() + ".json")) {
    throw MissingModelError("no " + kind + " checkpoint in " + dir.string());
  }
  Json side = read_sidecar(stem);
  if (!side.is_object() || side.value("kind", "") != kind || !side.contains("config")) {
    throw IoError(stem.string() + ".json is not a " + kind + " sidecar");
  }
  return side;
}

}  // namespace detail

inline std::unique_ptr<RinModel<float>> load_rin(const std::filesystem::path& dir) {
  const Json side = detail::sidecar_for(dir, "rin");
  auto model = std::make_unique<RinModel<float>>(rin_config_from_json(side.at("config")));
  load_checkpoint((dir / "rin.sfnn").string(), model->tensors());
  return model;
}

inline std::unique_ptr<DpnModel<float>> load_dpn(const std::filesystem::path& dir) {
  const Json side = detail::sidecar_for(dir, "dpn");
  auto model = std::make_unique<DpnModel<float>>(dpn_config_from_json(side.at("config")));
  load_checkpoint((dir / "dpn.sfnn").string(), model->tensors());
  return model;
}

// ---------------------------------------------------------------- train

enum class Stage { rin, dpn, both };

inline Stage parse_stage(std::string_view s) {
  if (s == "rin") return Stage::rin;
  if (s == "dpn") return Stage::dpn;
  if (s == "both") return Stage::both;
  throw ConfigError("unknown stage '" + std::string(s) + "' (expected rin, dpn or both)");
}

inline void require_matching_geometry(const Manifest& m, const RunConfig& cfg) {
  const auto& a = m.spec.geometry;
  const auto& b = cfg.pipeline.geometry;
  if (a.grid != b.grid || a.patch_px != b.patch_px) {
    throw ConfigError("dataset grid/patch_px differ from the model section of the config");
  }
}

inline std::string curve_csv(const TrainReport& rep) {
  std::string s = "step,loss\n";
  for (std::size_t i = 0; i < rep.step_loss.size(); ++i) s += std::to_string(i) + ',' + detail::fmt(rep.step_loss[i]) + '\n';
  return s;
}

struct DpnValidation {
  double mae_um = 0.0;
  double sign_agreement = 0.0;
  std::size_t patches = 0;
};

inline DpnValidation validate_dpn(DpnModel<float>& dpn, const PatchSet& set, double min_abs_um = 5.0) {
  DpnValidation v;
  v.patches = set.size();
  if (set.size() == 0) return v;
  const auto pred = dpn_predict_set(dpn, set);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - set.target[i]);
  v.mae_um = s / static_cast<double>(pred.size());
  v.sign_agreement = sign_agreement(pred, set.target, min_abs_um);
  return v;
}

inline Json report_json(const TrainReport& rep) {
  return Json{{"steps", rep.steps},
              {"samples", rep.samples},
              {"initial_loss", rep.step_loss.empty() ? 0.0 : rep.step_loss.front()},
              {"final_epoch_loss", rep.epoch_loss.empty() ? 0.0 : rep.epoch_loss.back()},
              {"skipped_batches", rep.skipped_batches},
              {"positive_patches", rep.positive_patches},
              {"negative_patches", rep.negative_patches}};
}

inline Json cmd_train(const RunConfig& cfg, Stage stage, const std::filesystem::path& manifest_path,
                      const std::filesystem::path& out, std::ostream& log) {
  const Manifest m = load_manifest(manifest_path);
  require_matching_geometry(m, cfg);
  prepare_out_dir(out);
  write_config_echo(out, cfg);
  Json summary = Json::object();
  if (stage != Stage::dpn) {
    const auto train = rin_samples(m, Split::train, cfg.pipeline.input_px);
    RinModel<float> rin(cfg.rin, cfg.model_seed);
    log << "rin: " << train.size() << " training images\n";
    const TrainReport rep = train_rin(rin, train, cfg.train_rin, [&](std::size_t epoch, double loss) {
      log << "rin epoch " << epoch + 1 << "/" << cfg.train_rin.epochs << " loss " << loss << '\n' << std::flush;
    });
    save_model(out / "rin", rin, rin_sidecar(cfg));
    detail::write_text(out / "rin_curve.csv", curve_csv(rep));
    Json j = report_json(rep);
    j["val_cell_accuracy"] = rin_cell_accuracy(rin, rin_samples(m, Split::val, cfg.pipeline.input_px));
    summary["rin"] = j;
  }
  if (stage != Stage::rin) {
    const PatchSet train =
        positive_patches(m, Split::train, cfg.train_dpn.max_patches_per_image, cfg.train_dpn.seed);
    DpnModel<float> dpn(cfg.dpn, cfg.model_seed);
    log << "dpn: " << train.size() << " training patches\n";
    const TrainReport rep = train_dpn(dpn, train, cfg.train_dpn, [&](std::size_t epoch, double loss) {
      log << "dpn epoch " << epoch + 1 << "/" << cfg.train_dpn.epochs << " loss " << loss << '\n' << std::flush;
    });
    save_model(out / "dpn", dpn, dpn_sidecar(cfg));
    detail::write_text(out / "dpn_curve.csv", curve_csv(rep));
    const DpnValidation v = validate_dpn(dpn, positive_patches(m, Split::val, 0, cfg.train_dpn.seed));
    Json j = report_json(rep);
    j["val_patch_mae_um"] = v.mae_um;
    j["val_sign_agreement"] = v.sign_agreement;
    j["val_patches"] = v.patches;
    summary["dpn"] = j;
  }
  detail::write_text(out / "train_summary.json", summary.dump(2) + '\n');
  return summary;
}

// ---------------------------------------------------------------- eval

inline constexpr const char* kMethodSparseFocus = "sparsefocus";
inline constexpr const char* kMethodPatchVote = "patchvote";
inline constexpr const char* kMethodHillClimb = "hillclimb";

inline std::vector<std::string> parse_methods(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item != kMethodSparseFocus && item != kMethodPatchVote && item != kMethodHillClimb) {
      throw ConfigError("unknown method '" + item + "'");
    }
    if (std::find(out.begin(), out.end(), item) != out.end()) throw ConfigError("method listed twice: " + item);
    out.push_back(item);
  }
  if (out.empty()) throw ConfigError("no methods given");
  return out;
}

struct MethodResult {
  std::string method;
  std::vector<EvalPair> pairs;
  std::vector<std::size_t> exposures;  // per pair
};

struct EvalResult {
  std::vector<MethodResult> methods;
  std::vector<MetricsReport> reports;
};

inline std::vector<const DatasetRecord*> split_records(const Manifest& m, Split split) {
  std::vector<const DatasetRecord*> out;
  for (const auto& r : m.records)
    if (r.split == split) out.push_back(&r);
  return out;
}

inline MethodResult eval_learned(const std::string& method, const Manifest& m,
                                 const std::vector<const DatasetRecord*>& recs, RinModel<float>* rin,
                                 DpnModel<float>& dpn, const PipelineConfig& pipeline) {
  MethodResult res{method, {}, {}};
  for (const DatasetRecord* r : recs) {
    const Image raw = m.load_image(*r);
    const DefocusEstimate est =
        rin ? predict(*rin, dpn, raw, pipeline) : patchvote_predict(dpn, raw, pipeline.geometry);
    res.pairs.push_back({est.d_um, r->d_um, r->sparsity, r->scene_id});
    res.exposures.push_back(1);
  }
  return res;
}

inline MethodResult eval_hillclimb(const Manifest& m, const std::vector<const DatasetRecord*>& recs,
                                   const RunConfig& cfg) {
  std::vector<std::size_t> scene_ids;
  for (const DatasetRecord* r : recs)
    if (scene_ids.empty() || scene_ids.back() != r->scene_id) scene_ids.push_back(r->scene_id);
  scene_ids.erase(std::unique(scene_ids.begin(), scene_ids.end()), scene_ids.end());
  std::vector<EvalPair> pairs(recs.size());
  std::vector<std::size_t> exposures(recs.size());
  const OpticsConfig& optics = m.spec.optics;
  parallel_for(scene_ids.size(), cfg.threads, [&](std::size_t k) {
    const std::size_t id = scene_ids[k];
    std::unique_ptr<Scene> scene;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const DatasetRecord& r = *recs[i];
      if (r.scene_id != id) continue;
      if (!scene) scene = std::make_unique<Scene>(gen_specimen(r.sparsity, optics.image_px, r.scene_seed));
      FocusProbe probe = simulated_probe(*scene, optics, 0.0, derive_seed(cfg.eval.seed, id));
      const HillClimbResult hc = hillclimb(probe, r.slice_z_um, cfg.eval.hillclimb);
      pairs[i] = {r.slice_z_um - hc.z_best_um, r.d_um, r.sparsity, r.scene_id};
      exposures[i] = probe.captures();
    }
  });
  return {kMethodHillClimb, std::move(pairs), std::move(exposures)};
}

inline std::vector<MetricsReport> method_reports(const MethodResult& res, double dof_um) {
  std::vector<MetricsReport> out;
  for (Sparsity cls : kAllSparsities) {
    std::vector<EvalPair> sub;
    double exp_sum = 0.0;
    for (std::size_t i = 0; i < res.pairs.size(); ++i) {
      if (res.pairs[i].sparsity != cls) continue;
      sub.push_back(res.pairs[i]);
      exp_sum += static_cast<double>(res.exposures[i]);
    }
    if (sub.empty()) continue;
    out.push_back(make_report(res.method, std::string(to_string(cls)), sub, dof_um,
                              exp_sum / static_cast<double>(sub.size())));
  }
  return out;
}

/// Evaluates the listed methods on one split of a dataset. Learned methods
/// load their checkpoints from models_dir.
inline EvalResult evaluate(const RunConfig& cfg, const Manifest& m, const std::vector<std::string>& methods,
                           const std::filesystem::path& models_dir, Split split, std::ostream& log) {
  require_matching_geometry(m, cfg);
  const bool need_rin = std::find(methods.begin(), methods.end(), kMethodSparseFocus) != methods.end();
  const bool need_dpn = need_rin || std::find(methods.begin(), methods.end(), kMethodPatchVote) != methods.end();
  std::unique_ptr<RinModel<float>> rin;
  std::unique_ptr<DpnModel<float>> dpn;
  if (need_rin) rin = load_rin(models_dir);
  if (need_dpn) dpn = load_dpn(models_dir);
  const auto recs = split_records(m, split);
  if (recs.empty()) throw ConfigError("dataset has no " + std::string(to_string(split)) + " records");
  EvalResult out;
  for (const auto& method : methods) {
    log << "eval " << method << " on " << recs.size() << " images\n" << std::flush;
    if (method == kMethodSparseFocus) {
      out.methods.push_back(eval_learned(method, m, recs, rin.get(), *dpn, cfg.pipeline));
    } else if (method == kMethodPatchVote) {
      out.methods.push_back(eval_learned(method, m, recs, nullptr, *dpn, cfg.pipeline));
    } else {
      out.methods.push_back(eval_hillclimb(m, recs, cfg));
    }
    for (auto& r : method_reports(out.methods.back(), m.spec.optics.dof_um)) out.reports.push_back(std::move(r));
  }
  return out;
}

inline void write_eval_outputs(const std::filesystem::path& out, const EvalResult& res, const RunConfig& cfg,
                               double dof_um) {
  std::vector<TaggedPairs> sets;
  for (const auto& mr : res.methods) sets.push_back({mr.method, mr.pairs});
  write_metrics_csv(out / "metrics.csv", res.reports);
  write_regression_csv(out / "regression.csv", sets, dof_um);
  write_binned_csv(out / "binned_mae.csv", sets, cfg.eval.bin_edges);
}

inline EvalResult cmd_eval(const RunConfig& cfg, const std::filesystem::path& models_dir,
                           const std::filesystem::path& manifest_path, const std::vector<std::string>& methods,
                           const std::filesystem::path& out, std::ostream& log) {
  const Manifest m = load_manifest(manifest_path);
  EvalResult res = evaluate(cfg, m, methods, models_dir, Split::test, log);
  prepare_out_dir(out);
  write_config_echo(out, cfg);
  write_eval_outputs(out, res, cfg, m.spec.optics.dof_um);
  log << metrics_csv(res.reports);
  return res;
}

// ---------------------------------------------------------------- wsi

struct WsiResult {
  FocalSurface surface;
  FocusMap kfp, one_shot;
  ErrorMap kfp_error, one_shot_error;
};

inline TileEstimator learned_estimator(RinModel<float>& rin, DpnModel<float>& dpn, const PipelineConfig& pipeline) {
  return [&rin, &dpn, pipeline](const Image& img, double) {
    const DefocusEstimate est = predict(rin, dpn, img, pipeline);
    return TileEstimate{est.d_um, est.used_fallback};
  };
}

inline WsiResult simulate_wsi(const RunConfig& cfg, SurfaceKind kind, const TileEstimator& estimator) {
  SurfaceParams params = cfg.wsi.surface;
  params.kind = kind;
  params.z_limit_um = cfg.optics.z_range_um;
  WsiResult res;
  res.surface = gen_surface(params, cfg.wsi.seed);
  SlideSim slide(res.surface, cfg.optics, cfg.wsi.mixture, cfg.wsi.seed);
  res.kfp = kfp_focusmap(slide, cfg.wsi.kfp_spacing, cfg.eval.hillclimb);
  res.one_shot = oneshot_focusmap(slide, estimator);
  res.kfp_error = error_map(res.kfp, res.surface);
  res.one_shot_error = error_map(res.one_shot, res.surface);
  return res;
}

inline Json wsi_summary(const WsiResult& r, SurfaceKind kind, bool oracle) {
  return Json{{"surface", to_string(kind)},
              {"rows", r.surface.z.rows},
              {"cols", r.surface.z.cols},
              {"estimator", oracle ? "oracle" : "sparsefocus"},
              {"kfp", scan_json(r.kfp, r.kfp_error)},
              {"one_shot", scan_json(r.one_shot, r.one_shot_error)}};
}

inline WsiResult cmd_wsi(const RunConfig& cfg, SurfaceKind kind, const std::filesystem::path& models_dir, bool oracle,
                         const std::filesystem::path& out, std::ostream& log) {
  std::unique_ptr<RinModel<float>> rin;
  std::unique_ptr<DpnModel<float>> dpn;
  TileEstimator estimator = oracle_estimator();
  if (!oracle) {
    rin = load_rin(models_dir);
    dpn = load_dpn(models_dir);
    estimator = learned_estimator(*rin, *dpn, cfg.pipeline);
  }
  WsiResult r = simulate_wsi(cfg, kind, estimator);
  prepare_out_dir(out);
  write_config_echo(out, cfg);
  const std::pair<const char*, const Grid2*> grids[] = {{"truth", &r.surface.z},
                                                         {"kfp_map", &r.kfp.z},
                                                         {"oneshot_map", &r.one_shot.z},
                                                         {"kfp_error", &r.kfp_error.abs_error},
                                                         {"oneshot_error", &r.one_shot_error.abs_error}};
  for (const auto& [name, g] : grids) {
    detail::write_text(out / (std::string(name) + ".csv"), grid_csv(*g));
    write_sfim(out / (std::string(name) + ".sfim"), grid_image(*g));
  }
  const Json summary = wsi_summary(r, kind, oracle);
  detail::write_text(out / "summary.json", summary.dump(2) + '\n');
  log << summary.dump(2) << '\n';
  return r;
}

// ---------------------------------------------------------------- gradcheck

struct GradCheckOptions {
  std::size_t inits = 10;
  double eps = 1e-5;
  double tolerance = 1e-5;
  bool inject_fault = false;
};

inline std::string gradcheck_table(const std::vector<GradCheckRow>& rows, double tolerance) {
  std::ostringstream os;
  os << "layer,max_rel_error,coordinates,inits,status\n";
  for (const auto& r : rows) {
    os << r.layer << ',' << detail::fmt(r.max_rel_error) << ',' << r.coordinates << ',' << r.inits << ','
       << (r.max_rel_error <= tolerance ? "pass" : "FAIL") << '\n';
  }
  return os.str();
}

/// Returns kExitOk when every layer stays within tolerance.
inline int cmd_gradcheck(const GradCheckOptions& opt, const std::filesystem::path& out, std::ostream& log) {
  if (opt.inits == 0) throw ConfigError("gradcheck: inits must be positive");
  if (!(opt.eps > 0.0)) throw ConfigError("gradcheck: eps must be positive");
  const auto rows = run_gradcheck_suite(opt.inits, opt.eps, opt.inject_fault);
  const std::string table = gradcheck_table(rows, opt.tolerance);
  log << table;
  if (!out.empty()) {
    prepare_out_dir(out);
    detail::write_text(out / "gradcheck.csv", table);
  }
  bool ok = true;
  for (const auto& r : rows) ok = ok && r.max_rel_error <= opt.tolerance;
  log << (ok ? "gradcheck: pass\n" : "gradcheck: FAIL\n");
  return ok ? kExitOk : kExitFailure;
}

}  // namespace sf
