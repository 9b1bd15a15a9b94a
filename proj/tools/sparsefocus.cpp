#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "sparsefocus/commands.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::size_t> threads;
  std::string out;
};

sf::RunConfig resolve_config(const Common& c) {
  sf::RunConfig cfg = c.config.empty() ? sf::RunConfig{} : sf::load_config(c.config);
  if (c.threads) {
    cfg.threads = *c.threads;
  } else if (const char* env = std::getenv("SPARSEFOCUS_THREADS"); env && *env) {
    try {
      cfg.threads = static_cast<std::size_t>(std::stoul(env));
    } catch (const std::exception&) {
      throw sf::ConfigError(std::string("SPARSEFOCUS_THREADS is not a number: ") + env);
    }
  }
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* app, Common& c, const std::string& default_out) {
  app->add_option("--config", c.config, "JSON run configuration");
  app->add_option("--threads", c.threads, "worker thread cap (falls back to SPARSEFOCUS_THREADS)");
  c.out = default_out;
  app->add_option("--out", c.out, "output directory")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SparseFocus autofocus lab: synthetic data, training, evaluation and WSI simulation"};
  app.require_subcommand(1);

  Common gen_common, train_common, eval_common, wsi_common, gc_common;

  auto* gen = app.add_subcommand("gen-data", "render, label and split a synthetic z-stack dataset");
  add_common(gen, gen_common, "data");
  std::optional<std::size_t> scenes_per_class;
  std::optional<std::uint64_t> data_seed;
  gen->add_option("--scenes-per-class", scenes_per_class, "scenes per sparsity class");
  gen->add_option("--seed", data_seed, "dataset seed");

  auto* train = app.add_subcommand("train", "train RIN and/or DPN on a dataset");
  add_common(train, train_common, "models");
  std::string stage = "both", train_manifest = "data/manifest.json";
  train->add_option("--stage", stage, "rin, dpn or both")->capture_default_str();
  train->add_option("--data", train_manifest, "dataset manifest")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "evaluate methods on the test split");
  add_common(eval, eval_common, "eval");
  std::string eval_models = "models", eval_manifest = "data/manifest.json",
              methods = "sparsefocus,patchvote,hillclimb";
  eval->add_option("--models", eval_models, "directory with rin/dpn checkpoints")->capture_default_str();
  eval->add_option("--data", eval_manifest, "dataset manifest")->capture_default_str();
  eval->add_option("--methods", methods, "comma-separated method list")->capture_default_str();

  auto* wsi = app.add_subcommand("wsi", "simulate whole-slide focus-map construction");
  add_common(wsi, wsi_common, "wsi");
  std::string surface = "bumpy", wsi_models = "models";
  bool oracle = false;
  wsi->add_option("--surface", surface, "plane or bumpy")->capture_default_str();
  wsi->add_option("--models", wsi_models, "directory with rin/dpn checkpoints")->capture_default_str();
  wsi->add_flag("--oracle", oracle, "use the true defocus as the one-shot estimate");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every layer's backward pass");
  add_common(gc, gc_common, "");
  sf::GradCheckOptions gc_opt;
  gc->add_option("--inits", gc_opt.inits, "random initializations per layer")->capture_default_str();
  gc->add_option("--eps", gc_opt.eps, "central-difference step")->capture_default_str();
  gc->add_option("--tolerance", gc_opt.tolerance, "max relative error")->capture_default_str();
  gc->add_flag("--inject-fault", gc_opt.inject_fault, "add a layer with a deliberately wrong backward");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : sf::kExitConfig;
  }

  return sf::run_guarded(std::cerr, [&]() -> int {
    if (gen->parsed()) {
      sf::RunConfig cfg = resolve_config(gen_common);
      if (scenes_per_class) cfg.data.scenes_per_class = *scenes_per_class;
      if (data_seed) cfg.data.seed = *data_seed;
      const auto manifest = sf::cmd_gen_data(cfg, gen_common.out, std::cout);
      std::cout << manifest.string() << '\n';
      return sf::kExitOk;
    }
    if (train->parsed()) {
      const sf::RunConfig cfg = resolve_config(train_common);
      sf::cmd_train(cfg, sf::parse_stage(stage), train_manifest, train_common.out, std::cout);
      return sf::kExitOk;
    }
    if (eval->parsed()) {
      const sf::RunConfig cfg = resolve_config(eval_common);
      sf::cmd_eval(cfg, eval_models, eval_manifest, sf::parse_methods(methods), eval_common.out, std::cout);
      return sf::kExitOk;
    }
    if (wsi->parsed()) {
      const sf::RunConfig cfg = resolve_config(wsi_common);
      sf::cmd_wsi(cfg, sf::parse_surface(surface), wsi_models, oracle, wsi_common.out, std::cout);
      return sf::kExitOk;
    }
    const sf::RunConfig cfg = resolve_config(gc_common);
    const int rc = sf::cmd_gradcheck(gc_opt, gc_common.out, std::cout);
    if (!gc_common.out.empty()) sf::write_config_echo(gc_common.out, cfg);
    return rc;
  });
}
