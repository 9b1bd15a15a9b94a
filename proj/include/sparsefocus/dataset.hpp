#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "sparsefocus/errors.hpp"
#include "sparsefocus/image.hpp"
#include "sparsefocus/json_fields.hpp"
#include "sparsefocus/labeling.hpp"
#include "sparsefocus/optics.hpp"
#include "sparsefocus/parallel.hpp"
#include "sparsefocus/rng.hpp"

namespace sf {

enum class Split { train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw IoError("unknown split '" + std::string(s) + "'");
}

/// Patch grid laid over the centre crop of a raw image.
struct GridGeometry {
  std::size_t grid = 9;
  std::size_t patch_px = 32;

  std::size_t crop_px() const { return grid * patch_px; }
};

/// Offsets of the centred crop_px square inside an h x w image.
inline std::pair<std::size_t, std::size_t> crop_origin(std::size_t h, std::size_t w, const GridGeometry& geo) {
  if (h < geo.crop_px() || w < geo.crop_px()) {
    throw ShapeError("crop", h < geo.crop_px() ? "height" : "width",
                     "image smaller than the " + std::to_string(geo.crop_px()) + " px patch grid");
  }
  return {(h - geo.crop_px()) / 2, (w - geo.crop_px()) / 2};
}

/// One rendered slice: d_um is the signed distance from the labelled focus to
/// the slice plane, and patch_d_um / richness are row-major over the grid.
struct DatasetRecord {
  std::string image;
  std::size_t scene_id = 0;
  std::uint64_t scene_seed = 0;
  Sparsity sparsity = Sparsity::dense;
  Split split = Split::train;
  double slice_z_um = 0.0;
  double focus_um = 0.0;
  LabelStatus focus_status = LabelStatus::ok;
  double d_um = 0.0;
  std::vector<double> patch_d_um;
  std::vector<float> richness;
};

struct DatasetSpec {
  std::size_t scenes_per_class = 60;
  OpticsConfig optics;
  GridGeometry geometry;
  std::uint64_t seed = 1;
  LabelConfig label;
  RichnessConfig richness;
};

inline constexpr int kManifestVersion = 1;

struct Manifest {
  int version = kManifestVersion;
  DatasetSpec spec;
  std::vector<DatasetRecord> records;
  std::filesystem::path dir;

  std::filesystem::path image_path(const DatasetRecord& r) const { return dir / r.image; }
  Image load_image(const DatasetRecord& r) const { return read_sfim(image_path(r)); }
};

/// Scene counts per split for one class: 8:1:1, rounded, remainder to test.
struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
};

inline SplitCounts split_counts(std::size_t n) {
  SplitCounts c;
  c.train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
  c.val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(n)));
  if (c.train + c.val > n) c.val = n - c.train;
  c.test = n - c.train - c.val;
  return c;
}

/// Split tag for each of n scenes of one class, from a seeded permutation.
inline std::vector<Split> assign_splits(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  const SplitCounts c = split_counts(n);
  std::vector<Split> out(n, Split::test);
  for (std::size_t k = 0; k < n; ++k) {
    out[order[k]] = k < c.train ? Split::train : (k < c.train + c.val ? Split::val : Split::test);
  }
  return out;
}

struct LabeledScene {
  FocusLabel global;
  std::vector<FocusLabel> patches;
  RichnessMatrix richness;
};

/// Global and per-patch focus labels plus W* (from the d = 0 slice) for one stack.
inline LabeledScene label_stack(const ZStack& stack, const DatasetSpec& spec) {
  const Image& first = stack.slices.front();
  const auto [oy, ox] = crop_origin(first.height(), first.width(), spec.geometry);
  const std::size_t g = spec.geometry.grid, p = spec.geometry.patch_px;
  LabeledScene out;
  out.global = label_focal_plane(stack, {oy, ox, g * p, g * p}, spec.label);
  for (std::size_t i = 0; i < g; ++i)
    for (std::size_t j = 0; j < g; ++j)
      out.patches.push_back(label_focal_plane(stack, {oy + i * p, ox + j * p, p, p}, spec.label));
  std::size_t zero = 0;
  for (std::size_t k = 0; k < stack.defocus_um.size(); ++k)
    if (stack.defocus_um[k] == 0.0) zero = k;
  out.richness = content_richness(stack.slices[zero].crop(oy, ox, g * p, g * p), g, spec.richness);
  return out;
}

inline Json to_json(const DatasetRecord& r) {
  return Json{{"image", r.image},
              {"scene_id", r.scene_id},
              {"scene_seed", r.scene_seed},
              {"class", to_string(r.sparsity)},
              {"split", to_string(r.split)},
              {"slice_z_um", r.slice_z_um},
              {"focus_um", r.focus_um},
              {"focus_status", to_string(r.focus_status)},
              {"d_um", r.d_um},
              {"patch_d_um", r.patch_d_um},
              {"richness", r.richness}};
}

inline DatasetRecord record_from_json(const Json& j) {
  DatasetRecord r;
  try {
    r.image = j.at("image").get<std::string>();
    r.scene_id = j.at("scene_id").get<std::size_t>();
    r.scene_seed = j.at("scene_seed").get<std::uint64_t>();
    r.sparsity = parse_sparsity(j.at("class").get<std::string>());
    r.split = parse_split(j.at("split").get<std::string>());
    r.slice_z_um = j.at("slice_z_um").get<double>();
    r.focus_um = j.at("focus_um").get<double>();
    r.focus_status = parse_label_status(j.at("focus_status").get<std::string>());
    r.d_um = j.at("d_um").get<double>();
    r.patch_d_um = j.at("patch_d_um").get<std::vector<double>>();
    r.richness = j.at("richness").get<std::vector<float>>();
  } catch (const Json::exception& e) {
    throw IoError(std::string("malformed manifest record: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("malformed manifest record: ") + e.what());
  }
  return r;
}

inline Json to_json(const Manifest& m) {
  Json records = Json::array();
  for (const auto& r : m.records) records.push_back(to_json(r));
  return Json{{"version", m.version},
              {"optics", to_json(m.spec.optics)},
              {"grid", m.spec.geometry.grid},
              {"patch_px", m.spec.geometry.patch_px},
              {"seed", m.spec.seed},
              {"scenes_per_class", m.spec.scenes_per_class},
              {"label_method", to_string(m.spec.label.method)},
              {"tau_c", m.spec.richness.tau_c},
              {"richness_std_threshold", m.spec.richness.std_threshold},
              {"records", records}};
}

inline void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << to_json(m).dump(1) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw IoError("manifest is not valid JSON: " + std::string(e.what()));
  }
  Manifest m;
  try {
    m.version = j.at("version").get<int>();
    if (m.version != kManifestVersion) throw IoError("unsupported manifest version " + std::to_string(m.version));
    m.spec.optics = optics_from_json(j.at("optics"));
    m.spec.geometry.grid = j.at("grid").get<std::size_t>();
    m.spec.geometry.patch_px = j.at("patch_px").get<std::size_t>();
    m.spec.seed = j.at("seed").get<std::uint64_t>();
    m.spec.scenes_per_class = j.at("scenes_per_class").get<std::size_t>();
    m.spec.label.method = parse_sharpness(j.at("label_method").get<std::string>());
    m.spec.richness.tau_c = j.at("tau_c").get<double>();
    m.spec.richness.std_threshold = j.at("richness_std_threshold").get<double>();
    for (const auto& r : j.at("records")) m.records.push_back(record_from_json(r));
  } catch (const Json::exception& e) {
    throw IoError("malformed manifest: " + std::string(e.what()));
  } catch (const ConfigError& e) {
    throw IoError("malformed manifest: " + std::string(e.what()));
  }
  const std::size_t cells = m.spec.geometry.grid * m.spec.geometry.grid;
  for (const auto& r : m.records) {
    if (r.patch_d_um.size() != cells || r.richness.size() != cells) {
      throw IoError("manifest record " + r.image + " has the wrong number of patch labels");
    }
  }
  m.dir = path.parent_path();
  return m;
}

namespace detail {

// Removes everything build_dataset created if it does not finish.
class OutputGuard {
 public:
  explicit OutputGuard(const std::filesystem::path& dir) : dir_(dir), existed_(std::filesystem::exists(dir)) {}
  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    if (!existed_) {
      std::filesystem::remove_all(dir_, ec);
      return;
    }
    for (const auto& f : created_) std::filesystem::remove(f, ec);
    std::filesystem::remove(dir_ / "images", ec);
  }
  void created(const std::filesystem::path& p) {
    std::lock_guard lock(m_);
    created_.push_back(p);
  }
  void commit() { committed_ = true; }

 private:
  std::filesystem::path dir_;
  bool existed_;
  bool committed_ = false;
  std::mutex m_;
  std::vector<std::filesystem::path> created_;
};

}  // namespace detail

/// Renders, labels and writes every scene's z-stack under out_dir and writes
/// out_dir/manifest.json. Scenes are numbered class-major.
inline Manifest build_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir,
                              std::size_t threads = 1) {
  if (spec.scenes_per_class == 0) throw ConfigError("build_dataset: scenes_per_class must be positive");
  spec.optics.validate();
  if (spec.geometry.grid == 0 || spec.geometry.patch_px == 0) throw ConfigError("build_dataset: empty grid");
  if (spec.optics.image_px < spec.geometry.crop_px()) {
    throw ConfigError("build_dataset: image_px smaller than grid * patch_px");
  }
  const auto z_positions = zstack_positions(spec.optics);

  detail::OutputGuard guard(out_dir);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  const std::size_t n = spec.scenes_per_class;
  std::vector<Split> splits;
  for (std::size_t c = 0; c < 3; ++c) {
    auto s = assign_splits(n, derive_seed(spec.seed, 0x5B117, c));
    splits.insert(splits.end(), s.begin(), s.end());
  }

  const double lim = spec.optics.z_range_um;
  auto clamp_range = [lim](double d) { return std::clamp(d, -lim, lim); };
  std::vector<std::vector<DatasetRecord>> per_scene(3 * n);
  parallel_for(3 * n, threads, [&](std::size_t id) {
    const Sparsity cls = kAllSparsities[id / n];
    const std::uint64_t scene_seed = derive_seed(spec.seed, 0x5CE, id);
    const Scene scene = gen_specimen(cls, spec.optics.image_px, scene_seed);
    const ZStack stack = gen_zstack(scene, spec.optics, derive_seed(scene_seed, 0x57AC));
    const LabeledScene labels = label_stack(stack, spec);
    for (std::size_t k = 0; k < stack.slices.size(); ++k) {
      DatasetRecord r;
      char name[64];
      std::snprintf(name, sizeof name, "images/s%05zu_z%03zu.sfim", id, k);
      r.image = name;
      r.scene_id = id;
      r.scene_seed = scene_seed;
      r.sparsity = cls;
      r.split = splits[id];
      r.slice_z_um = z_positions[k];
      r.focus_um = labels.global.focus_um;
      r.focus_status = labels.global.status;
      r.d_um = clamp_range(z_positions[k] - labels.global.focus_um);
      for (std::size_t c = 0; c < labels.patches.size(); ++c) {
        const FocusLabel& pl = labels.patches[c];
        const bool own = pl.status == LabelStatus::ok && labels.richness.cells[c] > 0.5f;
        r.patch_d_um.push_back(clamp_range(z_positions[k] - (own ? pl.focus_um : labels.global.focus_um)));
      }
      r.richness = labels.richness.cells;
      guard.created(out_dir / r.image);
      write_sfim(out_dir / r.image, stack.slices[k]);
      per_scene[id].push_back(std::move(r));
    }
  });

  Manifest m;
  m.spec = spec;
  m.dir = out_dir;
  for (auto& recs : per_scene)
    for (auto& r : recs) m.records.push_back(std::move(r));
  guard.created(out_dir / "manifest.json");
  write_manifest(out_dir / "manifest.json", m);
  guard.commit();
  return m;
}

}  // namespace sf
