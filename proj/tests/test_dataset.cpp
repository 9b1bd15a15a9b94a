#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "sparsefocus/augment.hpp"
#include "sparsefocus/dataset.hpp"
#include "sparsefocus/labeling.hpp"
#include "sparsefocus/sharpness.hpp"

namespace sf {
namespace {

namespace fs = std::filesystem;

OpticsConfig noiseless() {
  OpticsConfig c;
  c.noise_sigma = 0.0;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Image checkerboard(std::size_t n, std::size_t square) {
  Image img(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) img(y, x) = ((y / square + x / square) % 2) ? 1.0f : 0.0f;
  return img;
}

// [1 2 1]/4 separable blur with edge replication, applied `passes` times.
Image binomial_blur(Image img, int passes) {
  const long h = static_cast<long>(img.height()), w = static_cast<long>(img.width());
  auto at = [](const Image& m, long y, long x, long hh, long ww) {
    return m(static_cast<std::size_t>(std::clamp(y, 0L, hh - 1)), static_cast<std::size_t>(std::clamp(x, 0L, ww - 1)));
  };
  for (int p = 0; p < passes; ++p) {
    Image tmp(img.height(), img.width()), out(img.height(), img.width());
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x)
        tmp(y, x) = 0.25f * at(img, y, x - 1, h, w) + 0.5f * at(img, y, x, h, w) + 0.25f * at(img, y, x + 1, h, w);
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x)
        out(y, x) = 0.25f * at(tmp, y - 1, x, h, w) + 0.5f * at(tmp, y, x, h, w) + 0.25f * at(tmp, y + 1, x, h, w);
    img = out;
  }
  return img;
}

double fine_grid_peak(const Scene& scene, const OpticsConfig& cfg, double step) {
  double best_d = 0.0, best = -1.0;
  for (double d = -cfg.z_range_um; d <= cfg.z_range_um + 1e-9; d += step) {
    const double s = sharpness(render_defocused(scene, d, cfg, 0));
    if (s > best) {
      best = s;
      best_d = d;
    }
  }
  return best_d;
}

TEST(Sharpness, ConstantImageIsZero) {
  const Image flat(12, 9, 0.37f);
  for (auto m : {SharpnessMethod::tenengrad, SharpnessMethod::varlap, SharpnessMethod::brenner}) {
    EXPECT_EQ(sharpness(flat, m), 0.0) << to_string(m);
  }
}

TEST(Sharpness, BrennerStepRow) {
  Image img(3, 4);
  for (std::size_t y = 0; y < 3; ++y) {
    img(y, 2) = 1.0f;
    img(y, 3) = 1.0f;
  }
  EXPECT_DOUBLE_EQ(brenner(img), 1.0);
}

TEST(Sharpness, TenengradOnRampMatchesSobelByHand) {
  // I(y, x) = x: Sobel gx = 8 everywhere inside, gy = 0.
  Image ramp(5, 6);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 6; ++x) ramp(y, x) = static_cast<float>(x);
  EXPECT_DOUBLE_EQ(tenengrad(ramp), 64.0);
  // Laplacian of a linear ramp vanishes inside.
  EXPECT_NEAR(varlap(ramp), 0.0, 1e-12);
}

TEST(Sharpness, CheckerboardBeatsBlurredCopy) {
  const Image sharp = checkerboard(24, 3), soft = binomial_blur(sharp, 3);
  for (auto m : {SharpnessMethod::tenengrad, SharpnessMethod::varlap, SharpnessMethod::brenner}) {
    EXPECT_GT(sharpness(sharp, m), sharpness(soft, m)) << to_string(m);
    EXPECT_GE(sharpness(soft, m), 0.0);
  }
}

TEST(Sharpness, TooSmallOrUnknownRejected) {
  EXPECT_THROW(sharpness(Image(2, 5)), ShapeError);
  EXPECT_THROW(parse_sharpness("fft"), ConfigError);
  EXPECT_EQ(parse_sharpness("varlap"), SharpnessMethod::varlap);
}

TEST(Labeling, ParabolaVertexRecoveredExactly) {
  const std::vector<double> z = {-5.0, -2.5, 0.0, 2.5, 5.0};
  const double vertex = 0.7;
  std::vector<double> curve;
  for (double v : z) curve.push_back(100.0 - (v - vertex) * (v - vertex));
  const FocusLabel l = label_from_curve(curve, z, 0.1);
  EXPECT_EQ(l.status, LabelStatus::ok);
  EXPECT_EQ(l.argmax_slice, 2u);
  EXPECT_NEAR(l.focus_um, vertex, 1e-12);
}

TEST(Labeling, BoundaryAndFlatCurvesFlagged) {
  const std::vector<double> z = {-2.5, 0.0, 2.5};
  const FocusLabel edge = label_from_curve({9.0, 5.0, 1.0}, z, 0.1);
  EXPECT_EQ(edge.status, LabelStatus::boundary);
  EXPECT_EQ(edge.focus_um, -2.5);
  EXPECT_EQ(label_from_curve({0.0, 0.0, 0.0}, z, 0.1).status, LabelStatus::flat);
  EXPECT_EQ(label_from_curve({1.0, 1.02, 1.0}, z, 0.1).status, LabelStatus::flat);
  EXPECT_THROW(label_from_curve({1.0, 2.0}, {0.0, 1.0}, 0.1), ShapeError);
}

TEST(Labeling, ParabolicOffsetClampedToHalfSlice) {
  EXPECT_EQ(parabolic_offset(1.0, 1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(parabolic_offset(1.0, 2.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(parabolic_offset(0.0, 4.0, 3.0), 0.5 * (0.0 - 3.0) / (0.0 - 8.0 + 3.0));
  EXPECT_EQ(parabolic_offset(1.0, 1.0, 10.0), 0.0);
  EXPECT_EQ(parabolic_offset(0.0, 2.0, 3.5), 0.5);
  EXPECT_EQ(parabolic_offset(3.5, 2.0, 0.0), -0.5);
}

TEST(Labeling, DenseSceneFocusNearZero) {
  const OpticsConfig cfg = noiseless();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ZStack st = gen_zstack(gen_specimen(Sparsity::dense, 288, seed), cfg, seed);
    const FocusLabel l = label_focal_plane(st, full_region(st.slices[0]));
    EXPECT_EQ(l.status, LabelStatus::ok);
    EXPECT_LE(std::abs(l.focus_um), cfg.z_step_um / 2) << seed;
  }
}

TEST(Labeling, ShiftedFocalPlaneRecovered) {
  const OpticsConfig cfg = noiseless();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const ZStack st = gen_zstack(gen_specimen(Sparsity::dense, 288, 50 + seed), cfg, seed, 5.0);
    const FocusLabel l = label_focal_plane(st, full_region(st.slices[0]));
    EXPECT_LE(std::abs(l.focus_um - 5.0), cfg.z_step_um / 2) << seed;
  }
}

TEST(Labeling, AgreesWithFineGridArgmax) {
  const OpticsConfig cfg = noiseless();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Scene scene = gen_specimen(Sparsity::dense, 288, 300 + seed);
    const ZStack st = gen_zstack(scene, cfg, seed);
    const double label = label_focal_plane(st, full_region(st.slices[0])).focus_um;
    EXPECT_LE(std::abs(label - fine_grid_peak(scene, cfg, 0.25)), cfg.z_step_um / 2) << seed;
  }
}

TEST(Labeling, BlankRegionIsFlat) {
  Scene blank{blank_canvas(64), {}, Sparsity::ex_sparse, 0};
  const ZStack st = gen_zstack(blank, noiseless(), 1);
  EXPECT_EQ(label_focal_plane(st, {0, 0, 32, 32}).status, LabelStatus::flat);
  EXPECT_THROW(label_focal_plane(st, {40, 40, 32, 32}), ShapeError);
}

TEST(Richness, BlankIsAllZero) {
  for (float level : {0.0f, 0.5f, kBackgroundLevel}) {
    const RichnessMatrix w = content_richness(Image(288, 288, level), 9);
    EXPECT_EQ(w.count(), 0u);
    EXPECT_EQ(w.cells.size(), 81u);
  }
  // noise alone stays below the local-std floor
  Scene blank{blank_canvas(288), {}, Sparsity::ex_sparse, 0};
  EXPECT_EQ(content_richness(render_defocused(blank, 0.0, OpticsConfig{}, 3), 9).count(), 0u);
}

TEST(Richness, FullyTexturedIsAllOne) {
  const RichnessMatrix w = content_richness(checkerboard(288, 2), 9);
  EXPECT_EQ(w.count(), 81u);
  for (float v : w.cells) EXPECT_TRUE(v == 0.0f || v == 1.0f);
}

TEST(Richness, SingleObjectLocalized) {
  Rng rng(17);
  for (int t = 0; t < 10; ++t) {
    const auto ci = static_cast<std::size_t>(rng.uniform_int(0, 8)), cj = static_cast<std::size_t>(rng.uniform_int(0, 8));
    Image canvas = blank_canvas(288);
    ObjectRecord o;
    o.cy = 32.0 * ci + 15.5;
    o.cx = 32.0 * cj + 15.5;
    o.semi_major = rng.uniform(7.0, 10.0);
    o.semi_minor = o.semi_major * rng.uniform(0.6, 1.0);
    o.angle = rng.uniform(0.0, 3.14159);
    o.texture_seed = rng.next();
    paint_object(canvas, o);
    const RichnessMatrix w = content_richness(canvas, 9);
    EXPECT_EQ(w.count(), 1u) << t;
    EXPECT_EQ(w(ci, cj), 1.0f) << t;
  }
}

TEST(Richness, AddingAnObjectNeverClearsACell) {
  Rng rng(5);
  const OpticsConfig cfg;
  for (int t = 0; t < 60; ++t) {
    Scene s = gen_specimen(kAllSparsities[t % 3], 288, 900 + t);
    const RichnessMatrix before = content_richness(render_defocused(s, 0.0, cfg, t), 9);
    paint_object(s.canvas, random_object(rng, kAllSparsities[t % 3], 288.0));
    const RichnessMatrix after = content_richness(render_defocused(s, 0.0, cfg, t), 9);
    for (std::size_t c = 0; c < 81; ++c) EXPECT_GE(after.cells[c], before.cells[c]) << t << " cell " << c;
  }
}

TEST(Richness, IndivisibleSideRejected) {
  EXPECT_THROW(content_richness(Image(100, 100), 9), ShapeError);
  EXPECT_THROW(content_richness(Image(90, 90), 0), ShapeError);
}

TEST(Richness, LocalStdMatchesWindowOracle) {
  const Image img = render_defocused(gen_specimen(Sparsity::dense, 32, 4), 1.0, OpticsConfig{}, 2);
  const Image sd = local_std(img);
  for (std::size_t y : {0u, 1u, 7u, 31u})
    for (std::size_t x : {0u, 2u, 16u, 30u}) {
      double s = 0, s2 = 0, n = 0;
      for (long yy = static_cast<long>(y) - 2; yy <= static_cast<long>(y) + 2; ++yy)
        for (long xx = static_cast<long>(x) - 2; xx <= static_cast<long>(x) + 2; ++xx) {
          if (yy < 0 || xx < 0 || yy >= 32 || xx >= 32) continue;
          const double v = img(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
          s += v;
          s2 += v * v;
          n += 1;
        }
      const double m = s / n;
      EXPECT_NEAR(sd(y, x), std::sqrt(std::max(0.0, s2 / n - m * m)), 1e-5);
    }
}

TEST(Augment, UnitFactorsLeaveImageUnchanged) {
  const Image img = render_defocused(gen_specimen(Sparsity::sparse, 64, 1), 3.0, OpticsConfig{}, 1);
  const Image out = augment(img, AugmentFactors{1.0, 1.0});
  EXPECT_EQ(std::memcmp(out.pixels().data(), img.pixels().data(), img.size() * 4), 0);
}

TEST(Augment, BrightnessScalesConstantImage) {
  const Image out = augment(Image(8, 8, 0.5f), AugmentFactors{1.4, 1.0});
  for (float v : out.pixels()) EXPECT_NEAR(v, 0.7f, 1e-6);
  // contrast about the mean leaves a constant image alone
  const Image flat = augment(Image(8, 8, 0.5f), AugmentFactors{1.0, 1.5});
  for (float v : flat.pixels()) EXPECT_NEAR(v, 0.5f, 1e-6);
}

TEST(Augment, ContrastStretchAboutMean) {
  Image img(1, 2);
  img(0, 0) = 0.4f;
  img(0, 1) = 0.6f;
  const Image out = augment(img, AugmentFactors{1.0, 1.5});
  EXPECT_NEAR(out(0, 0), 0.35f, 1e-6);
  EXPECT_NEAR(out(0, 1), 0.65f, 1e-6);
}

TEST(Augment, FactorsInRangeOutputClippedAndDeterministic) {
  const Image img = render_defocused(gen_specimen(Sparsity::dense, 64, 2), 0.0, OpticsConfig{}, 1);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const AugmentFactors f = draw_augment(seed);
    ASSERT_TRUE(f.brightness >= 0.9 && f.brightness <= 1.4);
    ASSERT_TRUE(f.contrast >= 0.8 && f.contrast <= 1.5);
    if (seed % 20) continue;
    const Image a = augment(img, seed), b = augment(img, seed);
    EXPECT_EQ(std::memcmp(a.pixels().data(), b.pixels().data(), a.size() * 4), 0);
    for (float v : a.pixels()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(Augment, SharpnessArgmaxSurvivesAugmentation) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const ZStack st = gen_zstack(gen_specimen(kAllSparsities[seed % 3], 288, 70 + seed), OpticsConfig{}, seed);
    ZStack aug = st;
    const AugmentFactors f = draw_augment(seed);
    for (auto& s : aug.slices) s = augment(s, f);
    const Region r = full_region(st.slices[0]);
    EXPECT_EQ(label_focal_plane(aug, r).argmax_slice, label_focal_plane(st, r).argmax_slice) << seed;
  }
}

TEST(Splits, EightOneOneCounts) {
  const SplitCounts c100 = split_counts(100);
  EXPECT_EQ(c100.train, 80u);
  EXPECT_EQ(c100.val, 10u);
  EXPECT_EQ(c100.test, 10u);
  const SplitCounts c10 = split_counts(10);
  EXPECT_EQ(c10.train + c10.val + c10.test, 10u);
  EXPECT_EQ(c10.train, 8u);
  EXPECT_EQ(c10.val, 1u);
  for (std::size_t n = 1; n < 200; ++n) {
    const SplitCounts c = split_counts(n);
    EXPECT_EQ(c.train + c.val + c.test, n);
  }
}

TEST(Splits, AssignmentMatchesCountsAndSeed) {
  const auto tags = assign_splits(60, 11);
  std::map<Split, std::size_t> n;
  for (Split s : tags) ++n[s];
  EXPECT_EQ(n[Split::train], 48u);
  EXPECT_EQ(n[Split::val], 6u);
  EXPECT_EQ(n[Split::test], 6u);
  EXPECT_EQ(assign_splits(60, 11), tags);
  EXPECT_NE(assign_splits(60, 12), tags);
}

TEST(Crop, CentredOriginAndTooSmallRejected) {
  const GridGeometry geo;
  EXPECT_EQ(crop_origin(288, 288, geo), std::make_pair(std::size_t{0}, std::size_t{0}));
  EXPECT_EQ(crop_origin(300, 291, geo), std::make_pair(std::size_t{6}, std::size_t{1}));
  EXPECT_THROW(crop_origin(287, 400, geo), ShapeError);
}

class DatasetDir : public ::testing::Test {
 protected:
  fs::path root_ = fs::temp_directory_path() / "sf_dataset_test";
  DatasetSpec spec_;

  void SetUp() override {
    fs::remove_all(root_);
    spec_.scenes_per_class = 10;
    spec_.optics.image_px = 96;
    spec_.geometry = {3, 32};
    spec_.seed = 21;
  }
  void TearDown() override { fs::remove_all(root_); }
};

TEST_F(DatasetDir, RecordsFollowSplitAndLabelInvariants) {
  const Manifest m = build_dataset(spec_, root_ / "a", 2);
  EXPECT_EQ(m.records.size(), 3u * 10u * 21u);
  std::map<std::size_t, Split> scene_split;
  std::map<std::pair<Sparsity, Split>, std::set<std::size_t>> scenes;
  for (const auto& r : m.records) {
    ASSERT_EQ(r.patch_d_um.size(), 9u);
    ASSERT_EQ(r.richness.size(), 9u);
    EXPECT_LE(std::abs(r.d_um), spec_.optics.z_range_um);
    for (double d : r.patch_d_um) EXPECT_LE(std::abs(d), spec_.optics.z_range_um);
    for (float w : r.richness) EXPECT_TRUE(w == 0.0f || w == 1.0f);
    EXPECT_NEAR(r.d_um, std::clamp(r.slice_z_um - r.focus_um, -25.0, 25.0), 1e-12);
    auto [it, fresh] = scene_split.emplace(r.scene_id, r.split);
    if (!fresh) {
      EXPECT_EQ(it->second, r.split) << "scene " << r.scene_id;
    }
    scenes[{r.sparsity, r.split}].insert(r.scene_id);
  }
  for (Sparsity c : kAllSparsities) {
    EXPECT_EQ(scenes[std::make_pair(c, Split::train)].size(), 8u);
    EXPECT_EQ(scenes[std::make_pair(c, Split::val)].size(), 1u);
    EXPECT_EQ(scenes[std::make_pair(c, Split::test)].size(), 1u);
  }
}

TEST_F(DatasetDir, RebuildIsByteIdenticalAcrossThreadCounts) {
  build_dataset(spec_, root_ / "a", 1);
  build_dataset(spec_, root_ / "b", 3);
  EXPECT_EQ(slurp(root_ / "a" / "manifest.json"), slurp(root_ / "b" / "manifest.json"));
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(root_ / "a" / "images")) {
    ASSERT_EQ(slurp(e.path()), slurp(root_ / "b" / "images" / e.path().filename())) << e.path();
    ++n;
  }
  EXPECT_EQ(n, 630u);
}

TEST_F(DatasetDir, ManifestRoundTripsAndImagesReadBack) {
  const Manifest built = build_dataset(spec_, root_ / "a", 2);
  const Manifest m = load_manifest(root_ / "a" / "manifest.json");
  ASSERT_EQ(m.records.size(), built.records.size());
  EXPECT_EQ(to_json(m).dump(), to_json(built).dump());
  for (std::size_t i = 0; i < m.records.size(); i += 7) {
    const auto& r = m.records[i];
    ASSERT_TRUE(fs::exists(m.image_path(r)));
    const Image img = m.load_image(r);
    const auto bytes = encode_sfim(img);
    EXPECT_EQ(std::string(bytes.begin(), bytes.end()), slurp(m.image_path(r)));
  }
}

TEST_F(DatasetDir, FailedBuildCleansUp) {
  // a directory squatting on the first image name makes its write fail
  fs::create_directories(root_ / "c" / "images" / "s00000_z000.sfim");
  EXPECT_THROW(build_dataset(spec_, root_ / "c", 1), IoError);
  std::size_t left = 0;
  for (const auto& e : fs::recursive_directory_iterator(root_ / "c")) left += e.is_regular_file() ? 1 : 0;
  EXPECT_EQ(left, 0u);

  spec_.optics.image_px = 64;
  EXPECT_THROW(build_dataset(spec_, root_ / "d", 1), ConfigError);
  EXPECT_FALSE(fs::exists(root_ / "d"));
  spec_.optics.image_px = 96;
  spec_.scenes_per_class = 0;
  EXPECT_THROW(build_dataset(spec_, root_ / "d", 1), ConfigError);
}

TEST_F(DatasetDir, MalformedManifestRejected) {
  fs::create_directories(root_);
  const fs::path p = root_ / "manifest.json";
  {
    std::ofstream(p) << "{ not json";
  }
  EXPECT_THROW(load_manifest(p), IoError);
  {
    std::ofstream(p) << R"({"version": 99})";
  }
  EXPECT_THROW(load_manifest(p), IoError);
  EXPECT_THROW(load_manifest(root_ / "absent.json"), IoError);
}

}  // namespace
}  // namespace sf
