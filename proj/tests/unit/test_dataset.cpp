#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "dataset.hpp"
#include "error.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

using namespace mitodet;
using mitodet::testing::TempDir;

namespace {

// Two 64x64 images written to disk plus an annotation document around them.
std::string write_fixture(const TempDir& dir, const std::string& annotations) {
  std::filesystem::create_directories(dir / "images");
  write_png(dir / "images/a.png", testing::random_image(64, 64, 1));
  write_png(dir / "images/b.png", testing::random_image(64, 64, 2));
  const std::string doc = R"({"images": [
      {"id": 1, "file": "images/a.png", "width": 64, "height": 64},
      {"id": 2, "file": "images/b.png", "width": 64, "height": 64}],
    "annotations": )" + annotations + "}";
  testing::spit(dir / "annotations.json", doc);
  return dir / "annotations.json";
}

Dataset tiny_dataset(int positives, int hard_negatives, int side = 224) {
  Dataset ds;
  ds.images.push_back({0, "x.png", testing::random_image(side, side, 9)});
  for (int i = 0; i < positives; ++i) ds.annotations.push_back({0, 20.0 + 18 * i, 30.0, Label::Mitotic});
  for (int i = 0; i < hard_negatives; ++i) ds.annotations.push_back({0, 20.0 + 18 * i, 190.0, Label::NonMitotic});
  return ds;
}

PatchSet labelled(int per_class) {
  PatchSet s;
  for (int label = 0; label < 2; ++label) {
    for (int i = 0; i < per_class; ++i) {
      Patch p;
      p.id = static_cast<int>(s.patches.size());
      p.label = static_cast<Label>(label);
      s.patches.push_back(std::move(p));
    }
  }
  return s;
}

std::set<int> ids(const PatchSet& s) {
  std::set<int> out;
  for (const auto& p : s.patches) out.insert(p.id);
  return out;
}

}  // namespace

TEST_CASE("load_dataset reads images and annotations") {
  TempDir dir;
  const auto path = write_fixture(dir, R"([
      {"image_id": 1, "x": 10, "y": 12, "label": "mitotic"},
      {"image_id": 1, "x": 40, "y": 41.5, "label": "non_mitotic"},
      {"image_id": 2, "x": 64, "y": 0, "label": "mitotic"}])");
  const Dataset ds = load_dataset(path);
  CHECK(ds.images.size() == 2);
  CHECK(ds.annotations.size() == 3);
  CHECK(ds.image(2).image.pixels == testing::random_image(64, 64, 2).pixels);
  CHECK(ds.mitotic_points(1) == std::vector<Point>{{10, 12}});
}

TEST_CASE("load_dataset accepts an empty annotation list") {
  TempDir dir;
  CHECK(load_dataset(write_fixture(dir, "[]")).annotations.empty());
}

TEST_CASE("load_dataset rejects bad input with the offending field") {
  TempDir dir;
  auto message = [&](const std::string& anns) {
    try {
      load_dataset(write_fixture(dir, anns));
    } catch (const Error& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message(R"([{"image_id": 7, "x": 1, "y": 1, "label": "mitotic"}])").find("7") != std::string::npos);
  CHECK(message(R"([{"image_id": 1, "x": 1, "label": "mitotic"}])").find("$.annotations[0].y") != std::string::npos);
  CHECK(message(R"([{"image_id": 1, "x": 1, "y": 1, "label": "maybe"}])").find("label") != std::string::npos);
  CHECK(message(R"([{"image_id": 1, "x": 65, "y": 1, "label": "mitotic"}])").find("outside") != std::string::npos);
  CHECK_THROWS_AS(load_dataset(dir / "missing.json"), Error);
}

TEST_CASE("extract_patch examples") {
  const Image img = testing::random_image(224, 224, 4);
  const Patch p = extract_patch(img, {100, 100});
  CHECK(p.size == 56);
  CHECK(p.pixels.size() == 56u * 56u * 3u);
  for (int r = 0; r < 56; ++r) {
    for (int c = 0; c < 56; ++c) {
      CHECK(p.pixels[(r * 56 + c) * 3 + 1] == img.at(72 + c, 72 + r, 1));
    }
  }
  const Patch q = extract_patch(img, {5, 5});
  for (int r = 0; r < 56; ++r) {
    for (int c = 0; c < 56; ++c) {
      const bool padded = r < 23 || c < 23;
      const float v = q.pixels[(r * 56 + c) * 3];
      if (padded) {
        CHECK(v == 0.0f);
      } else {
        CHECK(v == img.at(c - 23, r - 23, 0));
      }
    }
  }
  CHECK_THROWS_AS(extract_patch(img, {-1, 5}), Error);
  CHECK_THROWS_AS(extract_patch(img, {5, 5}, 55), Error);
}

TEST_CASE("extract_patch matches the per-pixel oracle on fuzzed centers") {
  const Image img = testing::random_image(97, 83, 6);
  std::mt19937 gen(17);
  std::uniform_real_distribution<double> ux(0.0, 97.0), uy(0.0, 83.0);
  for (int t = 0; t < 300; ++t) {
    double x = ux(gen), y = uy(gen);
    if (t % 5 == 0) x = (t % 10 == 0) ? 0.0 : 97.0;
    if (t % 7 == 0) y = (t % 14 == 0) ? 0.0 : 83.0;
    CHECK(extract_patch(img, {x, y}).pixels == testing::patch_oracle(img, x, y, 56));
  }
}

TEST_CASE("balanced patch sets") {
  PatchSet s = build_balanced_patchset(tiny_dataset(10, 10), 1, 3);
  auto counts = s.class_counts();
  CHECK(counts[Label::Mitotic] == 10);
  CHECK(counts[Label::NonMitotic] == 10);

  // Deficit: 4 hard negatives, 6 random ones placed away from positives.
  s = build_balanced_patchset(tiny_dataset(10, 4), 1, 3);
  counts = s.class_counts();
  CHECK(counts[Label::Mitotic] == 10);
  CHECK(counts[Label::NonMitotic] == 10);
  const Dataset ds = tiny_dataset(10, 4);
  int random_negatives = 0;
  for (const auto& p : s.patches) {
    if (p.label != Label::NonMitotic) continue;
    if (p.source_center.y == 190.0) continue;
    ++random_negatives;
    for (const auto& a : ds.annotations) {
      if (a.label == Label::Mitotic) CHECK(std::hypot(a.x - p.source_center.x, a.y - p.source_center.y) >= 56.0);
    }
  }
  CHECK(random_negatives == 6);

  CHECK(build_balanced_patchset(tiny_dataset(10, 4), 1, 3).patches.size() == 20);
  CHECK_THROWS_AS(build_balanced_patchset(tiny_dataset(0, 4), 1, 3), Error);
}

TEST_CASE("split 10 per class gives 7/2/1 per class") {
  const PatchSplit sp = split_patchset(labelled(10), {0.7, 0.2, 0.1, 5});
  CHECK(sp.train.class_counts()[Label::Mitotic] == 7);
  CHECK(sp.train.class_counts()[Label::NonMitotic] == 7);
  CHECK(sp.test.class_counts()[Label::Mitotic] == 2);
  CHECK(sp.validation.class_counts()[Label::NonMitotic] == 1);
}

TEST_CASE("split at full patch-set scale") {
  const PatchSplit sp = split_patchset(labelled(11937), {0.7, 0.2, 0.1, 5});
  CHECK(sp.train.size() == 16710);
  CHECK(sp.test.size() == 4774);
  CHECK(sp.validation.size() == 2390);
  CHECK(sp.train.class_counts()[Label::Mitotic] == 8355);
  CHECK(sp.test.class_counts()[Label::NonMitotic] == 2387);
  CHECK(sp.validation.class_counts()[Label::Mitotic] == 1195);
}

TEST_CASE("splits are disjoint, exhaustive, stratified and seed-deterministic") {
  std::mt19937 gen(23);
  for (int t = 0; t < 40; ++t) {
    const int n = 1 + static_cast<int>(gen() % 60);
    const PatchSet set = labelled(n);
    const std::uint64_t seed = gen();
    const PatchSplit a = split_patchset(set, {0.7, 0.2, 0.1, seed});
    const PatchSplit b = split_patchset(set, {0.7, 0.2, 0.1, seed});
    const auto tr = ids(a.train), te = ids(a.test), va = ids(a.validation);
    CHECK(tr.size() + te.size() + va.size() == set.size());
    std::set<int> all = tr;
    all.insert(te.begin(), te.end());
    all.insert(va.begin(), va.end());
    CHECK(all.size() == set.size());
    for (const PatchSet* part : {&a.train, &a.test, &a.validation}) {
      auto c = part->class_counts();
      CHECK(c[Label::Mitotic] == c[Label::NonMitotic]);
    }
    CHECK(tr == ids(b.train));
    CHECK(te == ids(b.test));
    CHECK(va == ids(b.validation));
  }
}

TEST_CASE("synthetic generation counts and determinism") {
  SynthConfig cfg;
  cfg.image_count = 4;
  const Dataset a = generate_synthetic_dataset(cfg, 7);
  const Dataset b = generate_synthetic_dataset(cfg, 7);
  CHECK(a.images.size() == 4);
  CHECK(a.annotations.size() == 24);
  for (std::size_t i = 0; i < a.images.size(); ++i) CHECK(a.images[i].image.pixels == b.images[i].image.pixels);
  CHECK(a.annotations == b.annotations);
  CHECK(generate_synthetic_dataset(cfg, 8).images[0].image.pixels != a.images[0].image.pixels);

  cfg.positives_per_image = 0;
  CHECK(generate_synthetic_dataset(cfg, 7).annotations.size() == 12);
  cfg.image_size = 100;
  CHECK_THROWS_AS(generate_synthetic_dataset(cfg, 7), Error);
}

TEST_CASE("saved synthetic datasets are byte-identical per seed and reload exactly") {
  SynthConfig cfg;
  cfg.image_count = 2;
  TempDir d1, d2;
  save_dataset(generate_synthetic_dataset(cfg, 7), d1.str());
  save_dataset(generate_synthetic_dataset(cfg, 7), d2.str());
  CHECK(testing::slurp(d1 / "annotations.json") == testing::slurp(d2 / "annotations.json"));
  CHECK(testing::slurp(d1 / "images/img_00001.png") == testing::slurp(d2 / "images/img_00001.png"));
  const Dataset back = load_dataset(d1 / "annotations.json");
  CHECK(back.images[1].image.pixels == generate_synthetic_dataset(cfg, 7).images[1].image.pixels);
}
