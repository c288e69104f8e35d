#include "dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"

namespace mitodet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const json& field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) fail(ErrorCode::Parse, where + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) fail(ErrorCode::Parse, where + "." + key + ": missing field");
  return *it;
}

int int_field(const json& obj, const char* key, const std::string& where) {
  const json& v = field(obj, key, where);
  if (!v.is_number_integer()) fail(ErrorCode::Parse, where + "." + key + ": expected an integer");
  return v.get<int>();
}

double number_field(const json& obj, const char* key, const std::string& where) {
  const json& v = field(obj, key, where);
  if (!v.is_number()) fail(ErrorCode::Parse, where + "." + key + ": expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) fail(ErrorCode::Parse, where + "." + key + ": not finite");
  return d;
}

std::string string_field(const json& obj, const char* key, const std::string& where) {
  const json& v = field(obj, key, where);
  if (!v.is_string()) fail(ErrorCode::Parse, where + "." + key + ": expected a string");
  return v.get<std::string>();
}

long round_half_up(double v) { return static_cast<long>(std::floor(v + 0.5)); }

}  // namespace

const char* label_name(Label label) {
  return label == Label::Mitotic ? "mitotic" : "non_mitotic";
}

Label parse_label(const std::string& text) {
  if (text == "mitotic") return Label::Mitotic;
  if (text == "non_mitotic") return Label::NonMitotic;
  fail(ErrorCode::Parse, "unknown label '" + text + "'");
}

const ImageRecord& Dataset::image(int id) const {
  for (const auto& rec : images) {
    if (rec.id == id) return rec;
  }
  fail(ErrorCode::NotFound, "unknown image id " + std::to_string(id));
}

std::vector<Point> Dataset::mitotic_points(int image_id) const {
  std::vector<Point> pts;
  for (const auto& a : annotations) {
    if (a.image_id == image_id && a.label == Label::Mitotic) pts.push_back({a.x, a.y});
  }
  return pts;
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, images.size());
  Dataset out;
  std::set<int> ids;
  for (std::size_t i = begin; i < end; ++i) {
    out.images.push_back(images[i]);
    ids.insert(images[i].id);
  }
  for (const auto& a : annotations) {
    if (ids.count(a.image_id)) out.annotations.push_back(a);
  }
  return out;
}

std::map<Label, std::size_t> PatchSet::class_counts() const {
  std::map<Label, std::size_t> counts{{Label::Mitotic, 0}, {Label::NonMitotic, 0}};
  for (const auto& p : patches) ++counts[p.label];
  return counts;
}

Dataset load_dataset(const std::string& annotation_path) {
  std::ifstream in(annotation_path);
  if (!in) fail(ErrorCode::NotFound, "annotation file not found: " + annotation_path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Parse, annotation_path + ": " + e.what());
  }
  const fs::path base = fs::path(annotation_path).parent_path();

  Dataset ds;
  const json& images = field(doc, "images", "$");
  if (!images.is_array()) fail(ErrorCode::Parse, "$.images: expected an array");
  std::unordered_map<int, std::size_t> by_id;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string where = "$.images[" + std::to_string(i) + "]";
    ImageRecord rec;
    rec.id = int_field(images[i], "id", where);
    rec.file = string_field(images[i], "file", where);
    const int w = int_field(images[i], "width", where);
    const int h = int_field(images[i], "height", where);
    if (w < kPatchSize || h < kPatchSize) {
      fail(ErrorCode::Parse, where + ": images must be at least 56x56");
    }
    if (by_id.count(rec.id)) fail(ErrorCode::Parse, where + ".id: duplicate id " + std::to_string(rec.id));
    rec.image = read_png((base / rec.file).string());
    if (rec.image.width != w || rec.image.height != h) {
      fail(ErrorCode::Parse, where + ": declared size " + std::to_string(w) + "x" +
                                 std::to_string(h) + " does not match " + rec.file);
    }
    by_id[rec.id] = ds.images.size();
    ds.images.push_back(std::move(rec));
  }

  const json& anns = field(doc, "annotations", "$");
  if (!anns.is_array()) fail(ErrorCode::Parse, "$.annotations: expected an array");
  for (std::size_t i = 0; i < anns.size(); ++i) {
    const std::string where = "$.annotations[" + std::to_string(i) + "]";
    PointAnnotation a;
    a.image_id = int_field(anns[i], "image_id", where);
    a.x = number_field(anns[i], "x", where);
    a.y = number_field(anns[i], "y", where);
    try {
      a.label = parse_label(string_field(anns[i], "label", where));
    } catch (const Error& e) {
      fail(ErrorCode::Parse, where + ".label: " + e.what());
    }
    auto it = by_id.find(a.image_id);
    if (it == by_id.end()) {
      fail(ErrorCode::Parse, where + ".image_id: unknown image id " + std::to_string(a.image_id));
    }
    const ImageRecord& rec = ds.images[it->second];
    if (a.x < 0.0 || a.y < 0.0 || a.x > rec.width() || a.y > rec.height()) {
      fail(ErrorCode::Parse, where + ": point lies outside image " + std::to_string(a.image_id));
    }
    ds.annotations.push_back(a);
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (ec) fail(ErrorCode::Io, "cannot create " + dir + ": " + ec.message());

  json doc;
  doc["images"] = json::array();
  for (const auto& rec : dataset.images) {
    write_png((fs::path(dir) / rec.file).string(), rec.image);
    doc["images"].push_back(
        {{"id", rec.id}, {"file", rec.file}, {"width", rec.width()}, {"height", rec.height()}});
  }
  doc["annotations"] = json::array();
  for (const auto& a : dataset.annotations) {
    doc["annotations"].push_back(
        {{"image_id", a.image_id}, {"x", a.x}, {"y", a.y}, {"label", label_name(a.label)}});
  }
  std::ofstream out(fs::path(dir) / "annotations.json");
  if (!out) fail(ErrorCode::Io, "cannot write annotations in " + dir);
  out << doc.dump(1) << '\n';
}

Patch extract_patch(const Image& image, const Point& center, int size) {
  if (size <= 0 || size % 2 != 0) {
    fail(ErrorCode::InvalidArgument, "extract_patch: size must be even and positive");
  }
  if (!(center.x >= 0.0 && center.y >= 0.0 && center.x <= image.width &&
        center.y <= image.height)) {
    std::ostringstream os;
    os << "extract_patch: center (" << center.x << "," << center.y << ") outside "
       << image.width << "x" << image.height << " image";
    fail(ErrorCode::InvalidArgument, os.str());
  }
  Patch patch;
  patch.size = size;
  patch.source_center = center;
  patch.pixels.assign(static_cast<std::size_t>(size) * size * 3, 0.0f);
  const long top = round_half_up(center.y) - size / 2;
  const long left = round_half_up(center.x) - size / 2;
  const long y0 = std::max(0L, top), y1 = std::min<long>(image.height, top + size);
  const long x0 = std::max(0L, left), x1 = std::min<long>(image.width, left + size);
  for (long y = y0; y < y1; ++y) {
    const float* src = &image.pixels[(static_cast<std::size_t>(y) * image.width + x0) * 3];
    float* dst = &patch.pixels[(static_cast<std::size_t>(y - top) * size + (x0 - left)) * 3];
    std::copy(src, src + (x1 - x0) * 3, dst);
  }
  return patch;
}

PatchSet build_balanced_patchset(const Dataset& dataset, int negatives_per_positive,
                                 std::uint64_t seed) {
  if (negatives_per_positive < 1) {
    fail(ErrorCode::InvalidArgument, "negatives_per_positive must be >= 1");
  }
  std::vector<const PointAnnotation*> positives, hard;
  for (const auto& a : dataset.annotations) {
    (a.label == Label::Mitotic ? positives : hard).push_back(&a);
  }
  if (positives.empty()) {
    fail(ErrorCode::InvalidArgument, "build_balanced_patchset: no mitotic annotations");
  }
  Rng rng(seed);
  const std::size_t wanted = positives.size() * static_cast<std::size_t>(negatives_per_positive);

  // Seeded subset of the hard negatives, kept in file order.
  std::vector<std::size_t> pick(hard.size());
  for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
  if (hard.size() > wanted) {
    rng.shuffle(pick.begin(), pick.end());
    pick.resize(wanted);
    std::sort(pick.begin(), pick.end());
  }

  PatchSet set;
  auto push = [&](const ImageRecord& rec, Point c, Label label) {
    Patch p = extract_patch(rec.image, c, kPatchSize);
    p.id = static_cast<int>(set.patches.size());
    p.source_image_id = rec.id;
    p.label = label;
    set.patches.push_back(std::move(p));
  };
  for (const auto* a : positives) push(dataset.image(a->image_id), {a->x, a->y}, Label::Mitotic);
  for (std::size_t i : pick) {
    push(dataset.image(hard[i]->image_id), {hard[i]->x, hard[i]->y}, Label::NonMitotic);
  }

  constexpr int kRetries = 10000;
  constexpr double kExclusion = 56.0;
  for (std::size_t n = pick.size(); n < wanted; ++n) {
    bool placed = false;
    for (int attempt = 0; attempt < kRetries && !placed; ++attempt) {
      const ImageRecord& rec = dataset.images[rng.index(dataset.images.size())];
      const Point c{rng.uniform(0.0, rec.width()), rng.uniform(0.0, rec.height())};
      bool clear = true;
      for (const auto* a : positives) {
        if (a->image_id == rec.id && std::hypot(a->x - c.x, a->y - c.y) < kExclusion) {
          clear = false;
          break;
        }
      }
      if (clear) {
        push(rec, c, Label::NonMitotic);
        placed = true;
      }
    }
    if (!placed) {
      fail(ErrorCode::InvalidArgument,
           "build_balanced_patchset: could not place a random negative 56 px away from all "
           "positives (images too small or too crowded)");
    }
  }
  return set;
}

PatchSplit split_patchset(const PatchSet& set, const SplitSpec& spec) {
  const double sum = spec.train_fraction + spec.test_fraction + spec.validation_fraction;
  if (spec.train_fraction < 0 || spec.test_fraction < 0 || spec.validation_fraction < 0 ||
      std::abs(sum - 1.0) > 1e-9) {
    fail(ErrorCode::InvalidArgument, "split fractions must be non-negative and sum to 1");
  }
  PatchSplit out;
  Rng rng(spec.seed);
  for (Label label : {Label::Mitotic, Label::NonMitotic}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < set.patches.size(); ++i) {
      if (set.patches[i].label == label) idx.push_back(i);
    }
    rng.shuffle(idx.begin(), idx.end());
    const auto n = static_cast<double>(idx.size());
    const auto n_train = static_cast<std::size_t>(std::floor(n * spec.train_fraction + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(n * spec.test_fraction + 1e-9));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      PatchSet& dst = k < n_train ? out.train : (k < n_train + n_test ? out.test : out.validation);
      dst.patches.push_back(set.patches[idx[k]]);
    }
  }
  return out;
}

}  // namespace mitodet
