#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "geometry.hpp"
#include "image.hpp"

namespace mitodet {

enum class Label : int { Mitotic = 0, NonMitotic = 1 };

const char* label_name(Label label);
Label parse_label(const std::string& text);

struct ImageRecord {
  int id = 0;
  std::string file;  // relative to the annotation file
  Image image;

  int width() const { return image.width; }
  int height() const { return image.height; }
};

struct PointAnnotation {
  int image_id = 0;
  double x = 0.0;
  double y = 0.0;
  Label label = Label::Mitotic;
  friend bool operator==(const PointAnnotation&, const PointAnnotation&) = default;
};

struct Dataset {
  std::vector<ImageRecord> images;
  std::vector<PointAnnotation> annotations;

  const ImageRecord& image(int id) const;
  // Mitotic-figure centers of one image.
  std::vector<Point> mitotic_points(int image_id) const;
  // Subset holding the images at [begin, end) of `images` and their annotations.
  Dataset slice(std::size_t begin, std::size_t end) const;
};

inline constexpr int kPatchSize = 56;

struct Patch {
  int id = 0;
  int size = kPatchSize;
  std::vector<float> pixels;  // size*size*3, interleaved RGB
  int source_image_id = 0;
  Point source_center;
  Label label = Label::Mitotic;
};

struct PatchSet {
  std::vector<Patch> patches;

  std::map<Label, std::size_t> class_counts() const;
  std::size_t size() const { return patches.size(); }
};

struct SplitSpec {
  double train_fraction = 0.7;
  double test_fraction = 0.2;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct PatchSplit {
  PatchSet train;
  PatchSet test;
  PatchSet validation;
};

struct SynthConfig {
  int image_count = 200;
  int image_size = 224;
  int positives_per_image = 3;
  int distractors_per_image = 3;
  double min_separation = 40.0;
  double margin = 24.0;
  int max_placement_retries = 2000;
};

Dataset load_dataset(const std::string& annotation_path);
// Writes images/<id>.png and annotations.json under `dir`.
void save_dataset(const Dataset& dataset, const std::string& dir);

// Zero-filled outside the image; rows/cols [round(c) - size/2, round(c) + size/2).
Patch extract_patch(const Image& image, const Point& center, int size = kPatchSize);

PatchSet build_balanced_patchset(const Dataset& dataset, int negatives_per_positive,
                                 std::uint64_t seed);

// Stratified per label: floor(n*train), floor(n*test), remainder.
PatchSplit split_patchset(const PatchSet& set, const SplitSpec& spec);

Dataset generate_synthetic_dataset(const SynthConfig& config, std::uint64_t seed);
// A single synthetic image; `index` selects the per-image random stream.
ImageRecord generate_synthetic_image(const SynthConfig& config, std::uint64_t seed, int index,
                                     std::vector<PointAnnotation>& annotations);

}  // namespace mitodet
