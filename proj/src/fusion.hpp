#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "geometry.hpp"
#include "nn.hpp"

namespace mitodet {

inline constexpr int kAttentionSide = 14;
// x1, y1, x2, y2, class, score, p_mitosis, then the 14x14 map row-major.
inline constexpr int kFusionInputSize = 4 + 1 + 1 + 1 + kAttentionSide * kAttentionSide;
inline constexpr std::array<int, 4> kFusionWidths{kFusionInputSize, 48, 12, 3};

struct FusionConfig {
  double max_offset = 28.0;  // half the mini-patch
  double lambda = 1.0;
  double radius = 30.0;
};

struct FusionInput {
  std::array<double, kFusionInputSize> values{};
};

// Raw network outputs and their bounded interpretation.
struct Adjustment {
  double u = 0.0;
  double v = 0.0;
  double w = 0.0;

  double dx(double max_offset) const;
  double dy(double max_offset) const;
  double multiplier() const;  // 2 * sigmoid(w), in (0, 2)
};

class FusionNet {
 public:
  // Hidden layers small-random, final layer zero (identity adjustment).
  explicit FusionNet(std::uint64_t seed);

  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  nn::Var forward(const nn::Var& inputs) const;  // [N,203] -> [N,3]
  Adjustment forward(const FusionInput& input) const;
  // Output widths of each layer for one input (shape probe).
  std::vector<int> layer_output_widths(const FusionInput& input) const;

 private:
  nn::ParamSet params_;
};

FusionInput assemble_fusion_input(const Detection& det, double p_mitosis,
                                  const nn::Tensor& attention, int image_width,
                                  int image_height);

// Translate the box by (dx, dy), clamp to the image, scale the score by the
// multiplier and clamp it to [0,1].
Detection apply_adjustment(const Detection& det, const Adjustment& adj, int image_width,
                           int image_height, double max_offset = 28.0);

// Greedy matching by adjusted score; BCE(score, matched) averaged over
// detections plus lambda * mean L1 center error (in radius units) of matches.
double fusion_loss(const std::vector<Detection>& adjusted, const std::vector<Point>& gt,
                   double radius, double lambda);

// Differentiable composition apply_adjustment -> fusion_loss over raw [N,3]
// outputs for the detections of one image.
nn::Var fusion_loss_graph(const nn::Var& raw, const std::vector<Detection>& dets,
                          const std::vector<Point>& gt, int image_width, int image_height,
                          const FusionConfig& config);

}  // namespace mitodet
