#include "fusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "error.hpp"
#include "eval.hpp"
#include "rng.hpp"

namespace mitodet {

namespace {

constexpr double kEps = 1e-7;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double bce(double p, bool positive) {
  p = std::clamp(p, kEps, 1.0 - kEps);
  return positive ? -std::log(p) : -std::log(1.0 - p);
}

std::string layer(int i) { return "fc" + std::to_string(i); }

}  // namespace

double Adjustment::dx(double max_offset) const { return std::tanh(u) * max_offset; }
double Adjustment::dy(double max_offset) const { return std::tanh(v) * max_offset; }
double Adjustment::multiplier() const { return 2.0 * sigmoid(w); }

FusionNet::FusionNet(std::uint64_t seed) {
  Rng rng(seed);
  for (int i = 0; i < 3; ++i) {
    const int in = kFusionWidths[i], out = kFusionWidths[i + 1];
    nn::Tensor w({out, in}, 0.0);
    if (i < 2) {
      const double sd = std::sqrt(2.0 / in);
      for (double& v : w.values()) v = sd * rng.normal();
    }
    params_.add(layer(i) + ".w", std::move(w));
    params_.add(layer(i) + ".b", nn::Tensor({out}, 0.0));
  }
}

nn::Var FusionNet::forward(const nn::Var& inputs) const {
  const auto& x = inputs->value;
  if (x.rank() != 2 || x.dim(1) != kFusionInputSize) {
    fail(ErrorCode::InvalidArgument,
         "fusion_forward: expected [N,203] input, got " + nn::shape_string(x.shape()));
  }
  nn::Var h = inputs;
  for (int i = 0; i < 3; ++i) {
    h = nn::linear(h, params_.get(layer(i) + ".w"), params_.get(layer(i) + ".b"));
    if (i < 2) h = nn::relu(h);
  }
  return h;
}

Adjustment FusionNet::forward(const FusionInput& input) const {
  nn::NoGradGuard no_grad;
  nn::Tensor x({1, kFusionInputSize});
  std::copy(input.values.begin(), input.values.end(), x.data());
  const nn::Tensor y = forward(nn::constant(std::move(x)))->value;
  return {y[0], y[1], y[2]};
}

std::vector<int> FusionNet::layer_output_widths(const FusionInput& input) const {
  nn::NoGradGuard no_grad;
  nn::Tensor x({1, kFusionInputSize});
  std::copy(input.values.begin(), input.values.end(), x.data());
  std::vector<int> widths;
  nn::Var h = nn::constant(std::move(x));
  for (int i = 0; i < 3; ++i) {
    h = nn::linear(h, params_.get(layer(i) + ".w"), params_.get(layer(i) + ".b"));
    if (i < 2) h = nn::relu(h);
    widths.push_back(h->value.dim(1));
  }
  return widths;
}

FusionInput assemble_fusion_input(const Detection& det, double p_mitosis,
                                  const nn::Tensor& attention, int image_width,
                                  int image_height) {
  const bool square = attention.rank() == 2 && attention.dim(0) == kAttentionSide &&
                      attention.dim(1) == kAttentionSide;
  const bool batched = attention.rank() == 4 && attention.dim(0) == 1 && attention.dim(1) == 1 &&
                       attention.dim(2) == kAttentionSide && attention.dim(3) == kAttentionSide;
  if (!square && !batched) {
    fail(ErrorCode::InvalidArgument, "assemble_fusion_input: attention map must be 14x14, got " +
                                         nn::shape_string(attention.shape()));
  }
  if (image_width <= 0 || image_height <= 0) {
    fail(ErrorCode::InvalidArgument, "assemble_fusion_input: image size must be positive");
  }
  FusionInput in;
  auto& v = in.values;
  v[0] = det.box.x1 / image_width;
  v[1] = det.box.y1 / image_height;
  v[2] = det.box.x2 / image_width;
  v[3] = det.box.y2 / image_height;
  v[4] = det.class_id;
  v[5] = det.score;
  v[6] = p_mitosis;
  std::copy(attention.values().begin(), attention.values().end(), v.begin() + 7);
  return in;
}

Detection apply_adjustment(const Detection& det, const Adjustment& adj, int image_width,
                           int image_height, double max_offset) {
  const double dx = adj.dx(max_offset), dy = adj.dy(max_offset);
  Detection out = det;
  out.box = clamp_box({det.box.x1 + dx, det.box.y1 + dy, det.box.x2 + dx, det.box.y2 + dy},
                      image_width, image_height);
  out.score = std::clamp(det.score * adj.multiplier(), 0.0, 1.0);
  return out;
}

double fusion_loss(const std::vector<Detection>& adjusted, const std::vector<Point>& gt,
                   double radius, double lambda) {
  if (!(radius > 0.0)) fail(ErrorCode::InvalidArgument, "fusion_loss: radius must be > 0");
  if (adjusted.empty()) return 0.0;
  const MatchResult m = match_detections(adjusted, gt, radius);
  std::vector<bool> matched(adjusted.size(), false);
  for (const auto& p : m.pairs) matched[p.detection] = true;
  double loss = 0.0;
  for (std::size_t i = 0; i < adjusted.size(); ++i) loss += bce(adjusted[i].score, matched[i]);
  loss /= static_cast<double>(adjusted.size());
  if (!m.pairs.empty()) {
    double l1 = 0.0;
    for (const auto& p : m.pairs) {
      const Point c = center(adjusted[p.detection].box);
      l1 += (std::abs(c.x - gt[p.ground_truth].x) + std::abs(c.y - gt[p.ground_truth].y)) / radius;
    }
    loss += lambda * l1 / static_cast<double>(m.pairs.size());
  }
  return loss;
}

nn::Var fusion_loss_graph(const nn::Var& raw, const std::vector<Detection>& dets,
                          const std::vector<Point>& gt, int image_width, int image_height,
                          const FusionConfig& config) {
  const nn::Tensor& r = raw->value;
  if (r.rank() != 2 || r.dim(1) != 3 || static_cast<std::size_t>(r.dim(0)) != dets.size()) {
    fail(ErrorCode::InvalidArgument, "fusion_loss_graph: raw outputs must be [N,3] for N detections");
  }
  const std::size_t n = dets.size();
  const double R = config.max_offset;
  std::vector<Detection> adjusted(n);
  for (std::size_t i = 0; i < n; ++i) {
    adjusted[i] = apply_adjustment(dets[i], {r[i * 3], r[i * 3 + 1], r[i * 3 + 2]}, image_width,
                                   image_height, R);
  }
  const double value = fusion_loss(adjusted, gt, config.radius, config.lambda);

  nn::Tensor grad({static_cast<int>(n), 3}, 0.0);
  if (n > 0) {
    const MatchResult m = match_detections(adjusted, gt, config.radius);
    std::vector<int> match_of(n, -1);
    for (const auto& p : m.pairs) match_of[p.detection] = static_cast<int>(p.ground_truth);
    const double inv_n = 1.0 / static_cast<double>(n);
    const double l1_scale =
        m.pairs.empty() ? 0.0 : config.lambda / (config.radius * static_cast<double>(m.pairs.size()));
    auto inside = [](double v, double hi) { return v > 0.0 && v < hi ? 1.0 : 0.0; };
    for (std::size_t i = 0; i < n; ++i) {
      const double u = r[i * 3], v = r[i * 3 + 1], w = r[i * 3 + 2];
      const Box& b = dets[i].box;
      const double dx = std::tanh(u) * R, dy = std::tanh(v) * R;

      // Score path: s' = clamp(s * 2 sigmoid(w), 0, 1), then BCE.
      const double sg = sigmoid(w);
      const double raw_score = dets[i].score * 2.0 * sg;
      const double p = adjusted[i].score;
      double dloss_dp = 0.0;
      if (p > kEps && p < 1.0 - kEps) dloss_dp = (match_of[i] >= 0 ? -1.0 / p : 1.0 / (1.0 - p)) * inv_n;
      if (raw_score > 0.0 && raw_score < 1.0) {
        grad[i * 3 + 2] = dloss_dp * dets[i].score * 2.0 * sg * (1.0 - sg);
      }

      // Center path: L1 against the matched point through the clamped translation.
      if (match_of[i] >= 0) {
        const Point c = center(adjusted[i].box);
        const Point& g = gt[match_of[i]];
        const double sx = c.x > g.x ? 1.0 : (c.x < g.x ? -1.0 : 0.0);
        const double sy = c.y > g.y ? 1.0 : (c.y < g.y ? -1.0 : 0.0);
        const double dcx = 0.5 * (inside(b.x1 + dx, image_width) + inside(b.x2 + dx, image_width));
        const double dcy = 0.5 * (inside(b.y1 + dy, image_height) + inside(b.y2 + dy, image_height));
        const double tu = std::tanh(u), tv = std::tanh(v);
        grad[i * 3] = l1_scale * sx * dcx * R * (1.0 - tu * tu);
        grad[i * 3 + 1] = l1_scale * sy * dcy * R * (1.0 - tv * tv);
      }
    }
  }

  auto node = std::make_shared<nn::Node>();
  node->value = nn::Tensor({1}, value);
  if (raw->requires_grad) {
    node->requires_grad = true;
    node->inputs = {raw};
    node->backward_fn = [grad = std::move(grad)](nn::Node& self) {
      nn::Tensor& d = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[0] * grad[i];
    };
  }
  return node;
}

}  // namespace mitodet
