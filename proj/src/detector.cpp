#include "detector.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "error.hpp"
#include "rng.hpp"

namespace mitodet {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

nn::Tensor he_normal(Rng& rng, std::vector<int> shape, int fan_in, double gain = 1.0) {
  nn::Tensor t(std::move(shape));
  const double sd = gain * std::sqrt(2.0 / fan_in);
  for (double& v : t.values()) v = sd * rng.normal();
  return t;
}

nn::Tensor normal(Rng& rng, std::vector<int> shape, double sd) {
  nn::Tensor t(std::move(shape));
  for (double& v : t.values()) v = sd * rng.normal();
  return t;
}

}  // namespace

void DetectorConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::InvalidArgument, "detector config: " + what); };
  if (channels.empty()) bad("channels must be non-empty");
  for (int c : channels) {
    if (c <= 0) bad("channels must be positive");
  }
  if (head_channels <= 0) bad("head_channels must be positive");
  if (num_classes < 1) bad("num_classes must be >= 1");
  if (strides.empty()) bad("strides must be non-empty");
  if (level_bounds.size() != strides.size() + 1) bad("level_bounds needs strides+1 entries");
  for (int s : strides) {
    if (s < backbone_stride() || s % backbone_stride() != 0) {
      bad("stride " + std::to_string(s) + " must be a multiple of the backbone stride " +
          std::to_string(backbone_stride()));
    }
    if (input_size % s != 0) bad("stride " + std::to_string(s) + " must divide input_size");
  }
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0)) bad("score_threshold must be in [0,1]");
  if (!(nms_iou >= 0.0 && nms_iou <= 1.0)) bad("nms_iou must be in [0,1]");
  if (!(gt_box_size > 0.0)) bad("gt_box_size must be positive");
}

Detector::Detector(DetectorConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  int in = 3;
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    const int out = config_.channels[i];
    const std::string name = "backbone" + std::to_string(i);
    params_.add(name + ".w", he_normal(rng, {out, in, 3, 3}, in * 9));
    params_.add(name + ".b", nn::Tensor({out}, 0.0));
    in = out;
  }
  const int hc = config_.head_channels;
  params_.add("head.tower.w", he_normal(rng, {hc, in, 3, 3}, in * 9));
  params_.add("head.tower.b", nn::Tensor({hc}, 0.0));
  const int outs = config_.num_classes + 5;
  params_.add("head.out.w", normal(rng, {outs, hc, 3, 3}, 0.01));
  nn::Tensor bias({outs}, 0.0);
  const double prior = 0.01;
  for (int c = 0; c < config_.num_classes; ++c) bias[c] = -std::log((1.0 - prior) / prior);
  for (int k = 0; k < 4; ++k) bias[config_.num_classes + 1 + k] = 1.0;
  params_.add("head.out.b", std::move(bias));
}

std::vector<nn::Var> Detector::forward_raw(const nn::Var& images) const {
  const auto& x = images->value;
  if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != config_.input_size ||
      x.dim(3) != config_.input_size) {
    fail(ErrorCode::InvalidArgument, "detector_forward: expected [N,3," +
                                         std::to_string(config_.input_size) + "," +
                                         std::to_string(config_.input_size) + "] input, got " +
                                         nn::shape_string(x.shape()));
  }
  nn::Var h = images;
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    const std::string name = "backbone" + std::to_string(i);
    h = nn::relu(nn::conv2d(h, params_.get(name + ".w"), params_.get(name + ".b"), 2, 1));
  }
  std::vector<nn::Var> out;
  for (int stride : config_.strides) {
    nn::Var level = nn::max_pool(h, stride / config_.backbone_stride());
    level = nn::relu(nn::conv2d(level, params_.get("head.tower.w"), params_.get("head.tower.b"), 1, 1));
    out.push_back(nn::conv2d(level, params_.get("head.out.w"), params_.get("head.out.b"), 1, 1));
  }
  return out;
}

nn::Tensor image_batch(const std::vector<const Image*>& images) {
  if (images.empty()) fail(ErrorCode::InvalidArgument, "image_batch: empty batch");
  const int h = images[0]->height, w = images[0]->width;
  nn::Tensor t({static_cast<int>(images.size()), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (img.width != w || img.height != h) {
      fail(ErrorCode::InvalidArgument, "image_batch: images differ in size");
    }
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) t.at(static_cast<int>(n), c, y, x) = img.at(x, y, c);
      }
    }
  }
  return t;
}

DetectorOutputMaps maps_from_raw(const std::vector<nn::Var>& raw, int sample,
                                 const DetectorConfig& config, int image_width,
                                 int image_height) {
  DetectorOutputMaps maps;
  maps.image_width = image_width;
  maps.image_height = image_height;
  const int nc = config.num_classes;
  for (std::size_t l = 0; l < raw.size(); ++l) {
    const nn::Tensor& t = raw[l]->value;
    LevelMaps lm;
    lm.stride = config.strides[l];
    lm.rows = t.dim(2);
    lm.cols = t.dim(3);
    lm.class_logits = nn::Tensor({nc, lm.rows, lm.cols});
    lm.centerness_logits = nn::Tensor({lm.rows, lm.cols});
    lm.distances = nn::Tensor({4, lm.rows, lm.cols});
    const std::size_t plane = static_cast<std::size_t>(lm.rows) * lm.cols;
    for (std::size_t i = 0; i < plane; ++i) {
      const int y = static_cast<int>(i / lm.cols), x = static_cast<int>(i % lm.cols);
      for (int c = 0; c < nc; ++c) lm.class_logits[c * plane + i] = t.at(sample, c, y, x);
      lm.centerness_logits[i] = t.at(sample, nc, y, x);
      for (int k = 0; k < 4; ++k) {
        lm.distances[k * plane + i] = std::exp(t.at(sample, nc + 1 + k, y, x)) * lm.stride;
      }
    }
    maps.levels.push_back(std::move(lm));
  }
  return maps;
}

DetectorOutputMaps Detector::forward(const Image& image) const {
  nn::NoGradGuard no_grad;
  auto raw = forward_raw(nn::constant(image_batch({&image})));
  return maps_from_raw(raw, 0, config_, image.width, image.height);
}

std::vector<Detection> Detector::detect(const Image& image) const {
  return decode_detections(forward(image), config_);
}

std::vector<Detection> decode_detections(const DetectorOutputMaps& maps,
                                         const DetectorConfig& config) {
  std::vector<Detection> candidates;
  for (const auto& lm : maps.levels) {
    const int nc = lm.class_logits.dim(0);
    const std::size_t plane = static_cast<std::size_t>(lm.rows) * lm.cols;
    for (std::size_t i = 0; i < plane; ++i) {
      const int row = static_cast<int>(i / lm.cols), col = static_cast<int>(i % lm.cols);
      int best = 0;
      for (int c = 1; c < nc; ++c) {
        if (lm.class_logits[c * plane + i] > lm.class_logits[best * plane + i]) best = c;
      }
      const double score = std::sqrt(sigmoid(lm.class_logits[best * plane + i]) *
                                     sigmoid(lm.centerness_logits[i]));
      if (!(score >= config.score_threshold)) continue;
      const double cx = lm.stride * (col + 0.5), cy = lm.stride * (row + 0.5);
      Box box{cx - lm.distances[i], cy - lm.distances[plane + i], cx + lm.distances[2 * plane + i],
              cy + lm.distances[3 * plane + i]};
      candidates.push_back({clamp_box(box, maps.image_width, maps.image_height), best, score});
    }
  }
  return nms(candidates, config.nms_iou);
}

double centerness_target(const std::array<double, 4>& d) {
  const double lr = std::min(d[0], d[2]) / std::max(d[0], d[2]);
  const double tb = std::min(d[1], d[3]) / std::max(d[1], d[3]);
  return std::sqrt(lr * tb);
}

std::vector<LevelTargets> encode_targets(const std::vector<Box>& gt_boxes,
                                         const DetectorConfig& config, int image_width,
                                         int image_height) {
  std::vector<LevelTargets> out;
  for (std::size_t l = 0; l < config.strides.size(); ++l) {
    const int stride = config.strides[l];
    const int rows = image_height / stride, cols = image_width / stride;
    const double lo = config.level_bounds[l], hi = config.level_bounds[l + 1];
    LevelTargets t;
    t.label.assign(static_cast<std::size_t>(rows) * cols, -1);
    t.distances.assign(t.label.size(), {0, 0, 0, 0});
    t.centerness.assign(t.label.size(), 0.0);
    for (int row = 0; row < rows; ++row) {
      for (int col = 0; col < cols; ++col) {
        const double cx = stride * (col + 0.5), cy = stride * (row + 0.5);
        double best_area = std::numeric_limits<double>::infinity();
        for (const Box& g : gt_boxes) {
          const std::array<double, 4> d{cx - g.x1, cy - g.y1, g.x2 - cx, g.y2 - cy};
          if (*std::min_element(d.begin(), d.end()) <= 0.0) continue;
          const double m = *std::max_element(d.begin(), d.end());
          if (!(m > lo && m <= hi)) continue;
          if (g.area() < best_area) {
            best_area = g.area();
            const std::size_t i = static_cast<std::size_t>(row) * cols + col;
            t.label[i] = 0;
            t.distances[i] = d;
            t.centerness[i] = centerness_target(d);
          }
        }
      }
    }
    t.positives = static_cast<int>(std::count_if(t.label.begin(), t.label.end(),
                                                 [](int v) { return v >= 0; }));
    out.push_back(std::move(t));
  }
  return out;
}

DetectorLoss detector_loss(const std::vector<nn::Var>& raw,
                           const std::vector<std::vector<Box>>& gt_boxes,
                           const DetectorConfig& config, int image_width, int image_height) {
  if (raw.size() != config.strides.size()) {
    fail(ErrorCode::InvalidArgument, "detector_loss: level count mismatch");
  }
  const int batch = raw[0]->value.dim(0);
  if (gt_boxes.size() != static_cast<std::size_t>(batch)) {
    fail(ErrorCode::InvalidArgument, "detector_loss: one gt list per sample required");
  }
  for (const auto& boxes : gt_boxes) {
    for (const Box& b : boxes) {
      if (!b.valid()) fail(ErrorCode::InvalidArgument, "detector_loss: invalid ground-truth box");
    }
  }
  const int nc = config.num_classes;
  const double alpha = config.focal_alpha, gamma = config.focal_gamma;

  std::vector<std::vector<LevelTargets>> targets;
  int positives = 0;
  for (const auto& boxes : gt_boxes) {
    targets.push_back(encode_targets(boxes, config, image_width, image_height));
    for (const auto& t : targets.back()) positives += t.positives;
  }
  const double norm = std::max(1, positives);

  double cls_sum = 0.0, reg_sum = 0.0, ctr_sum = 0.0;
  std::vector<nn::Tensor> grads;
  for (std::size_t l = 0; l < raw.size(); ++l) {
    const nn::Tensor& t = raw[l]->value;
    nn::Tensor g(t.shape(), 0.0);
    const int rows = t.dim(2), cols = t.dim(3);
    for (int n = 0; n < batch; ++n) {
      const LevelTargets& tg = targets[n][l];
      if (tg.label.size() != static_cast<std::size_t>(rows) * cols) {
        fail(ErrorCode::InvalidArgument, "detector_loss: grid/target size mismatch");
      }
      for (int row = 0; row < rows; ++row) {
        for (int col = 0; col < cols; ++col) {
          const std::size_t i = static_cast<std::size_t>(row) * cols + col;
          // Sigmoid focal loss over every location and class.
          for (int c = 0; c < nc; ++c) {
            const double z = t.at(n, c, row, col);
            const double p = sigmoid(z);
            if (tg.label[i] == c) {
              const double logp = -softplus(-z);
              const double w = std::pow(1.0 - p, gamma);
              cls_sum += -alpha * w * logp;
              g.at(n, c, row, col) = alpha * w * (gamma * p * logp - (1.0 - p)) / norm;
            } else {
              const double log1mp = -softplus(z);
              const double w = std::pow(p, gamma);
              cls_sum += -(1.0 - alpha) * w * log1mp;
              g.at(n, c, row, col) = (1.0 - alpha) * w * (p - gamma * (1.0 - p) * log1mp) / norm;
            }
          }
          if (tg.label[i] < 0) continue;

          // Centerness BCE with logits.
          const double zc = t.at(n, nc, row, col);
          const double yc = tg.centerness[i];
          ctr_sum += softplus(zc) - yc * zc;
          g.at(n, nc, row, col) = (sigmoid(zc) - yc) / norm;

          // IoU loss -ln(I/U) on the distances exp(raw) * stride.
          std::array<double, 4> d{};
          for (int k = 0; k < 4; ++k) d[k] = std::exp(t.at(n, nc + 1 + k, row, col)) * config.strides[l];
          const auto& gt = tg.distances[i];
          const double wi = std::min(d[0], gt[0]) + std::min(d[2], gt[2]);
          const double hi = std::min(d[1], gt[1]) + std::min(d[3], gt[3]);
          const double inter = wi * hi;
          const double ap = (d[0] + d[2]) * (d[1] + d[3]);
          const double ag = (gt[0] + gt[2]) * (gt[1] + gt[3]);
          const double uni = ap + ag - inter;
          reg_sum += std::log(uni) - std::log(inter);
          const std::array<double, 4> dinter{d[0] < gt[0] ? hi : 0.0, d[1] < gt[1] ? wi : 0.0,
                                             d[2] < gt[2] ? hi : 0.0, d[3] < gt[3] ? wi : 0.0};
          const std::array<double, 4> darea{d[1] + d[3], d[0] + d[2], d[1] + d[3], d[0] + d[2]};
          for (int k = 0; k < 4; ++k) {
            const double dl = (darea[k] - dinter[k]) / uni - dinter[k] / inter;
            g.at(n, nc + 1 + k, row, col) = dl * d[k] / norm;
          }
        }
      }
    }
    grads.push_back(std::move(g));
  }

  DetectorLoss out;
  out.classification = cls_sum / norm;
  out.regression = reg_sum / norm;
  out.centerness = ctr_sum / norm;
  out.positives = positives;
  const double total = out.classification + out.regression + out.centerness;
  if (!std::isfinite(total)) fail(ErrorCode::Numeric, "detector loss is not finite");

  auto node = std::make_shared<nn::Node>();
  node->value = nn::Tensor({1}, total);
  for (const auto& r : raw) {
    if (r->requires_grad) node->requires_grad = true;
  }
  if (node->requires_grad) {
    node->inputs = raw;
    node->backward_fn = [grads = std::move(grads)](nn::Node& self) {
      const double up = self.grad[0];
      for (std::size_t l = 0; l < self.inputs.size(); ++l) {
        if (!self.inputs[l]->requires_grad) continue;
        nn::Tensor& dst = self.inputs[l]->ensure_grad();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += up * grads[l][i];
      }
    };
  }
  out.total = node;
  return out;
}

}  // namespace mitodet
