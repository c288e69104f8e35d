#include "geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "error.hpp"

namespace mitodet {

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
         x1 <= x2 && y1 <= y2;
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return a == b ? 1.0 : 0.0;
  return inter / uni;
}

Point center(const Box& b) { return {(b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0}; }

double center_distance(const Detection& det, const Point& gt) {
  const Point c = center(det.box);
  return std::hypot(c.x - gt.x, c.y - gt.y);
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0)) {
    fail(ErrorCode::InvalidArgument, "nms: iou_threshold must lie in [0,1]");
  }
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const Detection& da = dets[a];
    const Detection& db = dets[b];
    if (da.score != db.score) return da.score > db.score;
    if (da.box.y1 != db.box.y1) return da.box.y1 < db.box.y1;
    if (da.box.x1 != db.box.x1) return da.box.x1 < db.box.x1;
    return a < b;
  });
  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const Detection& cand = dets[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.class_id == cand.class_id && iou(k.box, cand.box) >= iou_threshold;
    });
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

Box clamp_box(const Box& b, int width, int height) {
  const double w = width, h = height;
  return {std::clamp(b.x1, 0.0, w), std::clamp(b.y1, 0.0, h), std::clamp(b.x2, 0.0, w),
          std::clamp(b.y2, 0.0, h)};
}

Box box_around(const Point& p, double size) {
  const double half = size / 2.0;
  return {p.x - half, p.y - half, p.x + half, p.y + half};
}

}  // namespace mitodet
