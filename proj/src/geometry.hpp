#pragma once

#include <utility>
#include <vector>

namespace mitodet {

// Continuous pixel coordinates, origin top-left, y down.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const;
  friend bool operator==(const Box&, const Box&) = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct Detection {
  Box box;
  int class_id = 0;  // 0 = mitotic figure
  double score = 0.0;
  friend bool operator==(const Detection&, const Detection&) = default;
};

double iou(const Box& a, const Box& b);
Point center(const Box& b);
double center_distance(const Detection& det, const Point& gt);

// Greedy per-class suppression. Output is sorted by descending score; ties go
// to smaller (y1, x1, input index).
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

Box clamp_box(const Box& b, int width, int height);
// Box of the given size centered on a point.
Box box_around(const Point& p, double size);

}  // namespace mitodet
