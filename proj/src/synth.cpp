#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "dataset.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace mitodet {

namespace {

struct Blob {
  Point c;
  double a, b;      // semi-axes
  double angle;
  double wobble3, wobble5, phase3, phase5;
  std::array<double, 3> color;
  double opacity;
  double edge;      // soft edge width in px
};

double smoothstep01(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// Low-frequency texture: bilinear interpolation of a coarse random grid.
std::vector<double> coarse_field(Rng& rng, int size, int cells) {
  std::vector<double> grid(static_cast<std::size_t>(cells + 1) * (cells + 1));
  for (double& g : grid) g = rng.uniform(-1.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(size) * size);
  const double scale = static_cast<double>(cells) / size;
  for (int y = 0; y < size; ++y) {
    const double gy = y * scale;
    const int iy = std::min(static_cast<int>(gy), cells - 1);
    const double fy = gy - iy;
    for (int x = 0; x < size; ++x) {
      const double gx = x * scale;
      const int ix = std::min(static_cast<int>(gx), cells - 1);
      const double fx = gx - ix;
      const auto at = [&](int cx, int cy) { return grid[static_cast<std::size_t>(cy) * (cells + 1) + cx]; };
      out[static_cast<std::size_t>(y) * size + x] =
          (1 - fy) * ((1 - fx) * at(ix, iy) + fx * at(ix + 1, iy)) +
          fy * ((1 - fx) * at(ix, iy + 1) + fx * at(ix + 1, iy + 1));
    }
  }
  return out;
}

Blob mitotic_blob(Rng& rng, Point c) {
  Blob b;
  b.c = c;
  b.a = rng.uniform(8.0, 12.0);
  b.b = rng.uniform(4.5, 7.0);
  b.angle = rng.uniform(0.0, M_PI);
  b.wobble3 = rng.uniform(0.12, 0.25);
  b.wobble5 = rng.uniform(0.05, 0.12);
  b.phase3 = rng.uniform(0.0, 2 * M_PI);
  b.phase5 = rng.uniform(0.0, 2 * M_PI);
  const double dark = rng.uniform(0.0, 0.08);
  b.color = {0.20 + dark, 0.07 + dark, 0.30 + dark};
  b.opacity = rng.uniform(0.88, 0.97);
  b.edge = 1.2;
  return b;
}

Blob distractor_blob(Rng& rng, Point c) {
  Blob b;
  b.c = c;
  const double r = rng.uniform(6.0, 9.0);
  b.a = r * rng.uniform(1.0, 1.12);
  b.b = r;
  b.angle = rng.uniform(0.0, M_PI);
  b.wobble3 = rng.uniform(0.0, 0.04);
  b.wobble5 = 0.0;
  b.phase3 = rng.uniform(0.0, 2 * M_PI);
  b.phase5 = 0.0;
  const double tone = rng.uniform(-0.05, 0.05);
  b.color = {0.60 + tone, 0.44 + tone, 0.66 + tone};
  b.opacity = rng.uniform(0.55, 0.7);
  b.edge = 2.5;
  return b;
}

void paint(std::vector<double>& rgb, int size, const Blob& b) {
  const double reach = b.a * 1.5 + b.edge + 2.0;
  const int x0 = std::max(0, static_cast<int>(std::floor(b.c.x - reach)));
  const int x1 = std::min(size - 1, static_cast<int>(std::ceil(b.c.x + reach)));
  const int y0 = std::max(0, static_cast<int>(std::floor(b.c.y - reach)));
  const int y1 = std::min(size - 1, static_cast<int>(std::ceil(b.c.y + reach)));
  const double ca = std::cos(b.angle), sa = std::sin(b.angle);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - b.c.x, dy = y + 0.5 - b.c.y;
      const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
      const double phi = std::atan2(v * b.a, u * b.b);
      const double rim = 1.0 + b.wobble3 * std::sin(3 * phi + b.phase3) +
                         b.wobble5 * std::sin(5 * phi + b.phase5);
      // Distance from the (wobbly) ellipse boundary in approximate pixels.
      const double rho = std::sqrt((u * u) / (b.a * b.a) + (v * v) / (b.b * b.b));
      const double inside_px = (rim - rho) * std::min(b.a, b.b);
      const double alpha = b.opacity * smoothstep01(0.5 + inside_px / b.edge);
      if (alpha <= 0.0) continue;
      double* px = &rgb[(static_cast<std::size_t>(y) * size + x) * 3];
      for (int c = 0; c < 3; ++c) px[c] = px[c] * (1.0 - alpha) + b.color[c] * alpha;
    }
  }
}

}  // namespace

ImageRecord generate_synthetic_image(const SynthConfig& config, std::uint64_t seed, int index,
                                     std::vector<PointAnnotation>& annotations) {
  const int size = config.image_size;
  Rng rng(seed + static_cast<std::uint64_t>(index));

  // Background: pink stroma with coarse and fine variation.
  std::vector<double> rgb(static_cast<std::size_t>(size) * size * 3);
  const std::array<double, 3> base{0.88, 0.72, 0.82};
  const auto coarse = coarse_field(rng, size, 6);
  const auto fine = coarse_field(rng, size, 28);
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    const double shade = 0.05 * coarse[i] + 0.03 * fine[i];
    for (int c = 0; c < 3; ++c) rgb[i * 3 + c] = base[c] + shade * (c == 1 ? 1.4 : 1.0);
  }

  std::vector<Point> centers;
  auto place = [&]() -> Point {
    for (int attempt = 0; attempt < config.max_placement_retries; ++attempt) {
      const Point c{rng.uniform(config.margin, size - config.margin),
                    rng.uniform(config.margin, size - config.margin)};
      const bool clear = std::all_of(centers.begin(), centers.end(), [&](const Point& o) {
        return std::hypot(o.x - c.x, o.y - c.y) >= config.min_separation;
      });
      if (clear) {
        centers.push_back(c);
        return c;
      }
    }
    fail(ErrorCode::InvalidArgument,
         "synthetic placement unsatisfiable: cannot fit objects " +
             std::to_string(config.min_separation) + " px apart in a " + std::to_string(size) +
             " px image");
  };

  for (int i = 0; i < config.positives_per_image; ++i) {
    const Point c = place();
    paint(rgb, size, mitotic_blob(rng, c));
    annotations.push_back({index, c.x, c.y, Label::Mitotic});
  }
  for (int i = 0; i < config.distractors_per_image; ++i) {
    const Point c = place();
    paint(rgb, size, distractor_blob(rng, c));
    annotations.push_back({index, c.x, c.y, Label::NonMitotic});
  }

  ImageRecord rec;
  rec.id = index;
  std::ostringstream name;
  name << "images/img_" << std::setw(5) << std::setfill('0') << index << ".png";
  rec.file = name.str();
  rec.image = Image(size, size);
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    rec.image.pixels[i] = quantize_unit(rgb[i] + 0.02 * rng.normal());
  }
  return rec;
}

Dataset generate_synthetic_dataset(const SynthConfig& config, std::uint64_t seed) {
  if (config.image_size < 112) {
    fail(ErrorCode::InvalidArgument, "synthetic image_size must be >= 112");
  }
  if (config.image_count < 0 || config.positives_per_image < 0 ||
      config.distractors_per_image < 0) {
    fail(ErrorCode::InvalidArgument, "synthetic counts must be non-negative");
  }
  Dataset ds;
  for (int i = 0; i < config.image_count; ++i) {
    ds.images.push_back(generate_synthetic_image(config, seed, i, ds.annotations));
  }
  return ds;
}

}  // namespace mitodet
