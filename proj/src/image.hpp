#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mitodet {

// Interleaved RGB image with channel values in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;  // (y * width + x) * 3 + c

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0.0f) {}

  float& at(int x, int y, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  float at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

// 8-bit quantization used on disk; v -> round(v*255)/255.
float quantize_unit(double v);

Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& image);
// Raw 8-bit RGB rows (for heatmap rendering).
void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& rgb);

}  // namespace mitodet
