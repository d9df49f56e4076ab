#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace boxprompt {

// Planar RGB image, channel-major (3 x H x W), values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, 0.0f) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  float& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  float at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const Image&) const = default;
};

// Binary mask, row-major H x W, values {0, 1}.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  bool operator==(const Mask&) const = default;
};

// Pixel box, inclusive-exclusive: [x0, x1) x [y0, y1).
struct Box {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  long area() const { return static_cast<long>(width()) * height(); }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool contains(const Box& o) const { return o.x0 >= x0 && o.y0 >= y0 && o.x1 <= x1 && o.y1 <= y1; }
  bool operator==(const Box&) const = default;
};

// Tight bounding box of the set pixels; throws on an empty mask.
Box tight_box(const Mask& mask);

// Rounds to the nearest 8-bit level and back, the representation at rest.
float quantize8(float v);
Image quantized(const Image& image);

// Netpbm binary formats: P6 for RGB (maxval 255), P5 for gray (maxval 255).
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, int height, int width, const std::vector<std::uint8_t>& gray);
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, int& height, int& width);

// Masks are stored as P5 with values {0, 255}.
void write_mask_pgm(const std::filesystem::path& path, const Mask& mask);
Mask read_mask_pgm(const std::filesystem::path& path);

}  // namespace boxprompt
