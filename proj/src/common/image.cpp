#include "common/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "common/error.hpp"

namespace boxprompt {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

Box tight_box(const Mask& mask) {
  Box box{mask.width, mask.height, -1, -1};
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(y, x)) continue;
      box.x0 = std::min(box.x0, x);
      box.y0 = std::min(box.y0, y);
      box.x1 = std::max(box.x1, x + 1);
      box.y1 = std::max(box.y1, y + 1);
    }
  }
  require(box.x1 > 0, ErrorKind::InvalidArgument, "tight_box: empty mask");
  return box;
}

float quantize8(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<float>(std::lround(c * 255.0f)) / 255.0f;
}

Image quantized(const Image& image) {
  Image out = image;
  for (auto& v : out.data) v = quantize8(v);
  return out;
}

namespace {

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::Io, "write failed: " + path.string());
}

struct NetpbmHeader {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::size_t offset = 0;
};

NetpbmHeader parse_header(const std::string& bytes, const char* magic, const std::filesystem::path& path) {
  require(bytes.size() >= 2 && bytes[0] == magic[0] && bytes[1] == magic[1], ErrorKind::Format,
          path.string() + ": expected " + magic);
  std::size_t pos = 2;
  auto next_int = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    require(pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos])), ErrorKind::Format,
            path.string() + ": malformed header");
    long v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos] - '0');
      require(v < (1L << 24), ErrorKind::Format, path.string() + ": header value out of range");
      ++pos;
    }
    return static_cast<int>(v);
  };
  NetpbmHeader h;
  h.width = next_int();
  h.height = next_int();
  h.maxval = next_int();
  // Exactly one whitespace byte separates the header from the raster.
  require(pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos])), ErrorKind::Format,
          path.string() + ": malformed header");
  h.offset = pos + 1;
  require(h.width > 0 && h.height > 0, ErrorKind::Format, path.string() + ": empty raster");
  require(h.maxval == 255, ErrorKind::Format, path.string() + ": only maxval 255 is supported");
  return h;
}

std::string header(const char* magic, int height, int width) {
  return std::string(magic) + "\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::string bytes = header("P6", image.height, image.width);
  const std::size_t base = bytes.size();
  bytes.resize(base + 3 * image.plane());
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        bytes[base + 3 * (static_cast<std::size_t>(y) * image.width + x) + c] =
            static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
      }
    }
  }
  write_all(path, bytes);
}

Image read_ppm(const std::filesystem::path& path) {
  const std::string bytes = read_all(path);
  const NetpbmHeader h = parse_header(bytes, "P6", path);
  Image image(h.height, h.width);
  require(bytes.size() - h.offset >= 3 * image.plane(), ErrorKind::Format, path.string() + ": truncated raster");
  for (int y = 0; y < h.height; ++y) {
    for (int x = 0; x < h.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const auto b = static_cast<unsigned char>(bytes[h.offset + 3 * (static_cast<std::size_t>(y) * h.width + x) + c]);
        image.at(c, y, x) = static_cast<float>(b) / 255.0f;
      }
    }
  }
  return image;
}

void write_pgm(const std::filesystem::path& path, int height, int width, const std::vector<std::uint8_t>& gray) {
  require(gray.size() == static_cast<std::size_t>(height) * width, ErrorKind::Shape, "write_pgm: size mismatch");
  std::string bytes = header("P5", height, width);
  bytes.append(reinterpret_cast<const char*>(gray.data()), gray.size());
  write_all(path, bytes);
}

std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, int& height, int& width) {
  const std::string bytes = read_all(path);
  const NetpbmHeader h = parse_header(bytes, "P5", path);
  const std::size_t n = static_cast<std::size_t>(h.height) * h.width;
  require(bytes.size() - h.offset >= n, ErrorKind::Format, path.string() + ": truncated raster");
  height = h.height;
  width = h.width;
  return {bytes.begin() + static_cast<std::ptrdiff_t>(h.offset),
          bytes.begin() + static_cast<std::ptrdiff_t>(h.offset + n)};
}

void write_mask_pgm(const std::filesystem::path& path, const Mask& mask) {
  std::vector<std::uint8_t> gray(mask.data.size());
  std::transform(mask.data.begin(), mask.data.end(), gray.begin(), [](std::uint8_t v) { return v ? 255 : 0; });
  write_pgm(path, mask.height, mask.width, gray);
}

Mask read_mask_pgm(const std::filesystem::path& path) {
  int h = 0;
  int w = 0;
  const auto gray = read_pgm(path, h, w);
  Mask mask(h, w);
  for (std::size_t i = 0; i < gray.size(); ++i) {
    require(gray[i] == 0 || gray[i] == 255, ErrorKind::Format, path.string() + ": mask values must be 0 or 255");
    mask.data[i] = gray[i] ? 1 : 0;
  }
  return mask;
}

}  // namespace boxprompt
