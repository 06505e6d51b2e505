#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace glyphspot {

/// Thrown for unreadable or malformed input data (files, layouts, annotations).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Single-channel ink map, row-major. 1 = ink, 0 = background.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, float fill = 0.f)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  bool empty() const { return width == 0 || height == 0; }
  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// 8-bit grayscale as stored on disk (dark ink on light paper).
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 255)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

struct PixelRect {
  int x = 0, y = 0, w = 0, h = 0;
  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

GrayImage read_gray_png(const std::filesystem::path& path);
void write_gray_png(const GrayImage& img, const std::filesystem::path& path);

GrayImage to_gray(const Image& ink);
Image to_ink(const GrayImage& gray);

/// Reads a PNG as an ink map (dark pixels become ink).
Image read_ink_png(const std::filesystem::path& path);
void write_ink_png(const Image& ink, const std::filesystem::path& path);

/// Bounding rectangle of pixels with value > 0; nullopt when blank.
std::optional<PixelRect> ink_bounds(const Image& img);
Image crop(const Image& img, const PixelRect& r);
/// Crops to `ink_bounds`; returns an empty image when blank.
Image trim(const Image& img);

Image resize_bilinear(const Image& img, int new_w, int new_h);
/// Rotates about the center, expanding the canvas to keep all ink.
Image rotate(const Image& img, double degrees);
Image dilate(const Image& img);
Image erode(const Image& img);
/// Composites `src` into `dst` at (x, y) by per-pixel max; clipped at dst edges.
void paste_max(Image& dst, const Image& src, int x, int y);

/// Scales to fit (never enlarging) inside a size x size canvas minus margin, centered.
Image fit_to_canvas(const Image& img, int size, int margin);

}  // namespace glyphspot
