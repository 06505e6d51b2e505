#include "glyphspot/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace glyphspot {

GrayImage read_gray_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw DataError("cannot read PNG '" + path.string() + "': " + png.message);
  png.format = PNG_FORMAT_GRAY;
  GrayImage img(static_cast<int>(png.width), static_cast<int>(png.height));
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&png);
    throw DataError("cannot decode PNG '" + path.string() + "': " + png.message);
  }
  return img;
}

void write_gray_png(const GrayImage& img, const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw std::runtime_error("cannot write PNG '" + path.string() + "': " + png.message);
}

GrayImage to_gray(const Image& ink) {
  GrayImage g(ink.width, ink.height);
  for (std::size_t i = 0; i < ink.pixels.size(); ++i) {
    const float v = std::clamp(ink.pixels[i], 0.f, 1.f);
    g.pixels[i] = static_cast<std::uint8_t>(std::lround((1.f - v) * 255.f));
  }
  return g;
}

Image to_ink(const GrayImage& gray) {
  Image img(gray.width, gray.height);
  for (std::size_t i = 0; i < gray.pixels.size(); ++i)
    img.pixels[i] = 1.f - static_cast<float>(gray.pixels[i]) / 255.f;
  return img;
}

Image read_ink_png(const std::filesystem::path& path) { return to_ink(read_gray_png(path)); }

void write_ink_png(const Image& ink, const std::filesystem::path& path) {
  write_gray_png(to_gray(ink), path);
}

std::optional<PixelRect> ink_bounds(const Image& img) {
  int x0 = img.width, y0 = img.height, x1 = -1, y1 = -1;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (img.at(x, y) > 0.f) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
  }
  if (x1 < 0) return std::nullopt;
  return PixelRect{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

Image crop(const Image& img, const PixelRect& r) {
  if (r.x < 0 || r.y < 0 || r.w < 0 || r.h < 0 || r.x + r.w > img.width ||
      r.y + r.h > img.height)
    throw std::out_of_range("crop: rectangle outside image");
  Image out(r.w, r.h);
  for (int y = 0; y < r.h; ++y)
    std::copy_n(&img.pixels[static_cast<std::size_t>(r.y + y) * img.width + r.x], r.w,
                &out.pixels[static_cast<std::size_t>(y) * r.w]);
  return out;
}

Image trim(const Image& img) {
  const auto r = ink_bounds(img);
  if (!r) return {};
  return crop(img, *r);
}

Image resize_bilinear(const Image& img, int new_w, int new_h) {
  Image out(new_w, new_h);
  if (img.empty() || new_w <= 0 || new_h <= 0) return out;
  const double sx = static_cast<double>(img.width) / new_w;
  const double sy = static_cast<double>(img.height) / new_h;
  for (int y = 0; y < new_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < new_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      const double top = img.at(x0, y0) * (1 - wx) + img.at(x1, y0) * wx;
      const double bot = img.at(x0, y1) * (1 - wx) + img.at(x1, y1) * wx;
      out.at(x, y) = static_cast<float>(top * (1 - wy) + bot * wy);
    }
  }
  return out;
}

Image rotate(const Image& img, double degrees) {
  if (img.empty()) return img;
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const int new_w = static_cast<int>(std::ceil(std::abs(img.width * c) + std::abs(img.height * s)));
  const int new_h = static_cast<int>(std::ceil(std::abs(img.width * s) + std::abs(img.height * c)));
  Image out(new_w, new_h);
  const double cx_src = 0.5 * img.width, cy_src = 0.5 * img.height;
  const double cx_dst = 0.5 * new_w, cy_dst = 0.5 * new_h;
  for (int y = 0; y < new_h; ++y) {
    for (int x = 0; x < new_w; ++x) {
      // inverse map of the pixel center
      const double dx = x + 0.5 - cx_dst, dy = y + 0.5 - cy_dst;
      const double sx = c * dx + s * dy + cx_src - 0.5;
      const double sy = -s * dx + c * dy + cy_src - 0.5;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double wx = sx - x0, wy = sy - y0;
      auto sample = [&](int px, int py) -> double {
        if (px < 0 || py < 0 || px >= img.width || py >= img.height) return 0.0;
        return img.at(px, py);
      };
      const double v = (sample(x0, y0) * (1 - wx) + sample(x0 + 1, y0) * wx) * (1 - wy) +
                       (sample(x0, y0 + 1) * (1 - wx) + sample(x0 + 1, y0 + 1) * wx) * wy;
      out.at(x, y) = static_cast<float>(v);
    }
  }
  return out;
}

namespace {
template <typename Pick>
Image morph3(const Image& img, Pick pick, float outside) {
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      float v = img.at(x, y);
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int px = x + dx, py = y + dy;
          const bool inside = px >= 0 && py >= 0 && px < img.width && py < img.height;
          v = pick(v, inside ? img.at(px, py) : outside);
        }
      }
      out.at(x, y) = v;
    }
  }
  return out;
}
}  // namespace

Image dilate(const Image& img) {
  // grow the canvas by one pixel so dilated ink is not clipped
  Image padded(img.width + 2, img.height + 2);
  paste_max(padded, img, 1, 1);
  return morph3(padded, [](float a, float b) { return std::max(a, b); }, 0.f);
}

Image erode(const Image& img) {
  return morph3(img, [](float a, float b) { return std::min(a, b); }, 0.f);
}

void paste_max(Image& dst, const Image& src, int x, int y) {
  for (int sy = 0; sy < src.height; ++sy) {
    const int dy = y + sy;
    if (dy < 0 || dy >= dst.height) continue;
    for (int sx = 0; sx < src.width; ++sx) {
      const int dx = x + sx;
      if (dx < 0 || dx >= dst.width) continue;
      float& d = dst.at(dx, dy);
      d = std::max(d, src.at(sx, sy));
    }
  }
}

Image fit_to_canvas(const Image& img, int size, int margin) {
  Image canvas(size, size);
  if (img.empty()) return canvas;
  const int inner = size - 2 * margin;
  const double scale = std::min(1.0, static_cast<double>(inner) / std::max(img.width, img.height));
  Image scaled = img;
  if (scale < 1.0) {
    const int w = std::max(1, static_cast<int>(std::lround(img.width * scale)));
    const int h = std::max(1, static_cast<int>(std::lround(img.height * scale)));
    scaled = resize_bilinear(img, w, h);
  }
  paste_max(canvas, scaled, (size - scaled.width) / 2, (size - scaled.height) / 2);
  return canvas;
}

}  // namespace glyphspot
