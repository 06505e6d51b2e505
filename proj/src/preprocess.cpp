#include "glyphspot/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace glyphspot {

Image binarize(const GrayImage& page, const BinarizeConfig& cfg) {
  if (page.width == 0 || page.height == 0) throw std::invalid_argument("binarize: empty image");
  if (cfg.window > page.width && cfg.window > page.height)
    throw std::invalid_argument("binarize: window larger than both image dimensions");
  const int w = page.width, h = page.height, half = cfg.window / 2;

  // integral images of I and I^2 (exact in 64-bit integers)
  std::vector<long long> sum(static_cast<std::size_t>(w + 1) * (h + 1), 0);
  std::vector<long long> sq(sum.size(), 0);
  auto idx = [w](int x, int y) { return static_cast<std::size_t>(y) * (w + 1) + x; };
  for (int y = 0; y < h; ++y) {
    long long row = 0, row_sq = 0;
    for (int x = 0; x < w; ++x) {
      const long long v = page.at(x, y);
      row += v;
      row_sq += v * v;
      sum[idx(x + 1, y + 1)] = sum[idx(x + 1, y)] + row;
      sq[idx(x + 1, y + 1)] = sq[idx(x + 1, y)] + row_sq;
    }
  }

  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    const int y0 = std::max(0, y - half), y1 = std::min(h, y + half + 1);
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - half), x1 = std::min(w, x + half + 1);
      const long long n = static_cast<long long>(x1 - x0) * (y1 - y0);
      const long long s = sum[idx(x1, y1)] - sum[idx(x0, y1)] - sum[idx(x1, y0)] + sum[idx(x0, y0)];
      const long long s2 = sq[idx(x1, y1)] - sq[idx(x0, y1)] - sq[idx(x1, y0)] + sq[idx(x0, y0)];
      const double mean = static_cast<double>(s) / n;
      const double var = std::max(0.0, static_cast<double>(s2) / n - mean * mean);
      const double t = mean * (1.0 + cfg.k * (std::sqrt(var) / cfg.dynamic_range - 1.0));
      out.at(x, y) = page.at(x, y) <= t ? 1.f : 0.f;
    }
  }
  return out;
}

std::vector<int> row_projection(const Image& binary) {
  std::vector<int> proj(static_cast<std::size_t>(binary.height), 0);
  for (int y = 0; y < binary.height; ++y)
    for (int x = 0; x < binary.width; ++x) proj[y] += binary.at(x, y) > 0.5f ? 1 : 0;
  return proj;
}

std::vector<LineSegment> segment_lines(const Image& binary, const SegmentConfig& cfg) {
  std::vector<LineSegment> lines;
  if (binary.empty()) return lines;
  const auto proj = row_projection(binary);
  const int h = binary.height;
  const int half = cfg.smoothing / 2;
  const double threshold = cfg.min_fraction * binary.width;

  // rows outside the page count as blank; the smoothed profile may spill past the
  // edges so that blank padding never shifts lines
  const int lo = -half, hi = h + half;
  std::vector<char> on(static_cast<std::size_t>(hi - lo), 0);
  for (int y = lo; y < hi; ++y) {
    long long acc = 0;
    for (int d = -half; d <= half; ++d) {
      const int r = y + d;
      if (r >= 0 && r < h) acc += proj[r];
    }
    on[y - lo] = static_cast<double>(acc) / cfg.smoothing > threshold;
  }

  for (int y = lo; y < hi;) {
    if (!on[y - lo]) {
      ++y;
      continue;
    }
    int end = y;
    while (end < hi && on[end - lo]) ++end;
    LineSegment seg;
    seg.top = y;
    seg.bottom = end;
    const int top = y - cfg.padding, bottom = end + cfg.padding;
    seg.image = Image(binary.width, bottom - top);
    for (int r = std::max(0, top); r < std::min(h, bottom); ++r)
      std::copy_n(&binary.pixels[static_cast<std::size_t>(r) * binary.width], binary.width,
                  &seg.image.pixels[static_cast<std::size_t>(r - top) * binary.width]);
    lines.push_back(std::move(seg));
    y = end;
  }
  return lines;
}

Glyph crop_support(const Image& line, const BBox& box) {
  const int x0 = static_cast<int>(std::floor(box.x1)), y0 = static_cast<int>(std::floor(box.y1));
  const int x1 = static_cast<int>(std::ceil(box.x2)), y1 = static_cast<int>(std::ceil(box.y2));
  if (!box.valid() || x0 < 0 || y0 < 0 || x1 > line.width || y1 > line.height || x1 <= x0 || y1 <= y0)
    throw std::out_of_range("crop_support: box outside the line image");
  Glyph g;
  g.image = trim(crop(line, {x0, y0, x1 - x0, y1 - y0}));
  if (g.image.empty()) throw std::invalid_argument("crop_support: crop contains no ink");
  return g;
}

Image support_canvas(const Image& glyph, int size, int margin) {
  return fit_to_canvas(glyph, size, margin);
}

}  // namespace glyphspot
