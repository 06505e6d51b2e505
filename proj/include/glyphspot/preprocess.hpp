#pragma once

#include <vector>

#include "glyphspot/datagen.hpp"
#include "glyphspot/geometry.hpp"
#include "glyphspot/image.hpp"

namespace glyphspot {

struct BinarizeConfig {
  int window = 31;
  double k = 0.2;
  double dynamic_range = 128.0;  // R
};

/// Sauvola thresholding: ink where I <= m * (1 + k * (s / R - 1)), with m and s
/// the mean and standard deviation over a window clipped to the page.
Image binarize(const GrayImage& page, const BinarizeConfig& cfg = {});

struct SegmentConfig {
  int smoothing = 5;            // moving-average width in rows
  double min_fraction = 0.02;   // of page width
  int padding = 4;
};

struct LineSegment {
  int top = 0;     // first row of the smoothed band (inclusive, may lie above the page)
  int bottom = 0;  // exclusive, may lie below the page
  Image image;     // rows [top - padding, bottom + padding), blank beyond the page
};

std::vector<int> row_projection(const Image& binary);

/// Splits a binarized page into text lines from its horizontal ink projection.
std::vector<LineSegment> segment_lines(const Image& binary, const SegmentConfig& cfg = {});

/// Crops `box` from a line and trims it to its ink.
Glyph crop_support(const Image& line, const BBox& box);

/// Detector input for a support glyph: aspect-preserving fit into a square canvas.
Image support_canvas(const Image& glyph, int size = 48, int margin = 2);

}  // namespace glyphspot
