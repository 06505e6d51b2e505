#pragma once

#include <span>
#include <vector>

namespace glyphspot {

/// Axis-aligned box in pixel coordinates, origin top-left, y downward.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x1 <= x2 && y1 <= y2; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Anchor {
  double center_x = 0, center_y = 0;
  double width = 0, height = 0;
  int row = 0, col = 0, shape = 0;

  BBox box() const {
    return {center_x - 0.5 * width, center_y - 0.5 * height,
            center_x + 0.5 * width, center_y + 0.5 * height};
  }
};

/// Center offsets normalized by anchor size, log size ratios.
struct BoxDelta {
  double tx = 0, ty = 0, tw = 0, th = 0;
};

struct Detection {
  BBox box;
  int class_id = 0;
  double score = 0;
};

double iou(const BBox& a, const BBox& b);

/// Strict detection ordering: score desc, then x1, y1, class asc.
bool detection_order(const Detection& a, const Detection& b);

/// Greedy NMS. Output is sorted by `detection_order`.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

/// Same as `nms` but returns kept input indices (in output order).
std::vector<int> nms_indices(std::span<const Detection> dets, double iou_threshold);

/// One anchor per (cell, scale, ratio), row-major over cells then shape.
/// `ratios` are height/width; an anchor of scale s has area s*s.
std::vector<Anchor> generate_anchors(int feat_w, int feat_h, int stride,
                                     std::span<const double> scales,
                                     std::span<const double> ratios);

BoxDelta encode_delta(const BBox& gt, const Anchor& anchor);
BBox decode_delta(const BoxDelta& d, const Anchor& anchor);

/// Anchor-shaped view of an arbitrary box (used when refining proposals).
Anchor anchor_from_box(const BBox& b);

BBox clip_box(const BBox& b, double width, double height);

}  // namespace glyphspot
