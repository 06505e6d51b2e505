#include "glyphspot/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace glyphspot {

namespace {
// Keeps exp() in decode_delta finite for wild regressor outputs.
const double kMaxLogRatio = std::log(1000.0 / 16.0);
}  // namespace

double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

bool detection_order(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
  if (a.box.y1 != b.box.y1) return a.box.y1 < b.box.y1;
  return a.class_id < b.class_id;
}

std::vector<int> nms_indices(std::span<const Detection> dets, double iou_threshold) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return detection_order(dets[a], dets[b]); });
  std::vector<char> suppressed(dets.size(), 0);
  std::vector<int> keep;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const int cur = order[i];
    if (suppressed[cur]) continue;
    keep.push_back(cur);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const int other = order[j];
      if (!suppressed[other] && iou(dets[cur].box, dets[other].box) >= iou_threshold)
        suppressed[other] = 1;
    }
  }
  return keep;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::vector<Detection> out;
  for (int i : nms_indices(dets, iou_threshold)) out.push_back(dets[i]);
  return out;
}

std::vector<Anchor> generate_anchors(int feat_w, int feat_h, int stride,
                                     std::span<const double> scales,
                                     std::span<const double> ratios) {
  if (stride < 1) throw std::invalid_argument("generate_anchors: stride must be >= 1");
  if (scales.empty() || ratios.empty())
    throw std::invalid_argument("generate_anchors: scales and ratios must be non-empty");
  std::vector<Anchor> anchors;
  anchors.reserve(static_cast<std::size_t>(feat_w) * feat_h * scales.size() * ratios.size());
  for (int row = 0; row < feat_h; ++row) {
    for (int col = 0; col < feat_w; ++col) {
      int shape = 0;
      for (double s : scales) {
        for (double r : ratios) {
          Anchor a;
          a.center_x = (col + 0.5) * stride;
          a.center_y = (row + 0.5) * stride;
          a.width = s / std::sqrt(r);
          a.height = s * std::sqrt(r);
          a.row = row;
          a.col = col;
          a.shape = shape++;
          anchors.push_back(a);
        }
      }
    }
  }
  return anchors;
}

BoxDelta encode_delta(const BBox& gt, const Anchor& anchor) {
  if (gt.width() <= 0 || gt.height() <= 0)
    throw std::invalid_argument("encode_delta: ground-truth box must have positive size");
  return {(gt.center_x() - anchor.center_x) / anchor.width,
          (gt.center_y() - anchor.center_y) / anchor.height,
          std::log(gt.width() / anchor.width), std::log(gt.height() / anchor.height)};
}

BBox decode_delta(const BoxDelta& d, const Anchor& anchor) {
  const double cx = anchor.center_x + d.tx * anchor.width;
  const double cy = anchor.center_y + d.ty * anchor.height;
  const double w = anchor.width * std::exp(std::clamp(d.tw, -kMaxLogRatio, kMaxLogRatio));
  const double h = anchor.height * std::exp(std::clamp(d.th, -kMaxLogRatio, kMaxLogRatio));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

Anchor anchor_from_box(const BBox& b) {
  Anchor a;
  a.center_x = b.center_x();
  a.center_y = b.center_y();
  a.width = b.width();
  a.height = b.height();
  return a;
}

BBox clip_box(const BBox& b, double width, double height) {
  BBox c{std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height),
         std::clamp(b.x2, 0.0, width), std::clamp(b.y2, 0.0, height)};
  c.x2 = std::max(c.x2, c.x1);
  c.y2 = std::max(c.y2, c.y1);
  return c;
}

}  // namespace glyphspot
