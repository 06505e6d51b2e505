#pragma once

#include <span>
#include <vector>

#include "glyphspot/autodiff.hpp"
#include "glyphspot/geometry.hpp"

// Differentiable layer set used by the detector. Every op reads its inputs
// from the tape, stores its output there, and registers a backward closure.
namespace glyphspot::ops {

/// x [H, W, Cin], weights [k, k, Cin, Cout], bias [Cout] -> [Ho, Wo, Cout].
template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var weights, Var bias, int stride, int padding);

/// 2x2 max pool, stride 2, floor on odd sizes.
template <typename T>
Var maxpool2(Tape<T>& tape, Var x);

template <typename T>
Var relu(Tape<T>& tape, Var x);

template <typename T>
Var sigmoid(Tape<T>& tape, Var x);

/// x [R, F], weights [F, O], bias [O] -> [R, O].
template <typename T>
Var fc(Tape<T>& tape, Var x, Var weights, Var bias);

/// [H, W, C] -> [1, 1, C] channel means.
template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x);

/// a [H, W, C] times b, where b is [1, 1, C] (broadcast) or the same shape as a.
template <typename T>
Var elem_mul(Tape<T>& tape, Var a, Var b);

/// a - b, where b has a's shape or a's shape with leading dim 1 (broadcast over it).
template <typename T>
Var elem_sub(Tape<T>& tape, Var a, Var b);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor);

/// Element-wise mean of equally shaped inputs.
template <typename T>
Var mean(Tape<T>& tape, std::span<const Var> xs);

template <typename T>
Var reshape(Tape<T>& tape, Var x, std::vector<int> shape);

/// Quantized max ROI pooling. `boxes` are in feature-cell coordinates; each is
/// rounded to whole cells, clipped, and split into out x out bins whose
/// boundaries are rounded fractions of the box, so bins partition the box.
/// Empty bins yield 0. Returns [R, out, out, C].
template <typename T>
Var roi_pool(Tape<T>& tape, Var features, std::span<const BBox> boxes, int out);

/// Bilinear ROI align with 2x2 samples per bin. Returns [R, out, out, C].
template <typename T>
Var roi_align(Tape<T>& tape, Var features, std::span<const BBox> boxes, int out);

/// Sum_i w_i * BCE(sigmoid(z_i), y_i) / normalizer, computed from logits.
template <typename T>
Var sigmoid_bce(Tape<T>& tape, Var logits, std::span<const T> labels, std::span<const T> weights,
                T normalizer);

/// Sum_i w_i * sum_j smoothL1(pred_ij - target_ij) / normalizer; pred, target [n, 4].
template <typename T>
Var smooth_l1(Tape<T>& tape, Var pred, const Tensor<T>& target, std::span<const T> weights,
              T normalizer, T beta = T(1));

/// Cell ranges of one ROI pooling bin layout; exposed for testing.
struct RoiBins {
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;  // covered cells [x0, x1) x [y0, y1)
  std::vector<int> xs, ys;              // out + 1 boundaries each
};
RoiBins roi_bins(const BBox& box, int feat_w, int feat_h, int out);

}  // namespace glyphspot::ops
