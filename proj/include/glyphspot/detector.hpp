#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "glyphspot/autodiff.hpp"
#include "glyphspot/geometry.hpp"
#include "glyphspot/image.hpp"

namespace glyphspot {

struct ModelConfig {
  std::vector<int> backbone_channels{32, 64, 128, 256};
  int output_stride = 8;
  int roi_size = 7;
  std::vector<double> anchor_scales{16, 32, 64};
  std::vector<double> anchor_ratios{0.5, 1, 2};
  int rpn_channels = 256;
  int rpn_pre_nms = 1000;
  int rpn_proposal_count = 100;
  double rpn_nms_iou = 0.7;
  int head_hidden = 512;
  std::string k_shot_fusion = "mean";
  std::string roi_mode = "pool";  // "pool" (quantized max) or "align" (bilinear)
  std::vector<double> confidence_thresholds{0.4, 0.6, 0.8};
  int interruption_px = 15;
  int line_height = 64;
  int support_size = 48;
  double nms_iou = 0.3;
  double score_floor = 0.05;
  std::uint64_t init_seed = 1;

  int channels() const { return backbone_channels.back(); }
  int pool_count() const;
  int anchors_per_cell() const { return static_cast<int>(anchor_scales.size() * anchor_ratios.size()); }
  /// Throws std::invalid_argument naming the first violated invariant.
  void validate() const;
};

/// Query features Q [H, W, C] with the stride back to pixels.
struct FeatureMap {
  Var tensor;
  int stride = 1;
};

/// Fused support features for one class: mean feature map and its channel
/// means S [1, 1, C].
struct SupportEncoding {
  Var feature_map;
  Var vector;
};

struct RpnOutput {
  Var logits;  // [N] objectness, anchor order
  Var deltas;  // [N, 4]
  std::vector<Anchor> anchors;
};

struct Proposal {
  BBox box;
  double objectness = 0;
};

struct HeadOutput {
  Var logits;  // [R, 1] similarity
  Var deltas;  // [R, 4] scaled box refinements
};

/// Head regression targets are box deltas multiplied by these weights.
inline constexpr double kHeadDeltaWeights[4] = {10.0, 10.0, 5.0, 5.0};

/// Ink image -> [H, W, 1] tensor.
template <typename T>
Tensor<T> image_tensor(const Image& img);

template <typename T>
class Detector {
 public:
  explicit Detector(ModelConfig cfg);
  /// Adopts existing parameters; names and shapes must match `cfg`.
  Detector(ModelConfig cfg, ParameterSet<T> params);

  const ModelConfig& config() const { return cfg_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  /// Names of the parameters shared by query and support passes.
  std::vector<std::string> backbone_parameter_names() const;

  FeatureMap extract_features(Tape<T>& tape, const Image& image);
  Var pool_support(Tape<T>& tape, Var support_features);
  /// K support canvases -> averaged feature map and pooled vector.
  SupportEncoding encode_supports(Tape<T>& tape, std::span<const Image> canvases);
  Var attention_map(Tape<T>& tape, Var support_vector, Var query_features);
  RpnOutput rpn(Tape<T>& tape, Var attention);
  /// Decode, clip, NMS and keep the top proposals. Not differentiable.
  std::vector<Proposal> propose_regions(const Tape<T>& tape, const RpnOutput& rpn, int image_w,
                                        int image_h) const;
  /// ROI features of proposals minus ROI features of the whole support, then FC layers.
  HeadOutput head(Tape<T>& tape, const FeatureMap& query, std::span<const BBox> proposals,
                  Var support_features);
  /// Head outputs -> scored, refined, clipped detections (one per proposal).
  std::vector<Detection> predictions(const Tape<T>& tape, const HeadOutput& out,
                                     std::span<const BBox> proposals, int class_id, int image_w,
                                     int image_h) const;

  /// Full pass for one class; per-class NMS applied, scores unchanged.
  std::vector<Detection> forward_detect(const Image& line, std::span<const Image> support_canvases,
                                        int class_id = 0);
  /// Same with query features already computed on `tape`.
  std::vector<Detection> detect_with_features(Tape<T>& tape, const FeatureMap& query, int image_w,
                                              int image_h, std::span<const Image> support_canvases,
                                              int class_id);

 private:
  void init_parameters();
  Var param(Tape<T>& tape, const std::string& name) { return tape.parameter(params_.get(name)); }
  BBox feature_box(const BBox& px, int feat_w, int feat_h) const;

  ModelConfig cfg_;
  ParameterSet<T> params_;
};

extern template class Detector<float>;
extern template class Detector<double>;

}  // namespace glyphspot
