#pragma once

#include <filesystem>
#include <string>

#include "glyphspot/datagen.hpp"
#include "glyphspot/detector.hpp"
#include "glyphspot/training.hpp"
#include "json.hpp"

namespace glyphspot {

using json = nlohmann::json;

// Missing keys keep their defaults.
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, backbone_channels, output_stride, roi_size,
                                                anchor_scales, anchor_ratios, rpn_channels, rpn_pre_nms,
                                                rpn_proposal_count, rpn_nms_iou, head_hidden, k_shot_fusion,
                                                roi_mode, confidence_thresholds, interruption_px, line_height,
                                                support_size, nms_iou, score_floor, init_seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ComposeConfig, line_height, max_glyph_height, overlap_max,
                                                gap_max, vertical_jitter, margin, min_symbols, max_symbols,
                                                interline_strokes, interline_probability)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TransformConfig, probability, scale_min, scale_max,
                                                max_rotation_deg)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CorpusConfig, compose, transform)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EpisodeConfig, lines_per_episode, min_symbols, max_symbols,
                                                distractor_rate, transform_supports, compose, transform)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, learning_rate, momentum, grad_clip, iterations,
                                                episodes_per_batch, n_way, k_shot, rpn_pos_iou, rpn_neg_iou,
                                                head_pos_iou, head_neg_iou, cls_weight, reg_weight,
                                                samples_per_class, max_positives, smooth_l1_beta,
                                                fine_tune_lr_scale, seed, episode)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CorpusManifest, seed, config_hash, n_lines, split)

/// Everything a config file may set; every key is optional.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  CorpusConfig corpus;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, model, train, corpus)

/// Reads and validates a config file. Throws DataError on unreadable or
/// malformed files and std::invalid_argument on invalid values.
RunConfig load_run_config(const std::filesystem::path& file);

/// 16 hex digits of FNV-1a 64 over the compact dump (keys sorted).
std::string config_hash(const json& j);

}  // namespace glyphspot
