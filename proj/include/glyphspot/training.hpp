#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "glyphspot/datagen.hpp"
#include "glyphspot/detector.hpp"

namespace glyphspot {

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double grad_clip = 10.0;  // global L2 norm; 0 disables
  int iterations = 1000;
  int episodes_per_batch = 1;
  int n_way = 5;
  int k_shot = 1;
  double rpn_pos_iou = 0.7;
  double rpn_neg_iou = 0.3;
  double head_pos_iou = 0.5;
  double head_neg_iou = 0.5;
  double cls_weight = 1.0;
  double reg_weight = 1.0;
  int samples_per_class = 64;  // per line and support class
  int max_positives = 16;
  double smooth_l1_beta = 1.0;
  double fine_tune_lr_scale = 0.1;
  std::uint64_t seed = 1;
  EpisodeConfig episode;

  void validate() const;
};

enum : int { kIgnore = -1, kNegative = 0, kPositive = 1 };

struct TargetAssignment {
  std::vector<int> labels;
  std::vector<BoxDelta> targets;  // meaningful where label == 1
  std::vector<int> matched_gt;    // -1 when no GT overlaps
};

/// IoU >= pos_thr -> 1, IoU <= neg_thr -> 0, otherwise ignored; each GT's
/// best-overlapping box (lowest index on ties) is forced positive.
TargetAssignment assign_targets(std::span<const BBox> boxes, std::span<const BBox> gt, double pos_thr,
                                double neg_thr);

/// Keeps at most `max_samples` labels with at most `max_pos` positives and at
/// least three negatives per positive; the rest become ignored.
void subsample_labels(std::vector<int>& labels, int max_samples, int max_pos, Rng& rng);

struct LossBreakdown {
  double total = 0;
  double cls = 0;
  double reg = 0;
  int sampled = 0;
  int positives = 0;
};

/// Loss on plain values: BCE on probabilities clamped to [1e-7, 1 - 1e-7],
/// averaged over non-ignored samples, plus smooth-L1 over positives (summed
/// over the four coordinates, averaged over positives). Returns nullopt when
/// every label is ignored.
std::optional<LossBreakdown> detection_loss(std::span<const double> scores, std::span<const int> labels,
                                            std::span<const BoxDelta> pred, std::span<const BoxDelta> target,
                                            double cls_weight = 1.0, double reg_weight = 1.0, double beta = 1.0);

/// One (line, support class) training example.
struct PairLoss {
  Var total;  // invalid id when nothing was sampled
  LossBreakdown rpn;
  LossBreakdown head;
  bool has_signal() const { return total.id >= 0; }
};

/// Builds the RPN and head losses for one support class on a query whose
/// features are already on the tape. Head samples come from the RPN
/// proposals plus the ground-truth boxes, or from `fixed_proposals` alone.
template <typename T>
PairLoss pair_loss(Detector<T>& model, Tape<T>& tape, const FeatureMap& query, int image_w, int image_h,
                   std::span<const Image> support_canvases, std::span<const BBox> gt, const TrainConfig& cfg,
                   Rng& rng, const std::vector<BBox>* fixed_proposals = nullptr);

struct LossRecord {
  int iteration = 0;
  double total = 0;
  double cls = 0;
  double reg = 0;
};

void write_loss_trace(std::span<const LossRecord> trace, const std::filesystem::path& file);

/// SGD with momentum over a parameter set.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum, double clip) : lr_(lr), momentum_(momentum), clip_(clip) {}
  /// Applies the accumulated gradients and returns their L2 norm before clipping.
  double step(ParameterSet<T>& params);

 private:
  double lr_, momentum_, clip_;
  std::vector<std::vector<T>> velocity_;
};

using ProgressFn = std::function<void(const LossRecord&)>;

/// Episodic training on the train split of `atlas`. Each iteration samples
/// `episodes_per_batch` episodes; every (query line, class) pair contributes
/// its loss and one update follows. Throws NumericError on a non-finite loss.
std::vector<LossRecord> train(Detector<float>& model, const Atlas& atlas, const TrainConfig& cfg,
                              const ProgressFn& progress = {});

struct FineTuneReport {
  std::vector<LossRecord> trace;
  std::vector<int> classes;   // classes used
  std::vector<int> excluded;  // requested classes without any instance
};

/// Retrains on labelled lines at learning_rate * fine_tune_lr_scale. Supports
/// are crops of the lines' own ground truth, taken from other lines when possible.
FineTuneReport fine_tune(Detector<float>& model, std::span<const LineSample> lines, const TrainConfig& cfg,
                         std::span<const int> classes = {}, const ProgressFn& progress = {});

}  // namespace glyphspot
