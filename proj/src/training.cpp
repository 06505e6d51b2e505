#include "glyphspot/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "glyphspot/ops.hpp"
#include "glyphspot/preprocess.hpp"

namespace glyphspot {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("TrainConfig: " + m); };
  if (!(learning_rate > 0)) fail("learning_rate must be > 0");
  if (momentum < 0 || momentum >= 1) fail("momentum must lie in [0, 1)");
  if (grad_clip < 0) fail("grad_clip must be >= 0");
  if (iterations < 0) fail("iterations must be >= 0");
  if (episodes_per_batch < 1) fail("episodes_per_batch must be >= 1");
  if (n_way < 1 || k_shot < 1) fail("n_way and k_shot must be >= 1");
  auto check_pair = [&](double pos, double neg, const char* which) {
    if (!(neg > 0 && neg <= pos && pos <= 1)) fail(std::string(which) + " thresholds need 0 < neg <= pos <= 1");
  };
  check_pair(rpn_pos_iou, rpn_neg_iou, "rpn");
  check_pair(head_pos_iou, head_neg_iou, "head");
  if (cls_weight < 0 || reg_weight < 0) fail("loss weights must be >= 0");
  if (samples_per_class < 1 || max_positives < 0) fail("bad sampling sizes");
  if (!(smooth_l1_beta > 0)) fail("smooth_l1_beta must be > 0");
  if (!(fine_tune_lr_scale > 0)) fail("fine_tune_lr_scale must be > 0");
}

TargetAssignment assign_targets(std::span<const BBox> boxes, std::span<const BBox> gt, double pos_thr,
                                double neg_thr) {
  TargetAssignment a;
  const std::size_t n = boxes.size();
  a.labels.assign(n, kNegative);
  a.targets.assign(n, BoxDelta{});
  a.matched_gt.assign(n, -1);
  if (gt.empty()) return a;

  std::vector<double> best_iou(n, 0.0);
  std::vector<double> gt_best(gt.size(), 0.0);
  std::vector<int> gt_best_box(gt.size(), -1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double v = iou(boxes[i], gt[g]);
      if (v > best_iou[i]) {
        best_iou[i] = v;
        a.matched_gt[i] = static_cast<int>(g);
      }
      if (v > gt_best[g]) {
        gt_best[g] = v;
        gt_best_box[g] = static_cast<int>(i);
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (best_iou[i] >= pos_thr) a.labels[i] = kPositive;
    else if (best_iou[i] > neg_thr) a.labels[i] = kIgnore;
  }
  for (std::size_t g = 0; g < gt.size(); ++g) {
    const int i = gt_best_box[g];
    if (i < 0) continue;
    a.labels[i] = kPositive;
    a.matched_gt[i] = static_cast<int>(g);
  }
  for (std::size_t i = 0; i < n; ++i)
    if (a.labels[i] == kPositive && boxes[i].width() > 0 && boxes[i].height() > 0)
      a.targets[i] = encode_delta(gt[static_cast<std::size_t>(a.matched_gt[i])], anchor_from_box(boxes[i]));
  return a;
}

void subsample_labels(std::vector<int>& labels, int max_samples, int max_pos, Rng& rng) {
  std::vector<int> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kPositive) pos.push_back(static_cast<int>(i));
    else if (labels[i] == kNegative) neg.push_back(static_cast<int>(i));
  }
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  std::size_t n_pos = std::min<std::size_t>(pos.size(), static_cast<std::size_t>(std::max(0, max_pos)));
  n_pos = std::min<std::size_t>(n_pos, static_cast<std::size_t>(max_samples) / 4);
  n_pos = std::min(n_pos, neg.size() / 3);
  const std::size_t n_neg = std::min(neg.size(), static_cast<std::size_t>(max_samples) - n_pos);
  for (std::size_t i = n_pos; i < pos.size(); ++i) labels[pos[i]] = kIgnore;
  for (std::size_t i = n_neg; i < neg.size(); ++i) labels[neg[i]] = kIgnore;
}

namespace {

double smooth_l1_value(double d, double beta) {
  d = std::abs(d);
  return d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
}

}  // namespace

std::optional<LossBreakdown> detection_loss(std::span<const double> scores, std::span<const int> labels,
                                            std::span<const BoxDelta> pred, std::span<const BoxDelta> target,
                                            double cls_weight, double reg_weight, double beta) {
  if (scores.size() != labels.size() || pred.size() != labels.size() || target.size() != labels.size())
    throw std::invalid_argument("detection_loss: input lengths differ");
  constexpr double kClamp = 1e-7;
  LossBreakdown out;
  double bce = 0, reg = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kIgnore) continue;
    const double p = std::clamp(scores[i], kClamp, 1.0 - kClamp);
    ++out.sampled;
    if (labels[i] == kPositive) {
      bce -= std::log(p);
      ++out.positives;
      reg += smooth_l1_value(pred[i].tx - target[i].tx, beta) + smooth_l1_value(pred[i].ty - target[i].ty, beta) +
             smooth_l1_value(pred[i].tw - target[i].tw, beta) + smooth_l1_value(pred[i].th - target[i].th, beta);
    } else {
      bce -= std::log(1.0 - p);
    }
  }
  if (out.sampled == 0) return std::nullopt;
  out.cls = cls_weight * bce / out.sampled;
  out.reg = out.positives > 0 ? reg_weight * reg / out.positives : 0.0;
  out.total = out.cls + out.reg;
  return out;
}

namespace {

template <typename T>
struct TermVars {
  Var cls, reg;
};

// BCE over non-ignored entries and smooth-L1 over positives of one stage.
template <typename T>
TermVars<T> stage_loss(Tape<T>& tape, Var logits, Var deltas, const std::vector<int>& labels,
                       const std::vector<BoxDelta>& targets, const double* delta_weights,
                       const TrainConfig& cfg, LossBreakdown& info) {
  const std::size_t n = labels.size();
  std::vector<T> lab(n, T(0)), w(n, T(0)), pw(n, T(0));
  Tensor<T> tgt({static_cast<int>(n), 4});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] == kIgnore) continue;
    w[i] = T(1);
    ++info.sampled;
    if (labels[i] == kPositive) {
      lab[i] = T(1);
      pw[i] = T(1);
      ++info.positives;
      const double d[4] = {targets[i].tx, targets[i].ty, targets[i].tw, targets[i].th};
      for (int j = 0; j < 4; ++j) tgt[4 * i + j] = static_cast<T>(d[j] * (delta_weights ? delta_weights[j] : 1.0));
    }
  }
  TermVars<T> out;
  if (info.sampled == 0) return out;
  out.cls = ops::sigmoid_bce(tape, logits, std::span<const T>(lab), std::span<const T>(w),
                             static_cast<T>(info.sampled));
  info.cls = cfg.cls_weight * static_cast<double>(tape.value(out.cls)[0]);
  if (info.positives > 0) {
    out.reg = ops::smooth_l1(tape, deltas, tgt, std::span<const T>(pw), static_cast<T>(info.positives),
                             static_cast<T>(cfg.smooth_l1_beta));
    info.reg = cfg.reg_weight * static_cast<double>(tape.value(out.reg)[0]);
  }
  info.total = info.cls + info.reg;
  return out;
}

template <typename T>
Var weighted_sum(Tape<T>& tape, std::initializer_list<std::pair<Var, double>> terms) {
  Var acc;
  for (const auto& [v, w] : terms) {
    if (!v.valid() || w == 0) continue;
    Var t = w == 1 ? v : ops::scale(tape, v, static_cast<T>(w));
    acc = acc.valid() ? ops::add(tape, acc, t) : t;
  }
  return acc;
}

}  // namespace

template <typename T>
PairLoss pair_loss(Detector<T>& model, Tape<T>& tape, const FeatureMap& query, int image_w, int image_h,
                   std::span<const Image> support_canvases, std::span<const BBox> gt, const TrainConfig& cfg,
                   Rng& rng, const std::vector<BBox>* fixed_proposals) {
  PairLoss out;
  const SupportEncoding sup = model.encode_supports(tape, support_canvases);
  Var att = model.attention_map(tape, sup.vector, query.tensor);
  const RpnOutput rpn = model.rpn(tape, att);

  std::vector<BBox> anchor_boxes;
  anchor_boxes.reserve(rpn.anchors.size());
  for (const auto& a : rpn.anchors) anchor_boxes.push_back(a.box());
  auto rpn_t = assign_targets(anchor_boxes, gt, cfg.rpn_pos_iou, cfg.rpn_neg_iou);
  subsample_labels(rpn_t.labels, cfg.samples_per_class, cfg.max_positives, rng);
  const auto rpn_terms =
      stage_loss(tape, rpn.logits, rpn.deltas, rpn_t.labels, rpn_t.targets, nullptr, cfg, out.rpn);

  std::vector<BBox> props;
  if (fixed_proposals) {
    props = *fixed_proposals;
  } else {
    for (const auto& p : model.propose_regions(tape, rpn, image_w, image_h)) props.push_back(p.box);
    props.insert(props.end(), gt.begin(), gt.end());
  }
  auto head_t = assign_targets(props, gt, cfg.head_pos_iou, cfg.head_neg_iou);
  subsample_labels(head_t.labels, cfg.samples_per_class, cfg.max_positives, rng);
  std::vector<BBox> chosen;
  std::vector<int> labels;
  std::vector<BoxDelta> targets;
  for (std::size_t i = 0; i < props.size(); ++i) {
    if (head_t.labels[i] == kIgnore) continue;
    chosen.push_back(props[i]);
    labels.push_back(head_t.labels[i]);
    targets.push_back(head_t.targets[i]);
  }
  TermVars<T> head_terms;
  if (!chosen.empty()) {
    const HeadOutput h = model.head(tape, query, chosen, sup.feature_map);
    head_terms = stage_loss(tape, h.logits, h.deltas, labels, targets, kHeadDeltaWeights, cfg, out.head);
  }
  out.total = weighted_sum(tape, {{rpn_terms.cls, cfg.cls_weight},
                                  {rpn_terms.reg, cfg.reg_weight},
                                  {head_terms.cls, cfg.cls_weight},
                                  {head_terms.reg, cfg.reg_weight}});
  return out;
}

template PairLoss pair_loss<float>(Detector<float>&, Tape<float>&, const FeatureMap&, int, int,
                                   std::span<const Image>, std::span<const BBox>, const TrainConfig&, Rng&,
                                   const std::vector<BBox>*);
template PairLoss pair_loss<double>(Detector<double>&, Tape<double>&, const FeatureMap&, int, int,
                                    std::span<const Image>, std::span<const BBox>, const TrainConfig&, Rng&,
                                    const std::vector<BBox>*);

void write_loss_trace(std::span<const LossRecord> trace, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write '" + file.string() + "'");
  out << "iteration,total,cls,reg\n";
  char buf[128];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", r.iteration, r.total, r.cls, r.reg);
    out << buf;
  }
}

template <typename T>
double SgdMomentum<T>::step(ParameterSet<T>& params) {
  if (velocity_.size() != params.size()) {
    velocity_.clear();
    for (const auto& p : params) velocity_.emplace_back(p.value.size(), T(0));
  }
  double sq = 0;
  for (const auto& p : params)
    for (T g : p.grad.values()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  const double s = clip_ > 0 && norm > clip_ ? clip_ / norm : 1.0;
  std::size_t k = 0;
  for (auto& p : params) {
    auto& v = velocity_[k++];
    auto val = p.value.values();
    const auto& g = p.grad.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = static_cast<T>(momentum_ * v[i] + s * g[i]);
      val[i] -= static_cast<T>(lr_ * v[i]);
    }
  }
  return norm;
}

template class SgdMomentum<float>;
template class SgdMomentum<double>;

namespace {

struct LineAccum {
  double total = 0, cls = 0, reg = 0;
  int pairs = 0;
};

// Forward all support classes of one query line, then backpropagate the sum.
void train_line(Detector<float>& model, const LineSample& line,
                const std::vector<std::vector<Image>>& canvases, const std::vector<int>& classes,
                const TrainConfig& cfg, Rng& rng, LineAccum& acc) {
  Tape<float> tape;
  const FeatureMap q = model.extract_features(tape, line.image);
  Var sum;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<BBox> gt;
    for (const auto& g : line.gt)
      if (g.class_id == classes[c]) gt.push_back(g.box);
    const PairLoss pl = pair_loss(model, tape, q, line.image.width, line.image.height,
                                  std::span<const Image>(canvases[c]), gt, cfg, rng);
    if (!pl.has_signal()) continue;
    const double total = pl.rpn.total + pl.head.total;
    if (!std::isfinite(total))
      throw NumericError("non-finite loss (rpn cls " + std::to_string(pl.rpn.cls) + ", rpn reg " +
                         std::to_string(pl.rpn.reg) + ", head cls " + std::to_string(pl.head.cls) +
                         ", head reg " + std::to_string(pl.head.reg) + ")");
    acc.total += total;
    acc.cls += pl.rpn.cls + pl.head.cls;
    acc.reg += pl.rpn.reg + pl.head.reg;
    ++acc.pairs;
    sum = sum.valid() ? ops::add(tape, sum, pl.total) : pl.total;
  }
  if (sum.valid()) tape.backward(sum);
}

LossRecord finish_iteration(int it, const LineAccum& acc) {
  LossRecord r;
  r.iteration = it;
  if (acc.pairs > 0) {
    r.total = acc.total / acc.pairs;
    r.cls = acc.cls / acc.pairs;
    r.reg = acc.reg / acc.pairs;
  }
  return r;
}

}  // namespace

std::vector<LossRecord> train(Detector<float>& model, const Atlas& atlas, const TrainConfig& cfg,
                              const ProgressFn& progress) {
  cfg.validate();
  const auto train_ids = atlas.class_ids(Split::Train);
  if (train_ids.empty()) throw DataError("train split is empty");
  if (cfg.episode.compose.line_height != model.config().line_height)
    throw std::invalid_argument("train: episode line height differs from the model's line height");
  const int n_way = std::min<int>(cfg.n_way, static_cast<int>(train_ids.size()));
  Rng rng(cfg.seed);
  SgdMomentum<float> opt(cfg.learning_rate, cfg.momentum, cfg.grad_clip);
  std::vector<LossRecord> trace;
  for (int it = 0; it < cfg.iterations; ++it) {
    model.parameters().zero_grad();
    LineAccum acc;
    for (int e = 0; e < cfg.episodes_per_batch; ++e) {
      const Episode ep = sample_episode(atlas, Split::Train, n_way, cfg.k_shot, rng, cfg.episode);
      std::vector<std::vector<Image>> canvases(ep.supports.size());
      for (std::size_t c = 0; c < ep.supports.size(); ++c)
        for (const auto& g : ep.supports[c]) canvases[c].push_back(support_canvas(g.image, model.config().support_size));
      for (const auto& line : ep.queries) train_line(model, line, canvases, ep.classes, cfg, rng, acc);
    }
    if (acc.pairs > 0) opt.step(model.parameters());
    trace.push_back(finish_iteration(it, acc));
    if (progress) progress(trace.back());
  }
  return trace;
}

FineTuneReport fine_tune(Detector<float>& model, std::span<const LineSample> lines, const TrainConfig& cfg,
                         std::span<const int> classes, const ProgressFn& progress) {
  cfg.validate();
  FineTuneReport report;
  if (lines.empty()) return report;

  // instance index: class -> (line, box)
  std::map<int, std::vector<std::pair<int, BBox>>> instances;
  for (std::size_t l = 0; l < lines.size(); ++l)
    for (const auto& g : lines[l].gt) instances[g.class_id].push_back({static_cast<int>(l), g.box});
  if (classes.empty()) {
    for (const auto& [c, v] : instances) report.classes.push_back(c);
  } else {
    for (int c : std::set<int>(classes.begin(), classes.end())) {
      if (instances.count(c)) report.classes.push_back(c);
      else report.excluded.push_back(c);
    }
  }
  if (report.classes.empty()) return report;

  const int support_size = model.config().support_size;
  std::map<int, std::vector<Image>> crops;  // parallel to instances[c]
  for (int c : report.classes)
    for (const auto& [l, box] : instances[c])
      crops[c].push_back(support_canvas(crop_support(lines[l].image, box).image, support_size));

  TrainConfig scaled = cfg;
  scaled.learning_rate = cfg.learning_rate * cfg.fine_tune_lr_scale;
  Rng rng(cfg.seed);
  SgdMomentum<float> opt(scaled.learning_rate, cfg.momentum, cfg.grad_clip);
  const int n_way = std::min<int>(cfg.n_way, static_cast<int>(report.classes.size()));
  for (int it = 0; it < cfg.iterations; ++it) {
    model.parameters().zero_grad();
    LineAccum acc;
    for (int e = 0; e < cfg.episodes_per_batch; ++e) {
      const int q = std::uniform_int_distribution<int>(0, static_cast<int>(lines.size()) - 1)(rng);
      const LineSample& line = lines[q];
      // classes present in the query first, then the rest
      std::vector<int> present, absent;
      for (int c : report.classes) {
        const bool here = std::any_of(line.gt.begin(), line.gt.end(), [c](const GroundTruth& g) { return g.class_id == c; });
        (here ? present : absent).push_back(c);
      }
      std::shuffle(present.begin(), present.end(), rng);
      std::shuffle(absent.begin(), absent.end(), rng);
      std::vector<int> chosen = present;
      chosen.insert(chosen.end(), absent.begin(), absent.end());
      chosen.resize(static_cast<std::size_t>(n_way));

      std::vector<std::vector<Image>> canvases;
      for (int c : chosen) {
        const auto& inst = instances[c];
        std::vector<int> pool;
        for (std::size_t i = 0; i < inst.size(); ++i)
          if (inst[i].first != q) pool.push_back(static_cast<int>(i));
        if (pool.empty())
          for (std::size_t i = 0; i < inst.size(); ++i) pool.push_back(static_cast<int>(i));
        std::vector<Image> shots;
        for (int k = 0; k < cfg.k_shot; ++k) {
          const int pick = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
          shots.push_back(crops[c][static_cast<std::size_t>(pick)]);
        }
        canvases.push_back(std::move(shots));
      }
      train_line(model, line, canvases, chosen, scaled, rng, acc);
    }
    if (acc.pairs > 0) opt.step(model.parameters());
    report.trace.push_back(finish_iteration(it, acc));
    if (progress) progress(report.trace.back());
  }
  return report;
}

}  // namespace glyphspot
