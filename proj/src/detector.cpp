#include "glyphspot/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "glyphspot/ops.hpp"

namespace glyphspot {

int ModelConfig::pool_count() const {
  int pools = 0, s = output_stride;
  while (s > 1) {
    s /= 2;
    ++pools;
  }
  return pools;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("ModelConfig: " + m); };
  if (backbone_channels.empty()) fail("backbone_channels is empty");
  for (int c : backbone_channels)
    if (c < 1) fail("backbone channel counts must be positive");
  if (output_stride < 1 || (output_stride & (output_stride - 1)) != 0) fail("output_stride must be a power of two");
  if (pool_count() > static_cast<int>(backbone_channels.size())) fail("output_stride needs more backbone blocks");
  if (roi_size != 7) fail("roi_size must be 7");
  if (anchor_scales.empty() || anchor_ratios.empty()) fail("anchor scales and ratios must be non-empty");
  if (rpn_channels < 1 || head_hidden < 1) fail("layer widths must be positive");
  if (rpn_proposal_count < 1 || rpn_pre_nms < rpn_proposal_count) fail("bad proposal counts");
  if (k_shot_fusion != "mean") fail("k_shot_fusion must be 'mean'");
  if (roi_mode != "pool" && roi_mode != "align") fail("roi_mode must be 'pool' or 'align'");
  for (double t : confidence_thresholds)
    if (!(t > 0 && t < 1)) fail("confidence thresholds must lie in (0, 1)");
  if (interruption_px <= 0) fail("interruption_px must be > 0");
  if (line_height < output_stride || support_size < output_stride) fail("inputs smaller than one stride cell");
}

template <typename T>
Tensor<T> image_tensor(const Image& img) {
  std::vector<T> v(img.pixels.begin(), img.pixels.end());
  return Tensor<T>({img.height, img.width, 1}, std::move(v));
}

template <typename T>
Detector<T>::Detector(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  init_parameters();
}

template <typename T>
Detector<T>::Detector(ModelConfig cfg, ParameterSet<T> params) : cfg_(std::move(cfg)) {
  cfg_.validate();
  init_parameters();  // reference layout
  if (params.size() != params_.size())
    throw std::invalid_argument("Detector: checkpoint has " + std::to_string(params.size()) +
                                " parameters, config expects " + std::to_string(params_.size()));
  for (auto& p : params_) {
    if (!params.contains(p.name)) throw std::invalid_argument("Detector: missing parameter '" + p.name + "'");
    const auto& src = params.get(p.name);
    if (src.value.shape() != p.value.shape())
      throw_shape_error("Detector(" + p.name + ")", p.value.shape(), src.value.shape());
    p.value = src.value;
  }
}

template <typename T>
void Detector<T>::init_parameters() {
  params_ = ParameterSet<T>();
  std::mt19937_64 rng(cfg_.init_seed);
  auto he_uniform = [&](std::vector<int> shape, int fan_in) {
    Tensor<T> t(std::move(shape));
    const double bound = std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.values()) v = static_cast<T>(dist(rng));
    return t;
  };
  auto add_conv = [&](const std::string& name, int k, int cin, int cout) {
    params_.add(name + ".weight", he_uniform({k, k, cin, cout}, k * k * cin));
    params_.add(name + ".bias", Tensor<T>({cout}));
  };
  auto add_fc = [&](const std::string& name, int in, int out) {
    params_.add(name + ".weight", he_uniform({in, out}, in));
    params_.add(name + ".bias", Tensor<T>({out}));
  };

  int cin = 1;
  for (std::size_t b = 0; b < cfg_.backbone_channels.size(); ++b) {
    const int cout = cfg_.backbone_channels[b];
    const std::string base = "backbone.block" + std::to_string(b + 1);
    add_conv(base + ".conv1", 3, cin, cout);
    add_conv(base + ".conv2", 3, cout, cout);
    cin = cout;
  }
  const int c = cfg_.channels();
  const int a = cfg_.anchors_per_cell();
  add_conv("rpn.conv", 3, c, cfg_.rpn_channels);
  add_conv("rpn.cls", 1, cfg_.rpn_channels, a);
  add_conv("rpn.reg", 1, cfg_.rpn_channels, 4 * a);
  add_fc("head.fc1", cfg_.roi_size * cfg_.roi_size * c, cfg_.head_hidden);
  add_fc("head.fc2", cfg_.head_hidden, cfg_.head_hidden);
  add_fc("head.cls", cfg_.head_hidden, 1);
  add_fc("head.reg", cfg_.head_hidden, 4);
}

template <typename T>
std::vector<std::string> Detector<T>::backbone_parameter_names() const {
  std::vector<std::string> names;
  for (const auto& p : params_)
    if (p.name.rfind("backbone.", 0) == 0) names.push_back(p.name);
  return names;
}

template <typename T>
FeatureMap Detector<T>::extract_features(Tape<T>& tape, const Image& image) {
  if (image.width < cfg_.output_stride || image.height < cfg_.output_stride)
    throw std::invalid_argument("extract_features: image smaller than one stride cell (" +
                                std::to_string(image.width) + "x" + std::to_string(image.height) + ")");
  Var x = tape.constant(image_tensor<T>(image));
  const int pools = cfg_.pool_count();
  for (std::size_t b = 0; b < cfg_.backbone_channels.size(); ++b) {
    const std::string base = "backbone.block" + std::to_string(b + 1);
    x = ops::relu(tape, ops::conv2d(tape, x, param(tape, base + ".conv1.weight"),
                                    param(tape, base + ".conv1.bias"), 1, 1));
    x = ops::relu(tape, ops::conv2d(tape, x, param(tape, base + ".conv2.weight"),
                                    param(tape, base + ".conv2.bias"), 1, 1));
    if (static_cast<int>(b) < pools) x = ops::maxpool2(tape, x);
  }
  return {x, cfg_.output_stride};
}

template <typename T>
Var Detector<T>::pool_support(Tape<T>& tape, Var support_features) {
  return ops::global_avg_pool(tape, support_features);
}

template <typename T>
SupportEncoding Detector<T>::encode_supports(Tape<T>& tape, std::span<const Image> canvases) {
  if (canvases.empty()) throw std::invalid_argument("encode_supports: no support images");
  std::vector<Var> maps;
  for (const auto& c : canvases) {
    if (!maps.empty() && (c.width != canvases[0].width || c.height != canvases[0].height))
      throw std::invalid_argument("encode_supports: support canvases differ in size");
    maps.push_back(extract_features(tape, c).tensor);
  }
  Var fused = ops::mean(tape, std::span<const Var>(maps));
  return {fused, pool_support(tape, fused)};
}

template <typename T>
Var Detector<T>::attention_map(Tape<T>& tape, Var support_vector, Var query_features) {
  const auto& s = tape.value(support_vector);
  const auto& q = tape.value(query_features);
  if (s.rank() != 3 || s.dim(0) != 1 || s.dim(1) != 1 || q.rank() != 3 || s.dim(2) != q.dim(2))
    throw_shape_error("attention_map", s.shape(), q.shape());
  return ops::elem_mul(tape, query_features, support_vector);
}

template <typename T>
RpnOutput Detector<T>::rpn(Tape<T>& tape, Var attention) {
  const auto& av = tape.value(attention);
  const int fh = av.dim(0), fw = av.dim(1);
  Var h = ops::relu(tape, ops::conv2d(tape, attention, param(tape, "rpn.conv.weight"),
                                      param(tape, "rpn.conv.bias"), 1, 1));
  Var cls = ops::conv2d(tape, h, param(tape, "rpn.cls.weight"), param(tape, "rpn.cls.bias"), 1, 0);
  Var reg = ops::conv2d(tape, h, param(tape, "rpn.reg.weight"), param(tape, "rpn.reg.bias"), 1, 0);
  const int n = fh * fw * cfg_.anchors_per_cell();
  RpnOutput out;
  out.logits = ops::reshape(tape, cls, {n});
  out.deltas = ops::reshape(tape, reg, {n, 4});
  out.anchors = generate_anchors(fw, fh, cfg_.output_stride, cfg_.anchor_scales, cfg_.anchor_ratios);
  return out;
}

template <typename T>
std::vector<Proposal> Detector<T>::propose_regions(const Tape<T>& tape, const RpnOutput& rpn,
                                                   int image_w, int image_h) const {
  const auto& logits = tape.value(rpn.logits);
  const auto& deltas = tape.value(rpn.deltas);
  const double min_size = cfg_.output_stride;
  std::vector<Detection> cands;
  for (std::size_t i = 0; i < rpn.anchors.size(); ++i) {
    const BoxDelta d{deltas[4 * i], deltas[4 * i + 1], deltas[4 * i + 2], deltas[4 * i + 3]};
    const BBox b = clip_box(decode_delta(d, rpn.anchors[i]), image_w, image_h);
    if (b.width() < min_size || b.height() < min_size) continue;
    const double score = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[i])));
    cands.push_back({b, 0, score});
  }
  std::stable_sort(cands.begin(), cands.end(), detection_order);
  if (static_cast<int>(cands.size()) > cfg_.rpn_pre_nms) cands.resize(cfg_.rpn_pre_nms);
  auto kept = nms(std::move(cands), cfg_.rpn_nms_iou);
  if (static_cast<int>(kept.size()) > cfg_.rpn_proposal_count) kept.resize(cfg_.rpn_proposal_count);
  std::vector<Proposal> out;
  out.reserve(kept.size());
  for (const auto& k : kept) out.push_back({k.box, k.score});
  return out;
}

template <typename T>
BBox Detector<T>::feature_box(const BBox& px, int feat_w, int feat_h) const {
  const double s = cfg_.output_stride;
  if (cfg_.roi_mode == "align") {
    return {std::clamp(px.x1 / s, 0.0, feat_w - 1.0), std::clamp(px.y1 / s, 0.0, feat_h - 1.0),
            std::clamp(px.x2 / s, 1.0, static_cast<double>(feat_w)),
            std::clamp(px.y2 / s, 1.0, static_cast<double>(feat_h))};
  }
  // whole cells, at least one, inside the map
  const int x0 = std::clamp(static_cast<int>(std::lround(px.x1 / s)), 0, feat_w - 1);
  const int y0 = std::clamp(static_cast<int>(std::lround(px.y1 / s)), 0, feat_h - 1);
  const int x1 = std::clamp(static_cast<int>(std::lround(px.x2 / s)), x0 + 1, feat_w);
  const int y1 = std::clamp(static_cast<int>(std::lround(px.y2 / s)), y0 + 1, feat_h);
  return {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1), static_cast<double>(y1)};
}

template <typename T>
HeadOutput Detector<T>::head(Tape<T>& tape, const FeatureMap& query, std::span<const BBox> proposals,
                             Var support_features) {
  const auto& qv = tape.value(query.tensor);
  const auto& sv = tape.value(support_features);
  const int qh = qv.dim(0), qw = qv.dim(1), c = qv.dim(2);
  if (sv.rank() != 3 || sv.dim(2) != c) throw_shape_error("head", qv.shape(), sv.shape());
  std::vector<BBox> fboxes;
  fboxes.reserve(proposals.size());
  for (const auto& p : proposals) fboxes.push_back(feature_box(p, qw, qh));
  const BBox whole{0, 0, static_cast<double>(sv.dim(1)), static_cast<double>(sv.dim(0))};
  const int r = static_cast<int>(proposals.size());
  const int out = cfg_.roi_size;
  const bool align = cfg_.roi_mode == "align";
  Var q_roi = align ? ops::roi_align(tape, query.tensor, std::span<const BBox>(fboxes), out)
                    : ops::roi_pool(tape, query.tensor, std::span<const BBox>(fboxes), out);
  Var s_roi = align ? ops::roi_align(tape, support_features, std::span<const BBox>(&whole, 1), out)
                    : ops::roi_pool(tape, support_features, std::span<const BBox>(&whole, 1), out);
  Var combined = ops::elem_sub(tape, q_roi, s_roi);
  Var flat = ops::reshape(tape, combined, {r, out * out * c});
  Var h1 = ops::relu(tape, ops::fc(tape, flat, param(tape, "head.fc1.weight"), param(tape, "head.fc1.bias")));
  Var h2 = ops::relu(tape, ops::fc(tape, h1, param(tape, "head.fc2.weight"), param(tape, "head.fc2.bias")));
  HeadOutput res;
  res.logits = ops::fc(tape, h2, param(tape, "head.cls.weight"), param(tape, "head.cls.bias"));
  res.deltas = ops::fc(tape, h2, param(tape, "head.reg.weight"), param(tape, "head.reg.bias"));
  return res;
}

template <typename T>
std::vector<Detection> Detector<T>::predictions(const Tape<T>& tape, const HeadOutput& out,
                                                std::span<const BBox> proposals, int class_id,
                                                int image_w, int image_h) const {
  const auto& logits = tape.value(out.logits);
  const auto& deltas = tape.value(out.deltas);
  std::vector<Detection> dets;
  dets.reserve(proposals.size());
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const BoxDelta d{deltas[4 * i] / kHeadDeltaWeights[0], deltas[4 * i + 1] / kHeadDeltaWeights[1],
                     deltas[4 * i + 2] / kHeadDeltaWeights[2], deltas[4 * i + 3] / kHeadDeltaWeights[3]};
    BBox b = clip_box(decode_delta(d, anchor_from_box(proposals[i])), image_w, image_h);
    const double score = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[i])));
    dets.push_back({b, class_id, score});
  }
  return dets;
}

template <typename T>
std::vector<Detection> Detector<T>::detect_with_features(Tape<T>& tape, const FeatureMap& query,
                                                         int image_w, int image_h,
                                                         std::span<const Image> support_canvases,
                                                         int class_id) {
  const SupportEncoding sup = encode_supports(tape, support_canvases);
  Var att = attention_map(tape, sup.vector, query.tensor);
  const RpnOutput r = rpn(tape, att);
  const auto props = propose_regions(tape, r, image_w, image_h);
  if (props.empty()) return {};
  std::vector<BBox> boxes;
  for (const auto& p : props) boxes.push_back(p.box);
  const HeadOutput h = head(tape, query, boxes, sup.feature_map);
  auto dets = predictions(tape, h, boxes, class_id, image_w, image_h);
  // refined boxes can collapse at the border
  std::erase_if(dets, [](const Detection& d) { return d.box.width() <= 0 || d.box.height() <= 0; });
  return nms(std::move(dets), cfg_.nms_iou);
}

template <typename T>
std::vector<Detection> Detector<T>::forward_detect(const Image& line, std::span<const Image> support_canvases,
                                                   int class_id) {
  Tape<T> tape(false);
  const FeatureMap q = extract_features(tape, line);
  return detect_with_features(tape, q, line.width, line.height, support_canvases, class_id);
}

template Tensor<float> image_tensor<float>(const Image&);
template Tensor<double> image_tensor<double>(const Image&);
template class Detector<float>;
template class Detector<double>;

}  // namespace glyphspot
