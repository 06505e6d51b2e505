#include "glyphspot/inference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace glyphspot {

std::size_t CandidateTable::eligible_count() const {
  std::size_t n = 0;
  for (const auto& e : entries)
    for (const auto& d : e) n += eligible(d);
  return n;
}

std::size_t CandidateTable::size() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.size();
  return n;
}

Image normalize_line(const Image& line, int line_height, double* scale) {
  const double s = static_cast<double>(line_height) / line.height;
  if (scale) *scale = s;
  if (line.height == line_height) return line;
  const int w = std::max(1, static_cast<int>(std::lround(line.width * s)));
  return resize_bilinear(line, w, line_height);
}

CandidateTable detect_alphabet(Detector<float>& model, const Image& line,
                               std::span<const std::vector<Image>> supports, std::span<const int> classes) {
  if (supports.empty()) throw std::invalid_argument("detect_alphabet: no support classes");
  if (supports.size() != classes.size())
    throw std::invalid_argument("detect_alphabet: supports and classes differ in length");
  for (const auto& s : supports)
    if (s.empty()) throw std::invalid_argument("detect_alphabet: a class has no support image");

  double scale = 1.0;
  const Image query = normalize_line(line, model.config().line_height, &scale);
  CandidateTable table;
  table.line_width = line.width;
  table.classes.assign(classes.begin(), classes.end());
  Tape<float> tape(false);
  const FeatureMap q = model.extract_features(tape, query);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    auto dets = model.detect_with_features(tape, q, query.width, query.height,
                                           std::span<const Image>(supports[c]), classes[c]);
    std::vector<Detection> kept;
    for (auto d : dets) {
      if (d.score < model.config().score_floor) continue;
      if (scale != 1.0) {
        d.box = clip_box({d.box.x1 / scale, d.box.y1 / scale, d.box.x2 / scale, d.box.y2 / scale}, line.width,
                         line.height);
      }
      kept.push_back(d);
    }
    std::stable_sort(kept.begin(), kept.end(),
                     [](const Detection& a, const Detection& b) { return a.box.x1 < b.box.x1; });
    table.entries.push_back(std::move(kept));
  }
  return table;
}

CandidateTable filter_confidence(const CandidateTable& table, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("filter_confidence: tau must lie in [0, 1]");
  CandidateTable out = table;
  out.tau = tau;
  return out;
}

nlohmann::json table_to_json(const CandidateTable& table) {
  using nlohmann::json;
  json classes = json::array();
  for (std::size_t c = 0; c < table.classes.size(); ++c) {
    json dets = json::array();
    for (const auto& d : table.entries[c])
      dets.push_back({{"x1", d.box.x1}, {"y1", d.box.y1}, {"x2", d.box.x2}, {"y2", d.box.y2},
                      {"score", d.score}, {"eligible", table.eligible(d)}});
    json entry{{"class", table.classes[c]}, {"detections", dets}};
    if (c < table.class_names.size()) entry["name"] = table.class_names[c];
    classes.push_back(entry);
  }
  return {{"line_width", table.line_width}, {"tau", table.tau}, {"classes", classes}};
}

CandidateTable table_from_json(const nlohmann::json& j) {
  CandidateTable t;
  t.line_width = j.at("line_width").get<int>();
  t.tau = j.value("tau", 0.0);
  for (const auto& entry : j.at("classes")) {
    const int cls = entry.at("class").get<int>();
    t.classes.push_back(cls);
    if (entry.contains("name")) t.class_names.push_back(entry["name"].get<std::string>());
    std::vector<Detection> dets;
    for (const auto& d : entry.at("detections"))
      dets.push_back({{d.at("x1").get<double>(), d.at("y1").get<double>(), d.at("x2").get<double>(),
                       d.at("y2").get<double>()},
                      cls,
                      d.at("score").get<double>()});
    t.entries.push_back(std::move(dets));
  }
  if (!t.class_names.empty() && t.class_names.size() != t.classes.size()) t.class_names.clear();
  return t;
}

}  // namespace glyphspot
