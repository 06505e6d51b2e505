#pragma once

#include <span>
#include <string>
#include <vector>

#include "glyphspot/detector.hpp"
#include "json.hpp"

namespace glyphspot {

/// Per-class candidates for one line. Detections below `tau` stay in the
/// table (the decoder needs them) but are not eligible for emission.
struct CandidateTable {
  int line_width = 0;
  std::vector<int> classes;                     // input order
  std::vector<std::string> class_names;         // optional, parallel to classes
  std::vector<std::vector<Detection>> entries;  // per class, sorted by x1
  double tau = 0.0;

  bool eligible(const Detection& d) const { return d.score >= tau; }
  std::size_t eligible_count() const;
  std::size_t size() const;
};

/// Query lines of another height are rescaled to the model's line height
/// and the boxes mapped back.
Image normalize_line(const Image& line, int line_height, double* scale = nullptr);

/// Runs the detector once per class (the query backbone is shared) and keeps
/// detections scoring at least the model's score floor.
/// `supports[c]` holds the K support canvases of `classes[c]`.
CandidateTable detect_alphabet(Detector<float>& model, const Image& line,
                               std::span<const std::vector<Image>> supports, std::span<const int> classes);

/// Marks detections with score < tau as ineligible. Requires tau in [0, 1].
CandidateTable filter_confidence(const CandidateTable& table, double tau);

nlohmann::json table_to_json(const CandidateTable& table);
CandidateTable table_from_json(const nlohmann::json& j);

}  // namespace glyphspot
