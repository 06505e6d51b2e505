#pragma once

#include <map>
#include <string>
#include <vector>

#include "glyphspot/inference.hpp"
#include "json.hpp"

namespace glyphspot {

enum class TokenKind { Symbol, Missing };

struct Token {
  TokenKind kind = TokenKind::Symbol;
  int class_id = -1;  // also kept for MISSING: the class of the best candidate
  double score = 0;
  int x1 = 0;  // first column
  int x2 = 0;  // last column (inclusive)
  int detection = -1;  // index into the flattened table (class order, then list order)

  bool operator==(const Token&) const = default;
};

struct Transcription {
  std::vector<Token> tokens;
  double tau = 0;
  std::string line_id;
};

/// Columns covered by a box: ceil(x1) .. floor(x2), limited to the line.
std::pair<int, int> box_columns(const BBox& box, int line_width);

/// Left-to-right sweep: every column goes to the highest-scoring detection
/// covering it (ties: x1, class, detection index). Each detection keeps its
/// widest run (leftmost on ties); runs narrower than `tau_int` columns are
/// dropped. Surviving runs become SYMBOL when score >= tau, else MISSING.
Transcription decode_line(const CandidateTable& table, double tau, int tau_int = 15);

/// Space-separated class names; MISSING renders as "?".
/// Throws std::out_of_range for an unmapped class id.
std::string transcription_to_string(const Transcription& t, const std::map<int, std::string>& names);

nlohmann::json transcription_to_json(const Transcription& t);

}  // namespace glyphspot
