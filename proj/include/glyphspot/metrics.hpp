#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "glyphspot/datagen.hpp"
#include "glyphspot/decoder.hpp"
#include "json.hpp"

namespace glyphspot {

/// Predicted-sequence marker for a MISSING token.
inline constexpr int kMissingSymbol = -1;

struct SerResult {
  double ser = 0;
  int S = 0, D = 0, I = 0;
  int N = 0;
};

/// Edit distance with unit costs where kMissingSymbol matches any single
/// ground-truth symbol for free. Among minimum-cost alignments the one with
/// the most substitutions is reported. Throws on an empty ground truth.
SerResult ser(std::span<const int> gt, std::span<const int> pred);
SerResult ser(std::span<const int> gt, const Transcription& pred);

/// Tokens as symbols, MISSING as kMissingSymbol.
std::vector<int> token_symbols(const Transcription& t);

/// MISSING tokens over |gt|, capped at 1.
double missing_rate(std::span<const int> gt, const Transcription& pred);

struct RecallCount {
  int matched = 0;
  int total = 0;
  double value() const { return total > 0 ? static_cast<double>(matched) / total : 1.0; }
};

/// One-to-one greedy matching by descending score against same-class GT at IoU >= thr.
RecallCount recall_count(std::span<const GroundTruth> gt, const CandidateTable& table, double iou_thr = 0.5);
double recall_at_iou(std::span<const GroundTruth> gt, const CandidateTable& table, double iou_thr = 0.5);

/// Ground-truth class sequence of a line (left to right by box x1).
std::vector<int> gt_sequence(std::span<const GroundTruth> gt);

struct EvalLine {
  std::vector<GroundTruth> gt;
  CandidateTable table;
};

struct ThresholdRow {
  double tau = 0;
  double ser = 0;
  double missing = 0;
  int S = 0, D = 0, I = 0, N = 0;
  int symbols = 0;         // SYMBOL tokens emitted
  int missing_tokens = 0;
  double recall = 0;
};

struct EvalReport {
  std::vector<ThresholdRow> rows;
  int lines = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

inline const std::vector<double> kDefaultThresholds{0.4, 0.6, 0.8};

/// Decodes every line once per threshold; SER and missing are micro-averaged
/// over all ground-truth symbols.
EvalReport sweep(std::span<const EvalLine> lines, std::span<const double> thresholds = kDefaultThresholds,
                 int tau_int = 15);

void write_report_csv(const EvalReport& r, const std::filesystem::path& file);
nlohmann::json report_to_json(const EvalReport& r);

}  // namespace glyphspot
