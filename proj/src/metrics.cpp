#include "glyphspot/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace glyphspot {

namespace {

// Alignment cost ordered by edits first, then by fewer substitutions lost.
struct Cell {
  int cost = 0;
  int S = 0, D = 0, I = 0;
  bool better_than(const Cell& o) const { return cost != o.cost ? cost < o.cost : S > o.S; }
};

}  // namespace

SerResult ser(std::span<const int> gt, std::span<const int> pred) {
  if (gt.empty()) throw std::invalid_argument("ser: empty ground truth");
  const std::size_t n = gt.size(), m = pred.size();
  std::vector<Cell> prev(m + 1), cur(m + 1);
  for (std::size_t j = 1; j <= m; ++j) prev[j] = {static_cast<int>(j), 0, 0, static_cast<int>(j)};
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = {static_cast<int>(i), 0, static_cast<int>(i), 0};
    for (std::size_t j = 1; j <= m; ++j) {
      const bool same = pred[j - 1] == kMissingSymbol || pred[j - 1] == gt[i - 1];
      Cell diag = prev[j - 1];
      if (!same) {
        ++diag.cost;
        ++diag.S;
      }
      Cell del = prev[j];
      ++del.cost;
      ++del.D;
      Cell ins = cur[j - 1];
      ++ins.cost;
      ++ins.I;
      Cell best = diag;
      if (del.better_than(best)) best = del;
      if (ins.better_than(best)) best = ins;
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  const Cell& c = prev[m];
  return {static_cast<double>(c.cost) / static_cast<double>(n), c.S, c.D, c.I, static_cast<int>(n)};
}

std::vector<int> token_symbols(const Transcription& t) {
  std::vector<int> s;
  s.reserve(t.tokens.size());
  for (const auto& tok : t.tokens) s.push_back(tok.kind == TokenKind::Missing ? kMissingSymbol : tok.class_id);
  return s;
}

SerResult ser(std::span<const int> gt, const Transcription& pred) {
  const auto p = token_symbols(pred);
  return ser(gt, std::span<const int>(p));
}

double missing_rate(std::span<const int> gt, const Transcription& pred) {
  if (gt.empty()) throw std::invalid_argument("missing_rate: empty ground truth");
  const auto n = std::count_if(pred.tokens.begin(), pred.tokens.end(),
                               [](const Token& t) { return t.kind == TokenKind::Missing; });
  return std::min(1.0, static_cast<double>(n) / static_cast<double>(gt.size()));
}

RecallCount recall_count(std::span<const GroundTruth> gt, const CandidateTable& table, double iou_thr) {
  RecallCount rc;
  rc.total = static_cast<int>(gt.size());
  std::vector<Detection> dets;
  for (const auto& e : table.entries) dets.insert(dets.end(), e.begin(), e.end());
  std::stable_sort(dets.begin(), dets.end(), detection_order);
  std::vector<char> used(gt.size(), 0);
  for (const auto& d : dets) {
    int best = -1;
    double best_iou = iou_thr;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (used[g] || gt[g].class_id != d.class_id) continue;
      const double v = iou(d.box, gt[g].box);
      if (v >= best_iou && (best < 0 || v > best_iou)) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      used[best] = 1;
      ++rc.matched;
    }
  }
  return rc;
}

double recall_at_iou(std::span<const GroundTruth> gt, const CandidateTable& table, double iou_thr) {
  return recall_count(gt, table, iou_thr).value();
}

std::vector<int> gt_sequence(std::span<const GroundTruth> gt) {
  std::vector<GroundTruth> sorted(gt.begin(), gt.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const GroundTruth& a, const GroundTruth& b) { return a.box.x1 < b.box.x1; });
  std::vector<int> seq;
  for (const auto& g : sorted) seq.push_back(g.class_id);
  return seq;
}

EvalReport sweep(std::span<const EvalLine> lines, std::span<const double> thresholds, int tau_int) {
  EvalReport report;
  report.lines = static_cast<int>(lines.size());
  RecallCount recall;
  for (const auto& l : lines) {
    const auto rc = recall_count(l.gt, l.table);
    recall.matched += rc.matched;
    recall.total += rc.total;
  }
  for (double tau : thresholds) {
    ThresholdRow row;
    row.tau = tau;
    for (const auto& l : lines) {
      const auto seq = gt_sequence(l.gt);
      if (seq.empty()) continue;
      const Transcription t = decode_line(filter_confidence(l.table, tau), tau, tau_int);
      const SerResult r = ser(std::span<const int>(seq), t);
      row.S += r.S;
      row.D += r.D;
      row.I += r.I;
      row.N += r.N;
      for (const auto& tok : t.tokens) (tok.kind == TokenKind::Symbol ? row.symbols : row.missing_tokens)++;
    }
    if (row.N > 0) {
      row.ser = static_cast<double>(row.S + row.D + row.I) / row.N;
      row.missing = std::min(1.0, static_cast<double>(row.missing_tokens) / row.N);
    }
    row.recall = recall.value();
    report.rows.push_back(row);
  }
  return report;
}

void write_report_csv(const EvalReport& r, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write '" + file.string() + "'");
  out << "tau,SER,missing,S,D,I,N,recall\n";
  char buf[256];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof(buf), "%.2f,%.6f,%.6f,%d,%d,%d,%d,%.6f\n", row.tau, row.ser, row.missing, row.S,
                  row.D, row.I, row.N, row.recall);
    out << buf;
  }
}

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"tau", row.tau},
                    {"SER", row.ser},
                    {"missing", row.missing},
                    {"S", row.S},
                    {"D", row.D},
                    {"I", row.I},
                    {"N", row.N},
                    {"recall", row.recall},
                    {"symbols", row.symbols},
                    {"missing_tokens", row.missing_tokens}});
  return {{"rows", rows}, {"lines", r.lines}, {"seed", r.seed}, {"config_hash", r.config_hash}};
}

}  // namespace glyphspot
