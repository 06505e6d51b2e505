#include "glyphspot/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace glyphspot {

std::pair<int, int> box_columns(const BBox& box, int line_width) {
  int a = static_cast<int>(std::ceil(box.x1));
  int b = static_cast<int>(std::floor(box.x2));
  if (line_width > 0) {
    a = std::max(a, 0);
    b = std::min(b, line_width - 1);
  }
  return {a, b};
}

namespace {

struct Cand {
  const Detection* det;
  int cls_rank;  // class id used for tie-breaks
  int id;
  int a, b;
};

// true when p outranks q for column ownership
bool outranks(const Cand& p, const Cand& q) {
  if (p.det->score != q.det->score) return p.det->score > q.det->score;
  if (p.det->box.x1 != q.det->box.x1) return p.det->box.x1 < q.det->box.x1;
  if (p.cls_rank != q.cls_rank) return p.cls_rank < q.cls_rank;
  return p.id < q.id;
}

struct Run {
  int owner;
  int a, b;
};

}  // namespace

Transcription decode_line(const CandidateTable& table, double tau, int tau_int) {
  if (tau_int <= 0) throw std::invalid_argument("decode_line: tau_int must be > 0");
  Transcription out;
  out.tau = tau;

  std::vector<Cand> cands;
  int id = 0;
  for (std::size_t c = 0; c < table.entries.size(); ++c) {
    for (const auto& d : table.entries[c]) {
      const auto [a, b] = box_columns(d.box, table.line_width);
      if (a <= b) cands.push_back({&d, table.classes[c], id, a, b});
      ++id;
    }
  }
  if (cands.empty()) return out;

  // events at run boundaries; active set ordered by rank
  struct Event {
    int x;
    bool start;
    int cand;
  };
  std::vector<Event> events;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    events.push_back({cands[i].a, true, static_cast<int>(i)});
    events.push_back({cands[i].b + 1, false, static_cast<int>(i)});
  }
  std::sort(events.begin(), events.end(), [](const Event& p, const Event& q) { return p.x < q.x; });
  auto cmp = [&cands](int p, int q) { return outranks(cands[p], cands[q]); };
  std::set<int, decltype(cmp)> active(cmp);

  std::vector<Run> runs;
  for (std::size_t e = 0; e < events.size();) {
    const int x = events[e].x;
    for (; e < events.size() && events[e].x == x; ++e) {
      if (events[e].start) active.insert(events[e].cand);
      else active.erase(events[e].cand);
    }
    if (active.empty() || e == events.size()) continue;
    const int owner = *active.begin();
    const int end = events[e].x - 1;
    if (!runs.empty() && runs.back().owner == owner && runs.back().b == x - 1) runs.back().b = end;
    else runs.push_back({owner, x, end});
  }

  // widest run per detection, leftmost on ties
  std::vector<int> best(cands.size(), -1);
  for (std::size_t r = 0; r < runs.size(); ++r) {
    int& k = best[runs[r].owner];
    if (k < 0 || runs[r].b - runs[r].a > runs[k].b - runs[k].a) k = static_cast<int>(r);
  }
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const Run& run = runs[r];
    if (best[run.owner] != static_cast<int>(r) || run.b - run.a + 1 < tau_int) continue;
    const Cand& c = cands[run.owner];
    Token t;
    t.kind = c.det->score >= tau ? TokenKind::Symbol : TokenKind::Missing;
    t.class_id = c.cls_rank;
    t.score = c.det->score;
    t.x1 = run.a;
    t.x2 = run.b;
    t.detection = c.id;
    out.tokens.push_back(t);
  }
  return out;
}

std::string transcription_to_string(const Transcription& t, const std::map<int, std::string>& names) {
  std::string s;
  for (const auto& tok : t.tokens) {
    if (!s.empty()) s += ' ';
    if (tok.kind == TokenKind::Missing) {
      s += '?';
      continue;
    }
    auto it = names.find(tok.class_id);
    if (it == names.end()) throw std::out_of_range("no name for class id " + std::to_string(tok.class_id));
    s += it->second;
  }
  return s;
}

nlohmann::json transcription_to_json(const Transcription& t) {
  nlohmann::json tokens = nlohmann::json::array();
  for (const auto& tok : t.tokens) {
    nlohmann::json j{{"kind", tok.kind == TokenKind::Symbol ? "SYMBOL" : "MISSING"},
                     {"score", tok.score},
                     {"x1", tok.x1},
                     {"x2", tok.x2}};
    j["class"] = tok.kind == TokenKind::Symbol ? nlohmann::json(tok.class_id) : nlohmann::json(nullptr);
    tokens.push_back(j);
  }
  nlohmann::json j{{"tokens", tokens}, {"tau", t.tau}};
  if (!t.line_id.empty()) j["line"] = t.line_id;
  return j;
}

}  // namespace glyphspot
