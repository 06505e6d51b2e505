#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "glyphspot/checkpoint.hpp"
#include "glyphspot/grad_check.hpp"
#include "glyphspot/inference.hpp"
#include "glyphspot/metrics.hpp"
#include "glyphspot/ops.hpp"
#include "glyphspot/preprocess.hpp"
#include "glyphspot/training.hpp"
#include "oracles.hpp"

using namespace glyphspot;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// ---------------------------------------------------------------- 1
Outcome ser_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> len(0, 20), sym(0, 9);
  int mismatches = 0, wild_pairs = 0;
  for (int t = 0; t < 1000; ++t) {
    std::bernoulli_distribution wild(t % 2 ? 0.25 : 0.0);
    std::vector<int> gt(static_cast<std::size_t>(std::max(1, len(rng)))), pred(static_cast<std::size_t>(len(rng)));
    for (auto& s : gt) s = sym(rng);
    bool any = false;
    for (auto& s : pred) {
      s = wild(rng) ? kMissingSymbol : sym(rng);
      any = any || s == kMissingSymbol;
    }
    wild_pairs += any;
    const SerResult a = ser(gt, pred), b = oracle::ser(gt, pred);
    if (a.S != b.S || a.D != b.D || a.I != b.I || a.ser != b.ser) ++mismatches;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < 10,
          fmt("%d/1000 mismatches, %d pairs with wildcards, %.2f s", mismatches, wild_pairs, secs)};
}

// ---------------------------------------------------------------- 2
Outcome geometry_oracle() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<int> pos(0, 60), len(0, 40);
  auto box = [&] {
    const int x = pos(rng), y = pos(rng);
    return BBox{double(x), double(y), double(x + len(rng)), double(y + len(rng))};
  };
  double worst = 0;
  for (int t = 0; t < 500; ++t) {
    const BBox a = box(), b = box();
    worst = std::max(worst, std::abs(iou(a, b) - oracle::raster_iou(a, b)));
  }
  int nms_bad = 0;
  std::uniform_int_distribution<int> count(0, 50), cls(0, 2);
  for (int t = 0; t < 500; ++t) {
    std::vector<Detection> dets;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) dets.push_back({box(), cls(rng), static_cast<double>(rng() % 11) / 10.0});
    const double thr = (t % 3 == 0) ? 0.3 : (t % 3 == 1 ? 0.5 : 0.7);
    const auto got = nms(dets, thr), want = oracle::nms(dets, thr);
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < got.size(); ++i)
      same = got[i].box == want[i].box && got[i].score == want[i].score && got[i].class_id == want[i].class_id;
    nms_bad += !same;
  }
  return {worst <= 1e-9 && nms_bad == 0, fmt("max |iou - raster| %.3g, nms mismatches %d/500", worst, nms_bad)};
}

// ---------------------------------------------------------------- 3
Outcome decoder_oracle() {
  const auto t0 = Clock::now();
  const std::vector<std::pair<double, double>> spans{{0, 40}, {10.5, 30}, {30, 80}, {35, 45}, {55.2, 99}};
  const std::vector<double> scores{0.3, 0.6, 0.9};
  struct Choice {
    int cls;
    double x1, x2, score;
  };
  std::vector<Choice> choices;
  for (const auto& [a, b] : spans)
    for (double s : scores)
      for (int c = 0; c < 2; ++c) choices.push_back({c, a, b, s});

  long cases = 0, bad = 0;
  std::vector<int> idx;
  auto visit = [&](auto&& self, std::size_t from, int left) -> void {
    CandidateTable table;
    table.line_width = 100;
    table.classes = {0, 1};
    table.entries.resize(2);
    for (int i : idx) {
      const auto& c = choices[static_cast<std::size_t>(i)];
      table.entries[static_cast<std::size_t>(c.cls)].push_back({{c.x1, 0, c.x2, 64}, c.cls, c.score});
    }
    for (auto& e : table.entries)
      std::stable_sort(e.begin(), e.end(), [](const Detection& a, const Detection& b) { return a.box.x1 < b.box.x1; });
    for (double tau : {0.4, 0.8})
      if (decode_line(table, tau).tokens != oracle::decode(table, tau, 15)) ++bad;
    ++cases;
    if (left == 0) return;
    for (std::size_t i = from; i < choices.size(); ++i) {
      idx.push_back(static_cast<int>(i));
      self(self, i, left - 1);
      idx.pop_back();
    }
  };
  visit(visit, 0, 4);
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 120, fmt("%ld tables x 2 thresholds, %ld mismatches, %.1f s", cases, bad, secs)};
}

// ---------------------------------------------------------------- 4
Outcome attention_checks() {
  Detector<float> model(ModelConfig{});
  const int c = model.config().channels();
  std::mt19937_64 rng(404);
  std::normal_distribution<float> n(0, 1);
  auto random = [&](std::vector<int> shape) {
    Tensor<float> t(shape);
    for (auto& v : t.values()) v = n(rng);
    return t;
  };
  bool identity = true;
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    Tape<float> tape(false);
    const Tensor<float> q = random({8, 10 + t, c});
    identity = identity && tape.value(model.attention_map(tape, tape.constant(Tensor<float>({1, 1, c}, 1.f)),
                                                          tape.constant(q))) == q;
    const Tensor<float> s = random({1, 1, c});
    const auto& a = tape.value(model.attention_map(tape, tape.constant(s), tape.constant(q)));
    for (int h = 0; h < q.shape()[0]; ++h)
      for (int w = 0; w < q.shape()[1]; ++w)
        for (int k = 0; k < c; ++k)
          worst = std::max(worst, static_cast<double>(std::abs(a.at(h, w, k) - s[k] * q.at(h, w, k))));
  }
  return {identity && worst <= 1e-6,
          fmt("all-ones identity %s, max |A - S*Q| %.3g over 20 random maps", identity ? "bit-exact" : "BROKEN", worst)};
}

// ---------------------------------------------------------------- 5
Outcome gradient_check() {
  const auto t0 = Clock::now();
  ModelConfig cfg;
  cfg.backbone_channels = {4, 8, 8, 8};
  cfg.rpn_channels = 8;
  cfg.head_hidden = 16;
  cfg.init_seed = 5;
  Detector<double> model(cfg);
  // zero biases put every blank-background unit exactly on a ReLU kink
  std::mt19937_64 brng(6);
  std::normal_distribution<double> bias(0, 0.1);
  for (auto& p : model.parameters())
    if (p.name.ends_with(".bias"))
      for (auto& v : p.value.values()) v = bias(brng);

  SyntheticAtlasConfig ac;
  ac.alphabets = 2;
  ac.seed = 55;
  const fs::path dir = fs::temp_directory_path() / "glyphspot_accept_grad";
  fs::remove_all(dir);
  write_synthetic_atlas(dir, ac);
  const Atlas atlas = load_atlas(dir, {});
  fs::remove_all(dir);

  // two glyphs on a 32 x 96 line
  Image line(96, 32);
  std::vector<BBox> gt;
  const AtlasClass& cls = atlas.at(0);
  for (int k = 0; k < 2; ++k) {
    const Image g = resize_bilinear(trim(cls.samples[cls.query_pool[static_cast<std::size_t>(k)]].image), 28, 26);
    const int x0 = 10 + 46 * k, y0 = 3;
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x) line.at(x0 + x, y0 + y) = g.at(x, y);
    gt.push_back({double(x0), double(y0), double(x0 + g.width), double(y0 + g.height)});
  }
  const std::vector<Image> shots{support_canvas(trim(cls.samples[cls.support_pool[0]].image), cfg.support_size)};
  const std::vector<BBox> proposals{{12, 2, 40, 30}, {30, 4, 62, 28}};

  auto loss_fn = [&](Tape<double>& tape) -> Var {
    const FeatureMap q = model.extract_features(tape, line);
    const SupportEncoding s = model.encode_supports(tape, shots);
    const RpnOutput r = model.rpn(tape, model.attention_map(tape, s.vector, q.tensor));
    std::vector<BBox> anchors;
    for (const auto& a : r.anchors) anchors.push_back(a.box());
    const auto rt = assign_targets(anchors, gt, 0.7, 0.3);
    const std::size_t na = anchors.size();
    std::vector<double> labels(na), weights(na), pos(na);
    Tensor<double> rtgt({static_cast<int>(na), 4});
    for (std::size_t i = 0; i < na; ++i) {
      labels[i] = rt.labels[i] == kPositive;
      weights[i] = rt.labels[i] == kIgnore ? 0.0 : 1.0;
      pos[i] = rt.labels[i] == kPositive;
      const BoxDelta& t = rt.targets[i];
      const double v[4]{t.tx, t.ty, t.tw, t.th};
      for (int j = 0; j < 4; ++j) rtgt[4 * i + j] = rt.labels[i] == kPositive ? v[j] : 0.0;
    }
    Var loss = ops::add(tape, ops::sigmoid_bce<double>(tape, r.logits, labels, weights, double(na)),
                        ops::smooth_l1<double>(tape, r.deltas, rtgt, pos, 1.0));
    const HeadOutput h = model.head(tape, q, proposals, s.feature_map);
    const std::vector<double> hl{1, 0}, hw{1, 1}, hp{1, 0};
    Tensor<double> htgt({2, 4});
    const BoxDelta d = encode_delta(gt[0], anchor_from_box(proposals[0]));
    const double v[4]{d.tx, d.ty, d.tw, d.th};
    for (int j = 0; j < 4; ++j) htgt[j] = v[j] * kHeadDeltaWeights[j];
    loss = ops::add(tape, loss, ops::sigmoid_bce<double>(tape, h.logits, hl, hw, 2.0));
    return ops::add(tape, loss, ops::smooth_l1<double>(tape, h.deltas, htgt, hp, 1.0));
  };
  const GradCheckReport rep = grad_check(model.parameters(), loss_fn, 1e-3, 100, 7);
  const double secs = seconds_since(t0);
  std::set<std::string> touched;
  for (const auto& e : rep.entries) touched.insert(e.param);
  const auto above = std::count_if(rep.entries.begin(), rep.entries.end(),
                                   [](const GradCheckEntry& e) { return e.rel_error >= 1e-3; });
  // same samples with a step below the kink spacing
  const GradCheckReport fine = grad_check(model.parameters(), loss_fn, 1e-4, 100, 7);
  return {rep.entries.size() == 100 && rep.max_rel_error < 1e-3 && secs < 300,
          fmt("%zu parameters from %zu tensors, h=1e-3 max relative error %.3g (%ld at or above 1e-3), "
              "h=1e-4 max %.3g, %.1f s",
              rep.entries.size(), touched.size(), rep.max_rel_error, static_cast<long>(above), fine.max_rel_error, secs)};
}

// ---------------------------------------------------------------- 6, 7

struct DeskRun {
  fs::path root;
  Atlas atlas;
  ModelConfig model_cfg;
  TrainConfig train_cfg;
  std::unique_ptr<Detector<float>> model;
  double train_seconds = 0;
  int steps = 0;
  EvalReport one_shot, five_shot;
};

EpisodeConfig eval_episode_config() {
  EpisodeConfig ec;
  ec.min_symbols = 5;
  ec.max_symbols = 15;
  ec.transform_supports = false;
  return ec;
}

EvalReport evaluate_episodes(Detector<float>& model, const Atlas& atlas, int shots, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<EvalLine> lines;
  for (int e = 0; e < 20; ++e) {
    const Episode ep = sample_episode(atlas, Split::Test, 5, shots, rng, eval_episode_config());
    std::vector<std::vector<Image>> sup(ep.supports.size());
    for (std::size_t c = 0; c < ep.supports.size(); ++c)
      for (const auto& g : ep.supports[c]) sup[c].push_back(support_canvas(g.image, model.config().support_size));
    for (const auto& q : ep.queries) {
      EvalLine l;
      l.gt = q.gt;
      l.table = detect_alphabet(model, q.image, sup, ep.classes);
      lines.push_back(std::move(l));
    }
  }
  return sweep(lines);
}

DeskRun& desk_run(const fs::path& work) {
  static std::unique_ptr<DeskRun> run;
  if (run) return *run;
  run = std::make_unique<DeskRun>();
  run->root = work / "desk";
  SyntheticAtlasConfig ac;
  ac.alphabets = 40;
  ac.classes_per_alphabet = 1;
  write_synthetic_atlas(run->root / "atlas", ac);
  SplitSpec split;
  split.test_alphabet_count = 10;
  run->atlas = load_atlas(run->root / "atlas", split);

  run->model_cfg.roi_mode = "align";
  run->train_cfg.iterations = 1000;
  run->train_cfg.n_way = 5;
  run->train_cfg.episode.min_symbols = 5;
  run->train_cfg.episode.max_symbols = 15;
  run->model = std::make_unique<Detector<float>>(run->model_cfg);
  const auto t0 = Clock::now();
  train(*run->model, run->atlas, run->train_cfg, [&](const LossRecord& r) {
    if ((r.iteration + 1) % 100 == 0)
      std::fprintf(stderr, "  desk training %d/%d  loss %.4f  %.0f s\n", r.iteration + 1, run->train_cfg.iterations,
                   r.total, seconds_since(t0));
  });
  run->train_seconds = seconds_since(t0);
  run->steps = run->train_cfg.iterations * run->train_cfg.episodes_per_batch *
               run->train_cfg.episode.lines_per_episode * run->train_cfg.n_way;
  save_checkpoint(make_checkpoint(*run->model), run->root / "desk.gslt");
  run->one_shot = evaluate_episodes(*run->model, run->atlas, 1, 9001);
  run->five_shot = evaluate_episodes(*run->model, run->atlas, 5, 9001);
  return *run;
}

const ThresholdRow& row_at(const EvalReport& r, double tau) {
  for (const auto& row : r.rows)
    if (std::abs(row.tau - tau) < 1e-12) return row;
  throw std::out_of_range("no row at tau");
}

Outcome desk_learning(const fs::path& work) {
  DeskRun& run = desk_run(work);
  const ThresholdRow& one = row_at(run.one_shot, 0.4);
  const ThresholdRow& five = row_at(run.five_shot, 0.4);
  const bool pass = one.recall >= 0.7 && one.ser <= 0.35 && five.ser <= one.ser + 0.05 && run.steps <= 5000 &&
                    run.train_seconds <= 4 * 3600;
  return {pass, fmt("%d steps in %.0f s; 1-shot recall %.3f SER %.3f (N=%d); 5-shot SER %.3f recall %.3f", run.steps,
                    run.train_seconds, one.recall, one.ser, one.N, five.ser, five.recall)};
}

Outcome threshold_monotonicity(const fs::path& work) {
  DeskRun& run = desk_run(work);
  bool pass = true;
  std::string detail;
  for (const EvalReport* r : {&run.one_shot, &run.five_shot}) {
    const ThresholdRow &a = row_at(*r, 0.4), &b = row_at(*r, 0.6), &c = row_at(*r, 0.8);
    pass = pass && c.missing >= b.missing && b.missing >= a.missing && c.symbols <= b.symbols && b.symbols <= a.symbols;
    detail += fmt("%s missing %.3f/%.3f/%.3f symbols %d/%d/%d  ", r == &run.one_shot ? "1-shot" : "5-shot", a.missing,
                  b.missing, c.missing, a.symbols, b.symbols, c.symbols);
  }
  detail.pop_back();
  detail.pop_back();
  return {pass, detail};
}

// ---------------------------------------------------------------- 8

std::vector<LineSample> cipher_lines(const Atlas& atlas, int n, std::uint64_t seed) {
  Rng rng(seed);
  const auto ids = atlas.class_ids(Split::Test);
  std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
  std::uniform_int_distribution<int> len(5, 15);
  ComposeConfig cc;
  cc.interline_strokes = true;
  std::vector<LineSample> out;
  for (int i = 0; i < n; ++i) {
    std::vector<Glyph> glyphs;
    const int k = len(rng);
    for (int j = 0; j < k; ++j) {
      const AtlasClass& cls = atlas.at(ids[pick(rng)]);
      const int q = cls.query_pool[std::uniform_int_distribution<std::size_t>(0, cls.query_pool.size() - 1)(rng)];
      glyphs.push_back(transform_glyph(cls.samples[static_cast<std::size_t>(q)], rng));
    }
    out.push_back(compose_line(glyphs, rng, cc));
  }
  return out;
}

EvalReport alphabet_report(Detector<float>& model, const Atlas& atlas, std::span<const LineSample> lines) {
  const auto ids = atlas.class_ids(Split::Test);
  std::vector<std::vector<Image>> sup;
  for (int id : ids) {
    const AtlasClass& cls = atlas.at(id);
    sup.push_back({support_canvas(cls.samples[cls.support_pool[0]].image, model.config().support_size)});
  }
  std::vector<EvalLine> eval;
  for (const auto& l : lines) eval.push_back({l.gt, detect_alphabet(model, l.image, sup, ids)});
  return sweep(eval, std::vector<double>{0.0, 0.4, 0.6, 0.8});
}

Outcome fine_tune_trend(const fs::path& work) {
  DeskRun& run = desk_run(work);
  SyntheticAtlasConfig ac;
  ac.alphabets = 1;
  ac.classes_per_alphabet = 12;
  ac.seed = 31337;
  write_synthetic_atlas(work / "cipher", ac);
  SplitSpec split;
  split.test_alphabet_count = 1;
  const Atlas cipher = load_atlas(work / "cipher", split);

  const auto pages = cipher_lines(cipher, 34, 81);
  const auto held_out = cipher_lines(cipher, 30, 82);
  Detector<float> model(run.model_cfg, decode_checkpoint(encode_checkpoint(make_checkpoint(*run.model))).params);
  const EvalReport before = alphabet_report(model, cipher, held_out);
  TrainConfig ft = run.train_cfg;
  ft.iterations = 200;
  ft.seed = 83;
  fine_tune(model, pages, ft);
  const EvalReport after = alphabet_report(model, cipher, held_out);
  std::string detail = "held-out alphabet SER before -> after fine-tuning on 34 lines:";
  for (double tau : {0.4, 0.0, 0.6, 0.8})
    detail += fmt(" tau %.1f %.4f -> %.4f;", tau, row_at(before, tau).ser, row_at(after, tau).ser);
  detail.pop_back();
  return {row_at(after, 0.4).ser < row_at(before, 0.4).ser, detail};
}

// ---------------------------------------------------------------- 9

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(GLYPHSPOT_CLI) + " " + args + " >>" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism(const fs::path& work) {
  const fs::path root = work / "determinism", log = root / "cli.log";
  fs::create_directories(root);
  const std::string atlas = " --atlas " + (root / "atlas").string() + " --test-alphabets 3";
  if (run_cli("atlas --out " + (root / "atlas").string() + " --alphabets 12 --seed 4", log) != 0)
    return {false, "atlas command failed"};
  if (run_cli("supports" + atlas + " --split test --out " + (root / "sup").string(), log) != 0)
    return {false, "supports command failed"};

  std::vector<std::string> differing;
  int failures = 0;
  for (int pass = 0; pass < 2; ++pass) {
    const fs::path d = root / ("run" + std::to_string(pass));
    failures += run_cli("gen" + atlas + " --split test --lines 12 --seed 21 --out " + (d / "corpus").string(), log) != 0;
    failures += run_cli("train" + atlas + " --iterations 40 --seed 22 --log-every 0 --out " + (d / "model.gslt").string(),
                        log) != 0;
    failures += run_cli("eval --ckpt " + (d / "model.gslt").string() + " --corpus " + (d / "corpus").string() +
                            " --supports " + (root / "sup").string() + " --seed 23 --out " + (d / "eval").string(),
                        log) != 0;
  }
  if (failures) return {false, fmt("%d commands failed, see %s", failures, log.c_str())};

  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "run0")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), root / "run0");
    ++compared;
    if (slurp(e.path()) != slurp(root / "run1" / rel)) differing.push_back(rel.string());
  }
  std::string detail = fmt("%zu artifacts from gen, train (200 steps) and eval compared", compared);
  for (const auto& d : differing) detail += "; differs: " + d;
  return {differing.empty() && compared > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  std::string work_dir;
  bool keep = false;
  app.add_option("--only", only, "Criteria to run (default all)")->check(CLI::Range(1, 9));
  app.add_option("--work", work_dir, "Scratch directory");
  app.add_flag("--keep", keep, "Keep the scratch directory");
  CLI11_PARSE(app, argc, argv);

  const fs::path work = work_dir.empty() ? fs::temp_directory_path() / ("glyphspot_acceptance_" + std::to_string(::getpid()))
                                         : fs::path(work_dir);
  fs::create_directories(work);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"ser matches the edit-distance oracle", ser_oracle},
      {"iou and nms match their oracles", geometry_oracle},
      {"decoder matches the column simulation", decoder_oracle},
      {"attention map checks", attention_checks},
      {"micro-pipeline gradient check", gradient_check},
      {"desk-scale learning", [&] { return desk_learning(work); }},
      {"threshold monotonicity", [&] { return threshold_monotonicity(work); }},
      {"fine-tuning trend", [&] { return fine_tune_trend(work); }},
      {"determinism", [&] { return determinism(work); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), n) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  if (!keep) fs::remove_all(work);
  return failed == 0 ? 0 : 1;
}
