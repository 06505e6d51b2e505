#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "glyphspot/checkpoint.hpp"
#include "glyphspot/config.hpp"
#include "glyphspot/decoder.hpp"
#include "glyphspot/inference.hpp"
#include "glyphspot/metrics.hpp"
#include "glyphspot/preprocess.hpp"
#include "glyphspot/training.hpp"

namespace fs = std::filesystem;
using namespace glyphspot;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig run_config(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

void write_json(const json& j, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw DataError("cannot write '" + file.string() + "'");
  out << j.dump(2) << "\n";
}

bool is_png(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

struct SupportSet {
  std::vector<std::string> names;              // sorted
  std::vector<std::vector<Image>> canvases;    // [class][shot]
};

// supports/<class>/<shot>.png, classes and shots in sorted order
SupportSet load_support_dir(const fs::path& dir, int shots, int canvas) {
  if (!fs::is_directory(dir)) throw DataError("support directory '" + dir.string() + "' not found");
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) classes.push_back(e.path());
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw DataError("no class folders in '" + dir.string() + "'");
  SupportSet s;
  for (const auto& c : classes) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(c))
      if (e.is_regular_file() && is_png(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("class folder '" + c.string() + "' has no PNG shots");
    if (shots > 0 && static_cast<int>(files.size()) < shots)
      throw DataError("class folder '" + c.string() + "' has fewer than " + std::to_string(shots) + " shots");
    const std::size_t k = shots > 0 ? static_cast<std::size_t>(shots) : files.size();
    std::vector<Image> canv;
    for (std::size_t i = 0; i < k; ++i) {
      const Image g = trim(read_ink_png(files[i]));
      if (g.empty()) throw DataError("blank support image '" + files[i].string() + "'");
      canv.push_back(support_canvas(g, canvas));
    }
    s.names.push_back(c.filename().string());
    s.canvases.push_back(std::move(canv));
  }
  return s;
}

// id <-> name map written next to a corpus
std::map<std::string, int> corpus_class_ids(const fs::path& corpus) {
  std::map<std::string, int> ids;
  std::ifstream in(corpus / "classes.json");
  if (!in) return ids;
  try {
    for (const auto& e : json::parse(in)) ids[e.at("name").get<std::string>()] = e.at("id").get<int>();
  } catch (const json::exception& e) {
    throw DataError("classes.json: " + std::string(e.what()));
  }
  return ids;
}

std::vector<int> support_ids(const SupportSet& s, const std::map<std::string, int>& ids) {
  std::vector<int> out;
  for (const auto& n : s.names) {
    auto it = ids.find(n);
    if (it != ids.end()) {
      out.push_back(it->second);
      continue;
    }
    try {
      std::size_t used = 0;
      const int v = std::stoi(n, &used);
      if (used != n.size()) throw std::invalid_argument(n);
      out.push_back(v);
    } catch (const std::exception&) {
      throw DataError("support class '" + n + "' is not listed in the corpus classes.json");
    }
  }
  return out;
}

std::vector<int> index_ids(std::size_t n) {
  std::vector<int> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i);
  return ids;
}

std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("bad threshold '" + item + "'");
    }
    if (!(out.back() >= 0 && out.back() <= 1)) throw UsageError("thresholds must lie in [0, 1]");
  }
  if (out.empty()) throw UsageError("no thresholds given");
  return out;
}

fs::path loss_trace_path(const fs::path& ckpt) {
  fs::path p = ckpt;
  p.replace_extension(".loss.csv");
  return p;
}

void print_progress(const LossRecord& r, int every) {
  if (every > 0 && (r.iteration + 1) % every == 0)
    std::fprintf(stderr, "iter %d  loss %.4f  cls %.4f  reg %.4f\n", r.iteration + 1, r.total, r.cls, r.reg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot symbol spotting and transcription for ciphered manuscript lines"};
  app.require_subcommand(1);

  std::string atlas_dir, out, config_path, corpus_dir, ckpt_path, pages_dir, line_path, page_path, supports_dir;
  std::string thresholds_text = "0.4,0.6,0.8", split_text = "train";
  std::uint64_t seed = 1;
  int lines = 2000, test_alphabets = 10, shots = 1, log_every = 50;
  std::optional<int> iterations;
  double confidence = 0.4;
  SyntheticAtlasConfig atlas_cfg;

  auto* atlas_cmd = app.add_subcommand("atlas", "Write a procedural symbol atlas");
  atlas_cmd->add_option("--out", out, "Output directory")->required();
  atlas_cmd->add_option("--alphabets", atlas_cfg.alphabets);
  atlas_cmd->add_option("--classes", atlas_cfg.classes_per_alphabet, "Classes per alphabet");
  atlas_cmd->add_option("--samples", atlas_cfg.samples_per_class, "Samples per class");
  atlas_cmd->add_option("--seed", atlas_cfg.seed);

  auto* gen = app.add_subcommand("gen", "Compose synthetic lines from an atlas");
  gen->add_option("--atlas", atlas_dir)->required();
  gen->add_option("--out", out)->required();
  gen->add_option("--lines", lines)->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", seed);
  gen->add_option("--config", config_path);
  gen->add_option("--split", split_text)->check(CLI::IsMember({"train", "test"}));
  gen->add_option("--test-alphabets", test_alphabets);

  auto* supports = app.add_subcommand("supports", "Export support shots from an atlas split");
  supports->add_option("--atlas", atlas_dir)->required();
  supports->add_option("--out", out)->required();
  supports->add_option("--split", split_text)->check(CLI::IsMember({"train", "test"}));
  supports->add_option("--shots", shots)->check(CLI::PositiveNumber);
  supports->add_option("--test-alphabets", test_alphabets);

  auto* train_cmd = app.add_subcommand("train", "Episodic training on the atlas train split");
  train_cmd->add_option("--atlas", atlas_dir)->required();
  train_cmd->add_option("--out", out, "Checkpoint path")->required();
  train_cmd->add_option("--config", config_path);
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--iterations", iterations);
  train_cmd->add_option("--test-alphabets", test_alphabets);
  train_cmd->add_option("--log-every", log_every);

  auto* finetune = app.add_subcommand("finetune", "Retrain on labelled pages");
  finetune->add_option("--ckpt", ckpt_path)->required();
  finetune->add_option("--pages", pages_dir, "Corpus directory with annotations.jsonl")->required();
  finetune->add_option("--out", out)->required();
  finetune->add_option("--config", config_path);
  finetune->add_option("--seed", seed);
  finetune->add_option("--iterations", iterations);
  finetune->add_option("--log-every", log_every);

  auto* detect = app.add_subcommand("detect", "Candidate table for one line");
  detect->add_option("--ckpt", ckpt_path)->required();
  detect->add_option("--line", line_path)->required();
  detect->add_option("--supports", supports_dir)->required();
  detect->add_option("--out", out)->required();
  detect->add_option("--shots", shots, "Shots per class (0 = all)");

  auto* transcribe = app.add_subcommand("transcribe", "Transcribe a line or a page");
  transcribe->add_option("--ckpt", ckpt_path)->required();
  auto* line_opt = transcribe->add_option("--line", line_path);
  auto* page_opt = transcribe->add_option("--page", page_path);
  line_opt->excludes(page_opt);
  transcribe->add_option("--supports", supports_dir)->required();
  transcribe->add_option("--confidence", confidence)->check(CLI::Range(0.0, 1.0));
  transcribe->add_option("--out", out)->required();
  transcribe->add_option("--shots", shots, "Shots per class (0 = all)");

  auto* eval = app.add_subcommand("eval", "SER / missing sweep over a corpus");
  eval->add_option("--ckpt", ckpt_path)->required();
  eval->add_option("--corpus", corpus_dir)->required();
  eval->add_option("--supports", supports_dir)->required();
  eval->add_option("--thresholds", thresholds_text);
  eval->add_option("--out", out)->required();
  eval->add_option("--shots", shots)->check(CLI::PositiveNumber);
  eval->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*atlas_cmd) {
      write_synthetic_atlas(out, atlas_cfg);
      return kOk;
    }

    if (*gen) {
      const RunConfig rc = run_config(config_path);
      const Atlas atlas = load_atlas(atlas_dir, {{}, test_alphabets});
      const Split split = split_text == "test" ? Split::Test : Split::Train;
      const auto m = generate_corpus(atlas, lines, seed, rc.corpus, out, split);
      std::printf("%d lines written to %s (config %s)\n", m.n_lines, out.c_str(), m.config_hash.c_str());
      return kOk;
    }

    if (*supports) {
      const Atlas atlas = load_atlas(atlas_dir, {{}, test_alphabets});
      const Split split = split_text == "test" ? Split::Test : Split::Train;
      for (int id : atlas.class_ids(split)) {
        const auto& cls = atlas.at(id);
        if (static_cast<int>(cls.support_pool.size()) < shots)
          throw DataError("class '" + class_label(cls) + "' has fewer than " + std::to_string(shots) + " support samples");
        const fs::path dir = fs::path(out) / class_label(cls);
        fs::create_directories(dir);
        for (int k = 0; k < shots; ++k) {
          char name[32];
          std::snprintf(name, sizeof(name), "shot_%02d.png", k + 1);
          write_ink_png(cls.samples[cls.support_pool[k]].image, dir / name);
        }
      }
      return kOk;
    }

    if (*train_cmd) {
      RunConfig rc = run_config(config_path);
      if (train_cmd->count("--seed")) rc.train.seed = seed;
      if (iterations) rc.train.iterations = *iterations;
      rc.train.validate();
      const Atlas atlas = load_atlas(atlas_dir, {{}, test_alphabets});
      Detector<float> model(rc.model);
      const auto trace = train(model, atlas, rc.train, [&](const LossRecord& r) { print_progress(r, log_every); });
      json meta{{"train", rc.train}, {"seed", rc.train.seed}, {"config_hash", config_hash(json(rc))}};
      save_checkpoint(make_checkpoint(model, meta), out);
      write_loss_trace(trace, loss_trace_path(out));
      return kOk;
    }

    if (*finetune) {
      const Checkpoint base = load_checkpoint(ckpt_path);
      Detector<float> model = detector_from_checkpoint(base);
      RunConfig rc;
      rc.model = model.config();
      if (!config_path.empty()) rc.train = load_run_config(config_path).train;
      else if (base.config.contains("train")) rc.train = base.config["train"].get<TrainConfig>();
      if (finetune->count("--seed")) rc.train.seed = seed;
      if (iterations) rc.train.iterations = *iterations;
      rc.train.validate();
      std::vector<LineSample> samples;
      for (auto& l : read_corpus(pages_dir)) {
        double s = 1.0;
        LineSample ls;
        ls.image = normalize_line(l.sample.image, model.config().line_height, &s);
        for (auto g : l.sample.gt) {
          g.box = {g.box.x1 * s, g.box.y1 * s, g.box.x2 * s, g.box.y2 * s};
          ls.gt.push_back(g);
        }
        samples.push_back(std::move(ls));
      }
      const auto rep = fine_tune(model, samples, rc.train, {}, [&](const LossRecord& r) { print_progress(r, log_every); });
      for (int c : rep.excluded) std::fprintf(stderr, "warning: class %d has no instances and was excluded\n", c);
      json meta{{"train", rc.train}, {"seed", rc.train.seed}, {"config_hash", config_hash(json(rc))},
                {"fine_tuned_from", base.config.value("config_hash", "")}};
      save_checkpoint(make_checkpoint(model, meta), out);
      write_loss_trace(rep.trace, loss_trace_path(out));
      return kOk;
    }

    if (*detect || *transcribe || *eval) {
      const Checkpoint ck = load_checkpoint(ckpt_path);
      Detector<float> model = detector_from_checkpoint(ck);
      const std::string model_hash = config_hash(ck.config);
      const SupportSet sup = load_support_dir(supports_dir, shots, model.config().support_size);

      if (*detect) {
        const auto ids = index_ids(sup.names.size());
        CandidateTable table = detect_alphabet(model, read_ink_png(line_path), sup.canvases, ids);
        table.class_names = sup.names;
        json j = table_to_json(table);
        j["config_hash"] = model_hash;
        write_json(j, out);
        return kOk;
      }

      if (*transcribe) {
        if (line_path.empty() && page_path.empty()) throw UsageError("one of --line or --page is required");
        const auto ids = index_ids(sup.names.size());
        std::map<int, std::string> names;
        for (std::size_t i = 0; i < sup.names.size(); ++i) names[static_cast<int>(i)] = sup.names[i];
        std::vector<Image> query_lines;
        json segments = json::array();
        if (!line_path.empty()) {
          query_lines.push_back(read_ink_png(line_path));
        } else {
          for (auto& seg : segment_lines(binarize(read_gray_png(page_path)))) {
            segments.push_back({{"top", seg.top}, {"bottom", seg.bottom}});
            query_lines.push_back(std::move(seg.image));
          }
        }
        json out_lines = json::array();
        for (std::size_t i = 0; i < query_lines.size(); ++i) {
          const CandidateTable table = filter_confidence(detect_alphabet(model, query_lines[i], sup.canvases, ids), confidence);
          Transcription t = decode_line(table, confidence, model.config().interruption_px);
          t.line_id = std::to_string(i);
          const std::string text = transcription_to_string(t, names);
          json j = transcription_to_json(t);
          j["text"] = text;
          if (!segments.empty()) j["segment"] = segments[i];
          out_lines.push_back(j);
          std::printf("%s\n", text.c_str());
        }
        write_json({{"lines", out_lines}, {"classes", sup.names}, {"config_hash", model_hash}}, out);
        return kOk;
      }

      // eval
      const auto thresholds = parse_thresholds(thresholds_text);
      const auto ids = support_ids(sup, corpus_class_ids(corpus_dir));
      std::vector<EvalLine> eval_lines;
      for (const auto& l : read_corpus(corpus_dir)) {
        EvalLine el;
        el.gt = l.sample.gt;
        el.table = detect_alphabet(model, l.sample.image, sup.canvases, ids);
        eval_lines.push_back(std::move(el));
      }
      EvalReport rep = sweep(eval_lines, thresholds, model.config().interruption_px);
      rep.seed = seed;
      rep.config_hash = model_hash;
      fs::create_directories(out);
      write_report_csv(rep, fs::path(out) / "report.csv");
      json j = report_to_json(rep);
      j["shots"] = shots;
      write_json(j, fs::path(out) / "report.json");
      for (const auto& row : rep.rows)
        std::printf("tau %.2f  SER %.4f  missing %.4f  recall %.4f\n", row.tau, row.ser, row.missing, row.recall);
      return kOk;
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  }
  return kOk;
}
