#include "glyphspot/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "glyphspot/config.hpp"
#include "json.hpp"

namespace glyphspot {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::uint64_t child_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over the pair
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

const char* split_name(Split s) { return s == Split::Train ? "train" : "test"; }

std::vector<int> Atlas::class_ids(Split s) const {
  std::vector<int> ids;
  for (const auto& c : classes)
    if (c.split == s) ids.push_back(c.class_id);
  return ids;
}

std::pair<int, int> pool_sizes(int n) {
  if (n == 20) return {7, 10};
  const int query = std::max(1, static_cast<int>(std::floor(0.35 * n)));
  return {query, n - query};
}

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir, bool dirs) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (dirs ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".png";
}

/// Ink maps from arbitrary scans: background is whatever dominates the border.
Image normalize_polarity(Image img) {
  if (img.empty()) return img;
  double sum = 0;
  int n = 0;
  for (int x = 0; x < img.width; ++x) {
    sum += img.at(x, 0) + img.at(x, img.height - 1);
    n += 2;
  }
  for (int y = 0; y < img.height; ++y) {
    sum += img.at(0, y) + img.at(img.width - 1, y);
    n += 2;
  }
  if (sum / n > 0.5)
    for (float& v : img.pixels) v = 1.f - v;
  return img;
}

// Drops faint resampling halos so ink extents stay tight.
void clean_halo(Image& img) {
  for (float& v : img.pixels)
    if (v < 0.1f) v = 0.f;
}

}  // namespace

Atlas load_atlas(const fs::path& root, const SplitSpec& split) {
  if (!fs::is_directory(root)) throw DataError("atlas root '" + root.string() + "' is not a directory");
  Atlas atlas;
  const auto alphabet_dirs = sorted_entries(root, true);
  if (alphabet_dirs.empty()) throw DataError("atlas root '" + root.string() + "' has no alphabets");

  for (const auto& d : alphabet_dirs) atlas.alphabets.push_back(d.filename().string());
  const int n_alpha = static_cast<int>(atlas.alphabets.size());
  atlas.alphabet_split.assign(atlas.alphabets.size(), Split::Train);
  if (!split.test_alphabets.empty()) {
    for (const auto& name : split.test_alphabets) {
      auto it = std::find(atlas.alphabets.begin(), atlas.alphabets.end(), name);
      if (it == atlas.alphabets.end()) throw DataError("unknown test alphabet '" + name + "'");
      atlas.alphabet_split[it - atlas.alphabets.begin()] = Split::Test;
    }
  } else {
    if (split.test_alphabet_count < 0 || split.test_alphabet_count > n_alpha)
      throw DataError("test alphabet count out of range");
    for (int i = n_alpha - split.test_alphabet_count; i < n_alpha; ++i)
      atlas.alphabet_split[i] = Split::Test;
  }

  for (int a = 0; a < n_alpha; ++a) {
    for (const auto& class_dir : sorted_entries(alphabet_dirs[a], true)) {
      AtlasClass cls;
      cls.alphabet = atlas.alphabets[a];
      cls.name = class_dir.filename().string();
      cls.class_id = static_cast<int>(atlas.classes.size());
      cls.alphabet_id = a;
      cls.split = atlas.alphabet_split[a];
      for (const auto& file : sorted_entries(class_dir, false)) {
        if (!is_image_file(file)) continue;
        Glyph g;
        g.image = trim(normalize_polarity(read_ink_png(file)));
        if (g.image.empty()) throw DataError("blank glyph image '" + file.string() + "'");
        g.class_id = cls.class_id;
        g.alphabet_id = a;
        g.sample_index = static_cast<int>(cls.samples.size());
        cls.samples.push_back(std::move(g));
      }
      const int n = static_cast<int>(cls.samples.size());
      if (n < 2)
        throw DataError("class '" + cls.alphabet + "/" + cls.name + "' has fewer than 2 samples");
      const auto [nq, ns] = pool_sizes(n);
      for (int i = 0; i < nq; ++i) cls.query_pool.push_back(i);
      for (int i = n - ns; i < n; ++i) cls.support_pool.push_back(i);
      atlas.classes.push_back(std::move(cls));
    }
  }
  if (atlas.classes.empty()) throw DataError("atlas root '" + root.string() + "' has no classes");
  return atlas;
}

Glyph transform_glyph(const Glyph& g, Rng& rng, const TransformConfig& cfg) {
  if (cfg.scale_min <= 0 || cfg.scale_min > cfg.scale_max)
    throw std::invalid_argument("transform_glyph: bad scale range");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> scale_dist(cfg.scale_min, cfg.scale_max);
  std::uniform_real_distribution<double> angle_dist(-cfg.max_rotation_deg, cfg.max_rotation_deg);
  const bool do_resize = unit(rng) < cfg.probability;
  const double scale = scale_dist(rng);
  const bool do_rotate = unit(rng) < cfg.probability;
  const double angle = angle_dist(rng);
  const bool do_morph = unit(rng) < cfg.probability;
  const bool dilate_not_erode = unit(rng) < 0.5;

  Glyph out = g;
  if (do_resize) {
    const int w = std::max(1, static_cast<int>(std::lround(g.image.width * scale)));
    const int h = std::max(1, static_cast<int>(std::lround(g.image.height * scale)));
    out.image = resize_bilinear(out.image, w, h);
    clean_halo(out.image);
  }
  if (do_rotate) {
    out.image = rotate(out.image, angle);
    clean_halo(out.image);
  }
  if (do_morph) {
    if (dilate_not_erode) {
      out.image = dilate(out.image);
    } else {
      Image eroded = erode(out.image);
      if (ink_bounds(eroded)) out.image = std::move(eroded);
    }
  }
  Image trimmed = trim(out.image);
  // resampling a tiny glyph can wipe it out; fall back to the input
  out.image = trimmed.empty() ? g.image : std::move(trimmed);
  return out;
}

namespace {

Image scale_to_height(const Image& img, int max_h) {
  if (img.height <= max_h) return img;
  const double s = static_cast<double>(max_h) / img.height;
  const int w = std::max(1, static_cast<int>(std::lround(img.width * s)));
  Image out = resize_bilinear(img, w, max_h);
  clean_halo(out);
  Image t = trim(out);
  return t.empty() ? out : t;
}

void draw_interline_strokes(Image& line, Rng& rng, const ComposeConfig& cfg) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> count_dist(1, std::max(1, line.width / 60));
  std::uniform_int_distribution<int> x_dist(0, std::max(0, line.width - 1));
  std::uniform_int_distribution<int> len_dist(3, std::max(3, cfg.line_height / 6));
  const int n = count_dist(rng);
  for (int i = 0; i < n; ++i) {
    const bool from_top = unit(rng) < 0.5;
    const int x = x_dist(rng);
    const int len = len_dist(rng);
    for (int d = 0; d < len; ++d) {
      const int y = from_top ? d : line.height - 1 - d;
      for (int dx = 0; dx < 2; ++dx)
        if (x + dx < line.width) line.at(x + dx, y) = 1.f;
    }
  }
}

}  // namespace

LineSample compose_line(std::span<const Glyph> glyphs, Rng& rng, const ComposeConfig& cfg) {
  const int n = static_cast<int>(glyphs.size());
  if (n < cfg.min_symbols || n > cfg.max_symbols)
    throw std::invalid_argument("compose_line: " + std::to_string(n) + " glyphs, expected " +
                                std::to_string(cfg.min_symbols) + ".." + std::to_string(cfg.max_symbols));
  std::uniform_real_distribution<double> gap_dist(-cfg.overlap_max, cfg.gap_max);
  std::uniform_int_distribution<int> jitter_dist(-cfg.vertical_jitter, cfg.vertical_jitter);

  std::vector<Image> images;
  std::vector<PixelRect> rects;
  images.reserve(glyphs.size());
  int x = cfg.margin, right = 0;
  for (int i = 0; i < n; ++i) {
    Image img = scale_to_height(glyphs[i].image, cfg.max_glyph_height);
    if (i > 0) {
      const int gap = static_cast<int>(std::floor(gap_dist(rng)));
      x = std::max(rects.back().x + rects.back().w + gap, rects.back().x + 1);
    }
    const int base = (cfg.line_height - img.height) / 2;
    const int y = std::clamp(base + jitter_dist(rng), 0, cfg.line_height - img.height);
    rects.push_back({x, y, img.width, img.height});
    right = std::max(right, x + img.width);
    images.push_back(std::move(img));
  }

  LineSample line;
  line.image = Image(right + cfg.margin, cfg.line_height);
  for (int i = 0; i < n; ++i) {
    paste_max(line.image, images[i], rects[i].x, rects[i].y);
    line.gt.push_back({BBox{static_cast<double>(rects[i].x), static_cast<double>(rects[i].y),
                            static_cast<double>(rects[i].x + rects[i].w),
                            static_cast<double>(rects[i].y + rects[i].h)},
                       glyphs[i].class_id});
  }
  if (cfg.interline_strokes) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (unit(rng) < cfg.interline_probability) draw_interline_strokes(line.image, rng, cfg);
  }
  return line;
}

namespace {

const Glyph& random_sample(const AtlasClass& cls, const std::vector<int>& pool, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  return cls.samples[pool[pick(rng)]];
}

}  // namespace

CorpusManifest generate_corpus(const Atlas& atlas, int n_lines, std::uint64_t seed,
                               const CorpusConfig& cfg, const fs::path& out_dir, Split split) {
  if (n_lines < 0) throw std::invalid_argument("generate_corpus: negative line count");
  const auto train_ids = atlas.class_ids(split);
  if (train_ids.empty() && n_lines > 0)
    throw DataError(std::string("generate_corpus: ") + split_name(split) + " split is empty");
  fs::create_directories(out_dir / "lines");

  std::vector<CorpusLine> lines;
  for (int i = 0; i < n_lines; ++i) {
    Rng rng(child_seed(seed, static_cast<std::uint64_t>(i)));
    std::uniform_int_distribution<int> len_dist(cfg.compose.min_symbols, cfg.compose.max_symbols);
    std::uniform_int_distribution<std::size_t> class_dist(0, train_ids.size() - 1);
    const int len = len_dist(rng);
    std::vector<Glyph> glyphs;
    for (int k = 0; k < len; ++k) {
      const auto& cls = atlas.at(train_ids[class_dist(rng)]);
      glyphs.push_back(transform_glyph(random_sample(cls, cls.query_pool, rng), rng, cfg.transform));
    }
    CorpusLine cl;
    char name[32];
    std::snprintf(name, sizeof(name), "lines/line_%06d.png", i);
    cl.image_path = name;
    cl.sample = compose_line(glyphs, rng, cfg.compose);
    write_ink_png(cl.sample.image, out_dir / cl.image_path);
    lines.push_back(std::move(cl));
  }
  write_annotations(lines, out_dir / "annotations.jsonl");

  CorpusManifest m;
  m.seed = seed;
  m.config_hash = config_hash(json(cfg));
  m.n_lines = n_lines;
  m.split = split_name(split);
  std::ofstream(out_dir / "manifest.json") << json(m).dump(2) << "\n";
  json names = json::array();
  for (int id : train_ids) names.push_back({{"id", id}, {"name", class_label(atlas.at(id))}});
  std::ofstream(out_dir / "classes.json") << names.dump(2) << "\n";
  return m;
}

std::string class_label(const AtlasClass& c) { return c.alphabet + "." + c.name; }

void write_annotations(const std::vector<CorpusLine>& lines, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write '" + file.string() + "'");
  for (const auto& l : lines) {
    json boxes = json::array(), labels = json::array();
    for (const auto& g : l.sample.gt) {
      boxes.push_back({g.box.x1, g.box.y1, g.box.x2, g.box.y2});
      labels.push_back(g.class_id);
    }
    out << json{{"image", l.image_path}, {"boxes", boxes}, {"labels", labels}}.dump() << "\n";
  }
}

std::vector<CorpusLine> read_corpus(const fs::path& dir) {
  std::ifstream in(dir / "annotations.jsonl");
  if (!in) throw DataError("no annotations.jsonl in '" + dir.string() + "'");
  std::vector<CorpusLine> lines;
  std::string text;
  int lineno = 0;
  while (std::getline(in, text)) {
    ++lineno;
    if (text.empty()) continue;
    try {
      const json j = json::parse(text);
      CorpusLine cl;
      cl.image_path = j.at("image").get<std::string>();
      const auto& boxes = j.at("boxes");
      const auto& labels = j.at("labels");
      if (boxes.size() != labels.size()) throw DataError("boxes/labels length mismatch");
      for (std::size_t i = 0; i < boxes.size(); ++i) {
        const auto& b = boxes[i];
        cl.sample.gt.push_back({BBox{b.at(0).get<double>(), b.at(1).get<double>(),
                                     b.at(2).get<double>(), b.at(3).get<double>()},
                                labels[i].get<int>()});
      }
      const fs::path p = fs::path(cl.image_path).is_absolute() ? fs::path(cl.image_path) : dir / cl.image_path;
      cl.sample.image = read_ink_png(p);
      lines.push_back(std::move(cl));
    } catch (const json::exception& e) {
      throw DataError("annotations.jsonl:" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return lines;
}

Episode sample_episode(const Atlas& atlas, Split split, int n_way, int k_shot, Rng& rng,
                       const EpisodeConfig& cfg) {
  if (n_way < 1 || k_shot < 1) throw std::invalid_argument("sample_episode: n_way and k_shot must be >= 1");
  auto ids = atlas.class_ids(split);
  if (static_cast<int>(ids.size()) < n_way)
    throw DataError("sample_episode: " + std::to_string(n_way) + "-way requested but split has " +
                    std::to_string(ids.size()) + " classes");
  for (int id : ids) {
    if (static_cast<int>(atlas.at(id).support_pool.size()) < k_shot)
      throw DataError("sample_episode: class '" + atlas.at(id).name + "' support pool smaller than k_shot");
  }
  std::shuffle(ids.begin(), ids.end(), rng);
  Episode ep;
  ep.n_way = n_way;
  ep.k_shot = k_shot;
  ep.classes.assign(ids.begin(), ids.begin() + n_way);
  const std::vector<int> others(ids.begin() + n_way, ids.end());

  for (int id : ep.classes) {
    const auto& cls = atlas.at(id);
    auto pool = cls.support_pool;
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<Glyph> shots;
    for (int k = 0; k < k_shot; ++k) {
      const Glyph& g = cls.samples[pool[k]];
      shots.push_back(cfg.transform_supports ? transform_glyph(g, rng, cfg.transform) : g);
    }
    ep.supports.push_back(std::move(shots));
  }

  // every episode class appears in at least one query line
  std::vector<int> required = ep.classes;
  std::uniform_int_distribution<int> len_dist(cfg.min_symbols, cfg.max_symbols);
  std::uniform_int_distribution<std::size_t> way_dist(0, ep.classes.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ComposeConfig compose = cfg.compose;
  compose.min_symbols = std::min(compose.min_symbols, cfg.min_symbols);
  compose.max_symbols = std::max(compose.max_symbols, cfg.max_symbols);
  for (int l = 0; l < cfg.lines_per_episode; ++l) {
    int len = len_dist(rng);
    const int remaining_lines = cfg.lines_per_episode - l;
    const int must = static_cast<int>((required.size() + remaining_lines - 1) / remaining_lines);
    len = std::max(len, must);
    std::vector<int> slots;
    for (int k = 0; k < must; ++k) {
      slots.push_back(required.back());
      required.pop_back();
    }
    while (static_cast<int>(slots.size()) < len) {
      if (!others.empty() && unit(rng) < cfg.distractor_rate) {
        std::uniform_int_distribution<std::size_t> od(0, others.size() - 1);
        slots.push_back(others[od(rng)]);
      } else {
        slots.push_back(ep.classes[way_dist(rng)]);
      }
    }
    std::shuffle(slots.begin(), slots.end(), rng);
    std::vector<Glyph> glyphs;
    for (int id : slots) {
      const auto& cls = atlas.at(id);
      glyphs.push_back(transform_glyph(random_sample(cls, cls.query_pool, rng), rng, cfg.transform));
    }
    compose.max_symbols = std::max(compose.max_symbols, len);
    ep.queries.push_back(compose_line(glyphs, rng, compose));
  }
  return ep;
}

}  // namespace glyphspot
