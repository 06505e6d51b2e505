#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "glyphspot/geometry.hpp"
#include "glyphspot/image.hpp"

namespace glyphspot {

using Rng = std::mt19937_64;

/// Deterministic child seed for item `index` of a run seeded with `seed`.
std::uint64_t child_seed(std::uint64_t seed, std::uint64_t index);

struct Glyph {
  Image image;  // trimmed to ink
  int class_id = -1;
  int alphabet_id = -1;
  int sample_index = -1;
};

enum class Split { Train, Test };
const char* split_name(Split s);

struct AtlasClass {
  std::string alphabet;
  std::string name;
  int class_id = -1;
  int alphabet_id = -1;
  Split split = Split::Train;
  std::vector<Glyph> samples;     // sorted by file name
  std::vector<int> query_pool;    // indices into samples
  std::vector<int> support_pool;  // indices into samples
};

/// Which alphabets (directory names) form the test split. If `test_alphabets`
/// is empty, the last `test_alphabet_count` alphabets in sorted order are used.
struct SplitSpec {
  std::vector<std::string> test_alphabets;
  int test_alphabet_count = 0;
};

struct Atlas {
  std::vector<std::string> alphabets;
  std::vector<Split> alphabet_split;
  std::vector<AtlasClass> classes;  // index == class_id

  std::vector<int> class_ids(Split s) const;
  const AtlasClass& at(int class_id) const { return classes.at(static_cast<std::size_t>(class_id)); }
};

/// Query/support pool sizes for a class with `n` samples: 7/10 (the middle
/// three unused) for 20 samples, otherwise max(1, floor(0.35 n)) and the rest.
std::pair<int, int> pool_sizes(int n);

/// Loads root/alphabet/class/sample.png. Class ids follow sorted path order.
Atlas load_atlas(const std::filesystem::path& root, const SplitSpec& split);

struct TransformConfig {
  double probability = 0.5;  // per transform, independent
  double scale_min = 0.7;
  double scale_max = 1.3;
  double max_rotation_deg = 15.0;
};

/// Random resize, rotation and 1 px dilation/erosion, each applied with
/// `cfg.probability`. Always draws the same number of random values.
Glyph transform_glyph(const Glyph& g, Rng& rng, const TransformConfig& cfg = {});

struct ComposeConfig {
  int line_height = 64;
  int max_glyph_height = 56;
  int overlap_max = 8;  // gaps are drawn from [-overlap_max, gap_max)
  int gap_max = 12;
  int vertical_jitter = 6;
  int margin = 8;
  int min_symbols = 5;
  int max_symbols = 50;
  bool interline_strokes = false;  // ascender/descender bits from neighbouring lines
  double interline_probability = 0.5;
};

struct GroundTruth {
  BBox box;
  int class_id = -1;
};

struct LineSample {
  Image image;
  std::vector<GroundTruth> gt;  // placement (left-to-right) order
};

/// Places glyphs left to right with random gaps/overlaps and vertical jitter,
/// compositing ink by max. Requires min_symbols <= |glyphs| <= max_symbols.
LineSample compose_line(std::span<const Glyph> glyphs, Rng& rng, const ComposeConfig& cfg = {});

struct CorpusConfig {
  ComposeConfig compose;
  TransformConfig transform;
};

struct CorpusManifest {
  std::uint64_t seed = 0;
  std::string config_hash;
  int n_lines = 0;
  std::string split = "train";
};

/// Writes n_lines composed lines (from the split's query pools) to `out_dir`:
/// lines/line_NNNNNN.png, annotations.jsonl, manifest.json, classes.json.
CorpusManifest generate_corpus(const Atlas& atlas, int n_lines, std::uint64_t seed,
                               const CorpusConfig& cfg, const std::filesystem::path& out_dir,
                               Split split = Split::Train);

/// "alphabet.class", also used as the support directory name.
std::string class_label(const AtlasClass& c);

struct CorpusLine {
  std::string image_path;
  LineSample sample;
};
std::vector<CorpusLine> read_corpus(const std::filesystem::path& dir);
void write_annotations(const std::vector<CorpusLine>& lines, const std::filesystem::path& file);

struct EpisodeConfig {
  int lines_per_episode = 1;
  int min_symbols = 5;
  int max_symbols = 50;
  double distractor_rate = 0.0;  // share of query symbols from non-episode classes
  bool transform_supports = true;
  ComposeConfig compose;
  TransformConfig transform;
};

struct Episode {
  int n_way = 0;
  int k_shot = 0;
  std::vector<int> classes;                  // n_way class ids
  std::vector<std::vector<Glyph>> supports;  // [n_way][k_shot]
  std::vector<LineSample> queries;
};

Episode sample_episode(const Atlas& atlas, Split split, int n_way, int k_shot, Rng& rng,
                       const EpisodeConfig& cfg = {});

/// Procedural stand-in for a handwritten symbol collection.
struct SyntheticAtlasConfig {
  int alphabets = 40;
  int classes_per_alphabet = 1;
  int samples_per_class = 20;
  std::uint64_t seed = 7;
};
void write_synthetic_atlas(const std::filesystem::path& root, const SyntheticAtlasConfig& cfg);

}  // namespace glyphspot
