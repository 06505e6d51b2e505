#include <algorithm>
#include <set>

#include "doctest.h"
#include "glyphspot/datagen.hpp"
#include "test_util.hpp"

using namespace glyphspot;
using testutil::TempDir;

namespace {

struct SmallAtlas {
  TempDir dir{"atlas"};
  Atlas atlas;
  SmallAtlas() {
    SyntheticAtlasConfig cfg;
    cfg.alphabets = 8;
    cfg.classes_per_alphabet = 2;
    cfg.samples_per_class = 20;
    cfg.seed = 3;
    write_synthetic_atlas(dir.path(), cfg);
    SplitSpec split;
    split.test_alphabet_count = 3;
    atlas = load_atlas(dir.path(), split);
  }
};

const SmallAtlas& small_atlas() {
  static SmallAtlas a;
  return a;
}

Glyph glyph(int w, int h, int cls) {
  Glyph g;
  g.image = testutil::block(w, h);
  g.class_id = cls;
  return g;
}

bool trimmed(const Image& img) {
  auto b = ink_bounds(img);
  return b && *b == PixelRect{0, 0, img.width, img.height};
}

}  // namespace

TEST_CASE("pool sizes") {
  CHECK(pool_sizes(20) == std::pair{7, 10});
  CHECK(pool_sizes(4) == std::pair{1, 3});
  CHECK(pool_sizes(2) == std::pair{1, 1});
  CHECK(pool_sizes(10) == std::pair{3, 7});
}

TEST_CASE("load_atlas assigns ids, splits and disjoint pools") {
  const Atlas& atlas = small_atlas().atlas;
  REQUIRE(atlas.classes.size() == 16);
  std::set<std::string> train_alpha, test_alpha;
  for (std::size_t i = 0; i < atlas.classes.size(); ++i) {
    const auto& c = atlas.classes[i];
    CHECK(c.class_id == static_cast<int>(i));
    CHECK(c.samples.size() == 20);
    CHECK(c.query_pool.size() == 7);
    CHECK(c.support_pool.size() == 10);
    std::set<int> q(c.query_pool.begin(), c.query_pool.end());
    for (int s : c.support_pool) CHECK(q.count(s) == 0);
    for (const auto& g : c.samples) {
      CHECK(g.class_id == c.class_id);
      CHECK(trimmed(g.image));
    }
    (c.split == Split::Train ? train_alpha : test_alpha).insert(c.alphabet);
    if (i > 0) CHECK(std::pair(atlas.classes[i - 1].alphabet, atlas.classes[i - 1].name) < std::pair(c.alphabet, c.name));
  }
  CHECK(test_alpha.size() == 3);
  CHECK(train_alpha.size() == 5);
  for (const auto& a : test_alpha) CHECK(train_alpha.count(a) == 0);
  // the last alphabets in sorted order are held out
  CHECK(atlas.classes.back().split == Split::Test);
  CHECK(atlas.classes.front().split == Split::Train);
  CHECK(atlas.class_ids(Split::Test).size() == 6);
}

TEST_CASE("load_atlas errors") {
  TempDir empty("empty");
  CHECK_THROWS_AS(load_atlas(empty.path(), {}), DataError);
  CHECK_THROWS_AS(load_atlas(empty / "missing", {}), DataError);

  TempDir one("one");
  std::filesystem::create_directories(one / "alpha/char");
  write_ink_png(testutil::block(4, 4), one / "alpha/char/s1.png");
  CHECK_THROWS_AS(load_atlas(one.path(), {}), DataError);

  SplitSpec bad;
  bad.test_alphabets = {"nope"};
  CHECK_THROWS_AS(load_atlas(small_atlas().dir.path(), bad), DataError);
}

TEST_CASE("transform_glyph") {
  const Glyph& g = small_atlas().atlas.at(0).samples[0];
  TransformConfig off;
  off.probability = 0;
  Rng r0(1);
  CHECK(transform_glyph(g, r0, off).image == g.image);

  Rng a(42), b(42);
  CHECK(transform_glyph(g, a, {}).image == transform_glyph(g, b, {}).image);

  Rng r(5);
  for (int i = 0; i < 50; ++i) {
    const Glyph t = transform_glyph(g, r, {});
    CHECK(trimmed(t.image));
    CHECK(t.class_id == g.class_id);
  }
  // a one-pixel glyph survives erosion
  TransformConfig always;
  always.probability = 1.0;
  Rng r1(9);
  for (int i = 0; i < 20; ++i) CHECK(ink_bounds(transform_glyph(glyph(1, 1, 0), r1, always).image));

  TransformConfig bad;
  bad.scale_min = 2.0;
  bad.scale_max = 1.0;
  CHECK_THROWS_AS(transform_glyph(g, r, bad), std::invalid_argument);
}

TEST_CASE("compose_line: abutting boxes with zero gaps") {
  ComposeConfig cfg;
  cfg.overlap_max = 0;
  cfg.gap_max = 1;  // floor of [0, 1) is always 0
  cfg.vertical_jitter = 0;
  std::vector<Glyph> glyphs(5, glyph(10, 20, 3));
  Rng rng(1);
  const LineSample line = compose_line(glyphs, rng, cfg);
  REQUIRE(line.gt.size() == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(line.gt[i].box == BBox{8.0 + 10 * i, 22, 18.0 + 10 * i, 42});
    CHECK(line.gt[i].class_id == 3);
  }
  CHECK(line.image.width == 8 + 50 + 8);
  CHECK(line.image.height == 64);

  std::vector<Glyph> many(51, glyph(3, 3, 0));
  CHECK_THROWS_AS(compose_line(many, rng, {}), std::invalid_argument);
  std::vector<Glyph> few(4, glyph(3, 3, 0));
  CHECK_THROWS_AS(compose_line(few, rng, {}), std::invalid_argument);
}

TEST_CASE("compose_line matches an independent placement re-simulation") {
  const Atlas& atlas = small_atlas().atlas;
  const ComposeConfig cfg;
  Rng pick(17);
  for (int t = 0; t < 100; ++t) {
    std::vector<Glyph> glyphs;
    const int n = 5 + static_cast<int>(pick() % 46);
    for (int i = 0; i < n; ++i) {
      const auto& c = atlas.classes[pick() % atlas.classes.size()];
      glyphs.push_back(c.samples[pick() % c.samples.size()]);
    }
    Rng rng(static_cast<std::uint64_t>(t));
    const LineSample line = compose_line(glyphs, rng, cfg);

    Rng sim(static_cast<std::uint64_t>(t));
    std::uniform_real_distribution<double> gap(-8, 12);
    std::uniform_int_distribution<int> jit(-6, 6);
    int x = 8, prev_x = 0, prev_w = 0, right = 0;
    REQUIRE(line.gt.size() == glyphs.size());
    for (int i = 0; i < n; ++i) {
      const int w = glyphs[i].image.width, h = glyphs[i].image.height;
      REQUIRE(h <= 56);
      if (i > 0) {
        const int gp = static_cast<int>(std::floor(gap(sim)));
        x = std::max(prev_x + prev_w + gp, prev_x + 1);
      }
      const int y = std::clamp((64 - h) / 2 + jit(sim), 0, 64 - h);
      CHECK(line.gt[i].box == BBox{double(x), double(y), double(x + w), double(y + h)});
      CHECK(line.gt[i].class_id == glyphs[i].class_id);
      prev_x = x;
      prev_w = w;
      right = std::max(right, x + w);
    }
    CHECK(line.image.width == right + 8);
    for (const auto& g : line.gt) {
      CHECK(g.box.x1 >= 0);
      CHECK(g.box.y1 >= 0);
      CHECK(g.box.x2 <= line.image.width);
      CHECK(g.box.y2 <= line.image.height);
    }
    for (std::size_t i = 1; i < line.gt.size(); ++i) CHECK(line.gt[i - 1].box.x1 < line.gt[i].box.x1);

    // the line is the pixelwise max of the placed glyphs
    Image expect(line.image.width, 64);
    for (int i = 0; i < n; ++i) paste_max(expect, glyphs[i].image, int(line.gt[i].box.x1), int(line.gt[i].box.y1));
    CHECK(expect == line.image);
  }
}

TEST_CASE("compose_line overlaps about 40% of neighbours by default") {
  std::vector<Glyph> glyphs(50, glyph(12, 30, 0));
  Rng rng(123);
  int overlaps = 0, pairs = 0;
  for (int t = 0; t < 40; ++t) {
    const LineSample line = compose_line(glyphs, rng, {});
    for (std::size_t i = 1; i < line.gt.size(); ++i, ++pairs) overlaps += line.gt[i].box.x1 < line.gt[i - 1].box.x2;
  }
  CHECK(static_cast<double>(overlaps) / pairs == doctest::Approx(0.4).epsilon(0.1));
}

TEST_CASE("generate_corpus writes a deterministic corpus") {
  const Atlas& atlas = small_atlas().atlas;
  TempDir a("corpus_a"), b("corpus_b"), z("corpus_z");
  CorpusConfig cfg;
  cfg.compose.max_symbols = 12;
  const auto m = generate_corpus(atlas, 6, 99, cfg, a.path());
  generate_corpus(atlas, 6, 99, cfg, b.path());
  CHECK(m.n_lines == 6);
  CHECK(m.seed == 99);
  CHECK(m.split == "train");
  CHECK(m.config_hash.size() == 16);
  for (const char* f : {"annotations.jsonl", "manifest.json", "classes.json"})
    CHECK(testutil::slurp(a / f) == testutil::slurp(b / f));
  int images = 0;
  for (const auto& e : std::filesystem::directory_iterator(a / "lines")) {
    ++images;
    CHECK(testutil::slurp(e.path()) == testutil::slurp(b / ("lines/" + e.path().filename().string())));
  }
  CHECK(images == 6);

  const auto lines = read_corpus(a.path());
  REQUIRE(lines.size() == 6);
  const auto train = atlas.class_ids(Split::Train);
  for (const auto& l : lines) {
    CHECK(l.sample.gt.size() >= 5);
    CHECK(l.sample.gt.size() <= 12);
    CHECK(l.sample.image.height == 64);
    for (const auto& g : l.sample.gt) {
      CHECK(std::count(train.begin(), train.end(), g.class_id) == 1);
      CHECK(g.box.x2 <= l.sample.image.width);
    }
  }

  const auto empty = generate_corpus(atlas, 0, 1, cfg, z.path());
  CHECK(empty.n_lines == 0);
  CHECK(read_corpus(z.path()).empty());
  CHECK(testutil::slurp(z / "manifest.json").find("\"n_lines\": 0") != std::string::npos);
}

TEST_CASE("sample_episode") {
  const Atlas& atlas = small_atlas().atlas;
  const auto train = atlas.class_ids(Split::Train);
  Rng rng(4);
  EpisodeConfig cfg;
  cfg.max_symbols = 15;
  for (int t = 0; t < 30; ++t) {
    const Split split = t % 2 ? Split::Test : Split::Train;
    const int k = t % 3 == 0 ? 5 : 1;
    const Episode ep = sample_episode(atlas, split, 5, k, rng, cfg);
    CHECK(ep.classes.size() == 5);
    CHECK(std::set<int>(ep.classes.begin(), ep.classes.end()).size() == 5);
    REQUIRE(ep.supports.size() == 5);
    std::size_t crops = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      crops += ep.supports[c].size();
      for (const auto& g : ep.supports[c]) CHECK(g.class_id == ep.classes[c]);
    }
    CHECK(crops == 5u * k);
    std::set<int> seen;
    for (const auto& q : ep.queries)
      for (const auto& g : q.gt) {
        seen.insert(g.class_id);
        CHECK(std::count(ep.classes.begin(), ep.classes.end(), g.class_id) == 1);
      }
    CHECK(seen.size() == 5);
    for (int id : ep.classes) CHECK(atlas.at(id).split == split);
    if (split == Split::Test)
      for (int id : ep.classes) CHECK(std::count(train.begin(), train.end(), id) == 0);
  }
  CHECK_THROWS_AS(sample_episode(atlas, Split::Test, 7, 1, rng), DataError);
  CHECK_THROWS_AS(sample_episode(atlas, Split::Train, 5, 11, rng), DataError);
  CHECK_THROWS_AS(sample_episode(atlas, Split::Train, 0, 1, rng), std::invalid_argument);
}
