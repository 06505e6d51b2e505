#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "glyphspot/geometry.hpp"
#include "oracles.hpp"

using namespace glyphspot;

namespace {

BBox random_int_box(std::mt19937_64& rng, int extent) {
  std::uniform_int_distribution<int> pos(0, extent), len(0, extent / 2);
  const int x = pos(rng), y = pos(rng);
  return {double(x), double(y), double(x + len(rng)), double(y + len(rng))};
}

}  // namespace

TEST_CASE("iou basic cases") {
  const BBox b{0, 0, 10, 10};
  CHECK(iou(b, b) == 1.0);
  CHECK(iou(b, {20, 20, 30, 30}) == 0.0);
  CHECK(iou(b, {5, 0, 15, 10}) == doctest::Approx(50.0 / 150.0).epsilon(1e-12));
  CHECK(iou({3, 3, 3, 8}, b) == 0.0);  // zero area
  CHECK(iou({0, 0, 0, 0}, {0, 0, 0, 0}) == 0.0);
}

TEST_CASE("iou is symmetric, bounded and matches the raster oracle") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 300; ++i) {
    const BBox a = random_int_box(rng, 30), b = random_int_box(rng, 30);
    const double v = iou(a, b);
    CHECK(v == iou(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(std::abs(v - oracle::raster_iou(a, b)) < 1e-9);
  }
}

TEST_CASE("nms examples") {
  CHECK(nms({{{0, 0, 10, 10}, 0, 0.5}}, 0.5).size() == 1);
  auto two = nms({{{0, 0, 10, 10}, 0, 0.8}, {{0, 0, 10, 10}, 0, 0.9}}, 0.5);
  REQUIRE(two.size() == 1);
  CHECK(two[0].score == 0.9);
  CHECK(nms({{{0, 0, 10, 10}, 0, 0.8}, {{20, 0, 30, 10}, 0, 0.9}}, 0.5).size() == 2);
  CHECK(nms({}, 0.5).empty());
}

TEST_CASE("nms equals the quadratic oracle and respects its post-conditions") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> count(0, 30);
  std::uniform_int_distribution<int> score_step(0, 10);  // coarse scores force ties
  for (int t = 0; t < 200; ++t) {
    std::vector<Detection> dets;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) dets.push_back({random_int_box(rng, 40), i % 2, score_step(rng) / 10.0});
    const double thr = t % 2 ? 0.3 : 0.7;
    const auto got = nms(dets, thr);
    const auto want = oracle::nms(dets, thr);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].box == want[i].box);
      CHECK(got[i].score == want[i].score);
    }
    for (std::size_t i = 0; i < got.size(); ++i)
      for (std::size_t j = i + 1; j < got.size(); ++j) CHECK(iou(got[i].box, got[j].box) < thr);
    CHECK(std::is_sorted(got.begin(), got.end(), detection_order));
  }
}

TEST_CASE("nms_indices points back into the input") {
  std::vector<Detection> dets{{{0, 0, 10, 10}, 0, 0.3}, {{1, 0, 11, 10}, 0, 0.9}, {{50, 0, 60, 10}, 0, 0.5}};
  const auto idx = nms_indices(dets, 0.5);
  REQUIRE(idx.size() == 2);
  CHECK(idx[0] == 1);
  CHECK(idx[1] == 2);
}

TEST_CASE("anchors") {
  const double s32[] = {32}, one[] = {1}, half[] = {0.5};
  auto a = generate_anchors(1, 1, 16, s32, one);
  REQUIRE(a.size() == 1);
  CHECK(a[0].center_x == 8.0);
  CHECK(a[0].center_y == 8.0);
  CHECK(a[0].width == doctest::Approx(32.0));
  CHECK(a[0].height == doctest::Approx(32.0));
  CHECK(generate_anchors(2, 1, 16, s32, one).size() == 2);
  auto r = generate_anchors(1, 1, 16, s32, half);
  CHECK(std::abs(r[0].height / r[0].width - 0.5) < 1e-6);

  const double scales[] = {16, 32, 64}, ratios[] = {0.5, 1, 2};
  auto grid = generate_anchors(4, 3, 8, scales, ratios);
  CHECK(grid.size() == 4u * 3u * 9u);
  // row-major over cells, then shape
  CHECK(grid[9].col == 1);
  CHECK(grid[9].row == 0);
  CHECK(grid[4 * 9].row == 1);
  CHECK(grid[10].shape == 1);
  CHECK_THROWS(generate_anchors(1, 1, 0, scales, ratios));
  CHECK_THROWS(generate_anchors(1, 1, 8, std::span<const double>(), ratios));
}

TEST_CASE("delta coding") {
  Anchor a{8, 8, 32, 32};
  const BoxDelta zero = encode_delta(a.box(), a);
  CHECK(zero.tx == 0.0);
  CHECK(zero.ty == 0.0);
  CHECK(zero.tw == 0.0);
  CHECK(zero.th == 0.0);
  const BoxDelta wide = encode_delta({8 - 32, 8 - 16, 8 + 32, 8 + 16}, a);
  CHECK(wide.tw == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(std::abs(wide.tx) < 1e-12);
  CHECK(std::abs(wide.th) < 1e-12);
  CHECK_THROWS(encode_delta({5, 5, 5, 9}, a));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 100), len(1, 60);
  for (int i = 0; i < 200; ++i) {
    const double x = u(rng), y = u(rng);
    const BBox b{x, y, x + len(rng), y + len(rng)};
    const Anchor an{u(rng), u(rng), len(rng), len(rng)};
    const BBox back = decode_delta(encode_delta(b, an), an);
    const double scale = std::max({std::abs(b.x1), std::abs(b.x2), std::abs(b.y1), std::abs(b.y2), 1.0});
    CHECK(std::abs(back.x1 - b.x1) <= 1e-6 * scale);
    CHECK(std::abs(back.y1 - b.y1) <= 1e-6 * scale);
    CHECK(std::abs(back.x2 - b.x2) <= 1e-6 * scale);
    CHECK(std::abs(back.y2 - b.y2) <= 1e-6 * scale);
  }
}

TEST_CASE("clip_box and anchor_from_box") {
  const BBox c = clip_box({-5, -2, 120, 70}, 100, 64);
  CHECK(c == BBox{0, 0, 100, 64});
  const Anchor a = anchor_from_box({10, 20, 30, 60});
  CHECK(a.center_x == 20.0);
  CHECK(a.center_y == 40.0);
  CHECK(a.width == 20.0);
  CHECK(a.height == 40.0);
}
