#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "glyphspot/datagen.hpp"

// Procedural symbol collection: each class is a fixed skeleton of 2-4 strokes
// (segments, arcs, curves, loops, dots) inside a unit box; each sample renders
// the skeleton with small control-point jitter, a slight affine wobble and a
// pen-width change, much like different writers copying the same symbol.
namespace glyphspot {

namespace {

struct Pt {
  double x, y;
};

using Polyline = std::vector<Pt>;

enum class StrokeKind { Segment, Arc, Curve, Loop, Dot, Hook };

struct Stroke {
  StrokeKind kind;
  std::vector<Pt> ctrl;  // meaning depends on kind
  double a0 = 0, a1 = 0;  // arc angles
};

struct AlphabetStyle {
  double pen = 2.5;    // stroke width in pixels
  double size = 34;    // nominal glyph box in pixels
  double curviness = 0.5;
  double aspect = 1.0;  // width / height of the unit box
};

struct ClassSkeleton {
  std::vector<Stroke> strokes;
};

double urand(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Pt rand_pt(Rng& rng) { return {urand(rng, 0.05, 0.95), urand(rng, 0.05, 0.95)}; }

Stroke make_stroke(Rng& rng, const AlphabetStyle& style) {
  const double u = urand(rng, 0, 1);
  Stroke s;
  if (u < 0.30 * (1.0 - style.curviness) + 0.12) {
    s.kind = StrokeKind::Segment;
    Pt a = rand_pt(rng), b = rand_pt(rng);
    // keep segments reasonably long
    while (std::hypot(a.x - b.x, a.y - b.y) < 0.45) b = rand_pt(rng);
    s.ctrl = {a, b};
  } else if (u < 0.55) {
    s.kind = StrokeKind::Arc;
    s.ctrl = {{urand(rng, 0.3, 0.7), urand(rng, 0.3, 0.7)}, {urand(rng, 0.2, 0.4), 0}};
    s.a0 = urand(rng, 0, 2 * std::numbers::pi);
    s.a1 = s.a0 + urand(rng, 0.6, 1.6) * std::numbers::pi;
  } else if (u < 0.75) {
    s.kind = StrokeKind::Curve;
    s.ctrl = {rand_pt(rng), rand_pt(rng), rand_pt(rng), rand_pt(rng)};
  } else if (u < 0.85) {
    s.kind = StrokeKind::Loop;
    s.ctrl = {{urand(rng, 0.3, 0.7), urand(rng, 0.3, 0.7)}, {urand(rng, 0.12, 0.25), urand(rng, 0.12, 0.25)}};
  } else if (u < 0.92) {
    s.kind = StrokeKind::Dot;
    s.ctrl = {rand_pt(rng)};
  } else {
    s.kind = StrokeKind::Hook;
    Pt a = rand_pt(rng);
    Pt b{std::clamp(a.x + urand(rng, -0.5, 0.5), 0.05, 0.95), std::clamp(a.y + urand(rng, 0.3, 0.6), 0.05, 0.95)};
    Pt c{std::clamp(b.x + urand(rng, -0.35, 0.35), 0.05, 0.95), std::clamp(b.y - urand(rng, 0.1, 0.3), 0.05, 0.95)};
    s.ctrl = {a, b, c};
  }
  return s;
}

ClassSkeleton make_skeleton(Rng& rng, const AlphabetStyle& style) {
  ClassSkeleton sk;
  const int n = std::uniform_int_distribution<int>(2, 4)(rng);
  int dots = 0;
  while (static_cast<int>(sk.strokes.size()) < n) {
    Stroke s = make_stroke(rng, style);
    if (s.kind == StrokeKind::Dot && (dots > 0 || sk.strokes.empty())) continue;
    dots += s.kind == StrokeKind::Dot;
    sk.strokes.push_back(std::move(s));
  }
  return sk;
}

Polyline flatten(const Stroke& s) {
  Polyline p;
  constexpr int kSteps = 24;
  switch (s.kind) {
    case StrokeKind::Segment:
      p = {s.ctrl[0], s.ctrl[1]};
      break;
    case StrokeKind::Arc: {
      const Pt c = s.ctrl[0];
      const double r = s.ctrl[1].x;
      for (int i = 0; i <= kSteps; ++i) {
        const double a = s.a0 + (s.a1 - s.a0) * i / kSteps;
        p.push_back({c.x + r * std::cos(a), c.y + r * std::sin(a)});
      }
      break;
    }
    case StrokeKind::Curve: {
      const auto& q = s.ctrl;
      for (int i = 0; i <= kSteps; ++i) {
        const double t = static_cast<double>(i) / kSteps, m = 1 - t;
        p.push_back({m * m * m * q[0].x + 3 * m * m * t * q[1].x + 3 * m * t * t * q[2].x + t * t * t * q[3].x,
                     m * m * m * q[0].y + 3 * m * m * t * q[1].y + 3 * m * t * t * q[2].y + t * t * t * q[3].y});
      }
      break;
    }
    case StrokeKind::Loop: {
      const Pt c = s.ctrl[0], r = s.ctrl[1];
      for (int i = 0; i <= kSteps; ++i) {
        const double a = 2 * std::numbers::pi * i / kSteps;
        p.push_back({c.x + r.x * std::cos(a), c.y + r.y * std::sin(a)});
      }
      break;
    }
    case StrokeKind::Dot:
      p = {s.ctrl[0], {s.ctrl[0].x + 0.02, s.ctrl[0].y + 0.02}};
      break;
    case StrokeKind::Hook:
      p = {s.ctrl[0], s.ctrl[1], s.ctrl[2]};
      break;
  }
  return p;
}

double segment_distance(Pt p, Pt a, Pt b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

Image render_sample(const ClassSkeleton& sk, const AlphabetStyle& style, Rng& rng) {
  constexpr double kJitter = 0.035;
  std::normal_distribution<double> jitter(0.0, kJitter);
  // per-sample affine wobble
  const double sx = urand(rng, 0.92, 1.08), sy = urand(rng, 0.92, 1.08);
  const double shear = urand(rng, -0.08, 0.08);
  const double pen = style.pen * urand(rng, 0.85, 1.15);
  const double box_h = style.size, box_w = style.size * style.aspect;

  std::vector<Polyline> lines;
  for (const auto& s : sk.strokes) {
    Stroke js = s;
    for (auto& c : js.ctrl) {
      if (s.kind == StrokeKind::Arc || s.kind == StrokeKind::Loop) {
        if (&c != &js.ctrl[0]) continue;  // only move the center
      }
      c.x += jitter(rng);
      c.y += jitter(rng);
    }
    js.a0 += jitter(rng) * 3;
    js.a1 += jitter(rng) * 3;
    Polyline p = flatten(js);
    for (auto& q : p) {
      const double ux = (q.x - 0.5) * sx + shear * (q.y - 0.5);
      const double uy = (q.y - 0.5) * sy;
      q = {(ux + 0.5) * box_w, (uy + 0.5) * box_h};
    }
    lines.push_back(std::move(p));
  }

  // canvas around the actual strokes so nothing is clipped
  double lx = 1e9, ly = 1e9, hx = -1e9, hy = -1e9;
  for (const auto& l : lines)
    for (const auto& q : l) {
      lx = std::min(lx, q.x), ly = std::min(ly, q.y);
      hx = std::max(hx, q.x), hy = std::max(hy, q.y);
    }
  const int pad = static_cast<int>(std::ceil(pen)) + 3;
  const int w = static_cast<int>(std::ceil(hx - lx)) + 2 * pad;
  const int h = static_cast<int>(std::ceil(hy - ly)) + 2 * pad;
  Image img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Pt p{x + 0.5 - pad + lx, y + 0.5 - pad + ly};
      double d = 1e9;
      for (const auto& l : lines)
        for (std::size_t i = 0; i + 1 < l.size(); ++i) d = std::min(d, segment_distance(p, l[i], l[i + 1]));
      const double v = std::clamp(0.5 * pen + 0.5 - d, 0.0, 1.0);
      img.at(x, y) = static_cast<float>(v);
    }
  }
  return img;
}

}  // namespace

void write_synthetic_atlas(const std::filesystem::path& root, const SyntheticAtlasConfig& cfg) {
  namespace fs = std::filesystem;
  if (cfg.alphabets < 1 || cfg.classes_per_alphabet < 1 || cfg.samples_per_class < 2)
    throw std::invalid_argument("write_synthetic_atlas: bad sizes");
  for (int a = 0; a < cfg.alphabets; ++a) {
    Rng arng(child_seed(cfg.seed, static_cast<std::uint64_t>(a)));
    AlphabetStyle style;
    style.pen = urand(arng, 2.0, 3.6);
    style.size = urand(arng, 28, 40);
    style.curviness = urand(arng, 0.0, 1.0);
    style.aspect = urand(arng, 0.75, 1.15);
    char aname[32];
    std::snprintf(aname, sizeof(aname), "alphabet_%02d", a);
    for (int c = 0; c < cfg.classes_per_alphabet; ++c) {
      Rng crng(child_seed(arng(), static_cast<std::uint64_t>(c)));
      const ClassSkeleton sk = make_skeleton(crng, style);
      char cname[32];
      std::snprintf(cname, sizeof(cname), "character%02d", c + 1);
      const fs::path dir = root / aname / cname;
      fs::create_directories(dir);
      for (int s = 0; s < cfg.samples_per_class; ++s) {
        char sname[32];
        std::snprintf(sname, sizeof(sname), "sample_%02d.png", s + 1);
        write_ink_png(render_sample(sk, style, crng), dir / sname);
      }
    }
  }
}

}  // namespace glyphspot
