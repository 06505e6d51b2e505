#include "glyphspot/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace glyphspot::ops {

namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using MapRC = Eigen::Map<const MatR<T>>;

constexpr std::size_t kIm2colBudget = std::size_t{1} << 22;  // elements per chunk

struct ConvGeom {
  int h, w, ci, k, co, stride, pad, ho, wo;
};

template <typename T>
void im2col(const T* x, const ConvGeom& g, int p0, int n, T* col) {
  const int kdim = g.k * g.k * g.ci;
  for (int r = 0; r < n; ++r) {
    const int p = p0 + r;
    const int oy = p / g.wo, ox = p % g.wo;
    T* dst = col + static_cast<std::size_t>(r) * kdim;
    for (int ky = 0; ky < g.k; ++ky) {
      const int iy = oy * g.stride - g.pad + ky;
      for (int kx = 0; kx < g.k; ++kx) {
        const int ix = ox * g.stride - g.pad + kx;
        T* cell = dst + (ky * g.k + kx) * g.ci;
        if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
          std::fill_n(cell, g.ci, T(0));
        } else {
          std::copy_n(x + (static_cast<std::size_t>(iy) * g.w + ix) * g.ci, g.ci, cell);
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, int p0, int n, T* dx) {
  const int kdim = g.k * g.k * g.ci;
  for (int r = 0; r < n; ++r) {
    const int p = p0 + r;
    const int oy = p / g.wo, ox = p % g.wo;
    const T* src = col + static_cast<std::size_t>(r) * kdim;
    for (int ky = 0; ky < g.k; ++ky) {
      const int iy = oy * g.stride - g.pad + ky;
      if (iy < 0 || iy >= g.h) continue;
      for (int kx = 0; kx < g.k; ++kx) {
        const int ix = ox * g.stride - g.pad + kx;
        if (ix < 0 || ix >= g.w) continue;
        const T* cell = src + (ky * g.k + kx) * g.ci;
        T* d = dx + (static_cast<std::size_t>(iy) * g.w + ix) * g.ci;
        for (int c = 0; c < g.ci; ++c) d[c] += cell[c];
      }
    }
  }
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

bool is_channel_vector(const std::vector<int>& s, int channels) {
  if (s.empty() || s.back() != channels) return false;
  for (std::size_t i = 0; i + 1 < s.size(); ++i)
    if (s[i] != 1) return false;
  return true;
}

}  // namespace

RoiBins roi_bins(const BBox& box, int feat_w, int feat_h, int out) {
  RoiBins b;
  b.x0 = std::clamp(static_cast<int>(std::lround(box.x1)), 0, feat_w);
  b.x1 = std::clamp(static_cast<int>(std::lround(box.x2)), 0, feat_w);
  b.y0 = std::clamp(static_cast<int>(std::lround(box.y1)), 0, feat_h);
  b.y1 = std::clamp(static_cast<int>(std::lround(box.y2)), 0, feat_h);
  if (b.x1 - b.x0 < 1 || b.y1 - b.y0 < 1)
    throw std::invalid_argument("roi_pool: degenerate box after clipping");
  const int lw = b.x1 - b.x0, lh = b.y1 - b.y0;
  b.xs.resize(static_cast<std::size_t>(out) + 1);
  b.ys.resize(static_cast<std::size_t>(out) + 1);
  for (int i = 0; i <= out; ++i) {
    // round(i * L / out), halves rounded up
    b.xs[i] = b.x0 + (2 * i * lw + out) / (2 * out);
    b.ys[i] = b.y0 + (2 * i * lh + out) / (2 * out);
  }
  return b;
}

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var weights, Var bias, int stride, int padding) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(weights);
  const auto& bv = tape.value(bias);
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(0) != wv.dim(1) || wv.dim(2) != xv.dim(2))
    throw_shape_error("conv2d", xv.shape(), wv.shape());
  if (bv.size() != static_cast<std::size_t>(wv.dim(3)))
    throw_shape_error("conv2d(bias)", wv.shape(), bv.shape());
  if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: bad stride or padding");
  ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), wv.dim(0), wv.dim(3), stride, padding, 0, 0};
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k)
    throw_shape_error("conv2d(input smaller than kernel)", xv.shape(), wv.shape());
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;

  const int kdim = g.k * g.k * g.ci;
  const int npix = g.ho * g.wo;
  const bool pointwise = g.k == 1 && g.stride == 1 && g.pad == 0;
  const int chunk = std::max<int>(64, static_cast<int>(kIm2colBudget / kdim));

  Tensor<T> y({g.ho, g.wo, g.co});
  {
    MapRC<T> wmat(wv.data(), kdim, g.co);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> brow(bv.data(), g.co);
    AlignedVector<T> col;
    for (int p0 = 0; p0 < npix; p0 += chunk) {
      const int n = std::min(chunk, npix - p0);
      const T* colp = xv.data() + static_cast<std::size_t>(p0) * kdim;
      if (!pointwise) {
        col.resize(static_cast<std::size_t>(n) * kdim);
        im2col(xv.data(), g, p0, n, col.data());
        colp = col.data();
      }
      MapR<T> ymat(y.data() + static_cast<std::size_t>(p0) * g.co, n, g.co);
      ymat.noalias() = MapRC<T>(colp, n, kdim) * wmat;
      ymat.rowwise() += brow;
    }
  }

  return tape.emit(std::move(y), {x, weights, bias}, [&tape, x, weights, bias, g, pointwise, chunk,
                                                      kdim, npix](Var out) {
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(weights);
    const auto& dy = tape.grad(out);
    const bool need_w = tape.requires_grad(weights);
    const bool need_b = tape.requires_grad(bias);
    const bool need_x = tape.requires_grad(x);
    MapRC<T> wmat(wv.data(), kdim, g.co);
    AlignedVector<T> col, dcol;
    for (int p0 = 0; p0 < npix; p0 += chunk) {
      const int n = std::min(chunk, npix - p0);
      MapRC<T> dymat(dy.data() + static_cast<std::size_t>(p0) * g.co, n, g.co);
      if (need_w) {
        const T* colp = xv.data() + static_cast<std::size_t>(p0) * kdim;
        if (!pointwise) {
          col.resize(static_cast<std::size_t>(n) * kdim);
          im2col(xv.data(), g, p0, n, col.data());
          colp = col.data();
        }
        MapR<T> dw(tape.grad(weights).data(), kdim, g.co);
        dw.noalias() += MapRC<T>(colp, n, kdim).transpose() * dymat;
      }
      if (need_b) {
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(tape.grad(bias).data(), g.co);
        db += dymat.colwise().sum();
      }
      if (need_x) {
        if (pointwise) {
          MapR<T> dx(tape.grad(x).data() + static_cast<std::size_t>(p0) * kdim, n, kdim);
          dx.noalias() += dymat * wmat.transpose();
        } else {
          dcol.resize(static_cast<std::size_t>(n) * kdim);
          MapR<T> dc(dcol.data(), n, kdim);
          dc.noalias() = dymat * wmat.transpose();
          col2im_add(dcol.data(), g, p0, n, tape.grad(x).data());
        }
      }
    }
  });
}

template <typename T>
Var maxpool2(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  if (xv.rank() != 3 || xv.dim(0) < 2 || xv.dim(1) < 2)
    throw_shape_error("maxpool2", xv.shape(), {2, 2});
  const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  const int ho = h / 2, wo = w / 2;
  Tensor<T> y({ho, wo, c});
  auto argmax = std::make_shared<std::vector<int>>(y.size());
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      for (int ch = 0; ch < c; ++ch) {
        int best = -1;
        T best_v = -std::numeric_limits<T>::infinity();
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = ((2 * oy + dy) * w + (2 * ox + dx)) * c + ch;
            if (xv[idx] > best_v) {
              best_v = xv[idx];
              best = idx;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(oy) * wo + ox) * c + ch;
        y[o] = best_v;
        (*argmax)[o] = best;
      }
    }
  }
  return tape.emit(std::move(y), {x}, [&tape, x, argmax](Var out) {
    const auto& dy = tape.grad(out);
    auto& dx = tape.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[(*argmax)[i]] += dy[i];
  });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  Tensor<T> y = tape.value(x);
  for (auto& v : y.values()) v = v > T(0) ? v : T(0);
  return tape.emit(std::move(y), {x}, [&tape, x](Var out) {
    const auto& yv = tape.value(out);
    const auto& dy = tape.grad(out);
    auto& dx = tape.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (yv[i] > T(0)) dx[i] += dy[i];
  });
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var x) {
  Tensor<T> y = tape.value(x);
  for (auto& v : y.values()) v = T(1) / (T(1) + std::exp(-v));
  return tape.emit(std::move(y), {x}, [&tape, x](Var out) {
    const auto& yv = tape.value(out);
    const auto& dy = tape.grad(out);
    auto& dx = tape.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * yv[i] * (T(1) - yv[i]);
  });
}

template <typename T>
Var fc(Tape<T>& tape, Var x, Var weights, Var bias) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(weights);
  const auto& bv = tape.value(bias);
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0))
    throw_shape_error("fc", xv.shape(), wv.shape());
  if (bv.size() != static_cast<std::size_t>(wv.dim(1)))
    throw_shape_error("fc(bias)", wv.shape(), bv.shape());
  const int r = xv.dim(0), f = xv.dim(1), o = wv.dim(1);
  Tensor<T> y({r, o});
  MapR<T> ym(y.data(), r, o);
  ym.noalias() = MapRC<T>(xv.data(), r, f) * MapRC<T>(wv.data(), f, o);
  ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bv.data(), o);
  return tape.emit(std::move(y), {x, weights, bias}, [&tape, x, weights, bias, r, f, o](Var out) {
    MapRC<T> dy(tape.grad(out).data(), r, o);
    if (tape.requires_grad(weights)) {
      MapR<T> dw(tape.grad(weights).data(), f, o);
      dw.noalias() += MapRC<T>(tape.value(x).data(), r, f).transpose() * dy;
    }
    if (tape.requires_grad(bias)) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(tape.grad(bias).data(), o);
      db += dy.colwise().sum();
    }
    if (tape.requires_grad(x)) {
      MapR<T> dx(tape.grad(x).data(), r, f);
      dx.noalias() += dy * MapRC<T>(tape.value(weights).data(), f, o).transpose();
    }
  });
}

template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  if (xv.rank() != 3 || xv.size() == 0) throw_shape_error("global_avg_pool", xv.shape(), {});
  const int c = xv.dim(2);
  const std::size_t cells = xv.size() / c;
  Tensor<T> y({1, 1, c});
  for (std::size_t i = 0; i < cells; ++i)
    for (int ch = 0; ch < c; ++ch) y[ch] += xv[i * c + ch];
  for (int ch = 0; ch < c; ++ch) y[ch] /= static_cast<T>(cells);
  return tape.emit(std::move(y), {x}, [&tape, x, c, cells](Var out) {
    const auto& dy = tape.grad(out);
    auto& dx = tape.grad(x);
    const T inv = T(1) / static_cast<T>(cells);
    for (std::size_t i = 0; i < cells; ++i)
      for (int ch = 0; ch < c; ++ch) dx[i * c + ch] += dy[ch] * inv;
  });
}

template <typename T>
Var elem_mul(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  const bool same = av.shape() == bv.shape();
  const int c = av.rank() > 0 ? av.shape().back() : 0;
  if (!same && !is_channel_vector(bv.shape(), c)) throw_shape_error("elem_mul", av.shape(), bv.shape());
  Tensor<T> y(av.shape());
  if (same) {
    for (std::size_t i = 0; i < av.size(); ++i) y[i] = av[i] * bv[i];
  } else {
    for (std::size_t i = 0; i < av.size(); ++i) y[i] = bv[i % c] * av[i];
  }
  return tape.emit(std::move(y), {a, b}, [&tape, a, b, same, c](Var out) {
    const auto& av = tape.value(a);
    const auto& bv = tape.value(b);
    const auto& dy = tape.grad(out);
    if (tape.requires_grad(a)) {
      auto& da = tape.grad(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[same ? i : i % c];
    }
    if (tape.requires_grad(b)) {
      auto& db = tape.grad(b);
      for (std::size_t i = 0; i < dy.size(); ++i) db[same ? i : i % c] += dy[i] * av[i];
    }
  });
}

template <typename T>
Var elem_sub(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  const bool same = av.shape() == bv.shape();
  bool broadcast = false;
  if (!same && av.rank() == bv.rank() && av.rank() > 0 && bv.dim(0) == 1) {
    broadcast = true;
    for (int i = 1; i < av.rank(); ++i) broadcast = broadcast && av.dim(i) == bv.dim(i);
  }
  if (!same && !broadcast) throw_shape_error("elem_sub", av.shape(), bv.shape());
  const std::size_t inner = bv.size();
  Tensor<T> y(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) y[i] = av[i] - bv[i % inner];
  return tape.emit(std::move(y), {a, b}, [&tape, a, b, inner](Var out) {
    const auto& dy = tape.grad(out);
    if (tape.requires_grad(a)) add_into(tape.grad(a), dy);
    if (tape.requires_grad(b)) {
      auto& db = tape.grad(b);
      for (std::size_t i = 0; i < dy.size(); ++i) db[i % inner] -= dy[i];
    }
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  if (av.shape() != bv.shape()) throw_shape_error("add", av.shape(), bv.shape());
  Tensor<T> y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return tape.emit(std::move(y), {a, b}, [&tape, a, b](Var out) {
    const auto& dy = tape.grad(out);
    if (tape.requires_grad(a)) add_into(tape.grad(a), dy);
    if (tape.requires_grad(b)) add_into(tape.grad(b), dy);
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor) {
  Tensor<T> y = tape.value(a);
  for (auto& v : y.values()) v *= factor;
  return tape.emit(std::move(y), {a}, [&tape, a, factor](Var out) {
    const auto& dy = tape.grad(out);
    auto& da = tape.grad(a);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * factor;
  });
}

template <typename T>
Var mean(Tape<T>& tape, std::span<const Var> xs) {
  if (xs.empty()) throw std::invalid_argument("mean: no inputs");
  if (xs.size() == 1) return xs[0];
  Tensor<T> y = tape.value(xs[0]);
  for (std::size_t k = 1; k < xs.size(); ++k) {
    const auto& v = tape.value(xs[k]);
    if (v.shape() != y.shape()) throw_shape_error("mean", y.shape(), v.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += v[i];
  }
  const T inv = T(1) / static_cast<T>(xs.size());
  for (auto& v : y.values()) v *= inv;
  std::vector<Var> inputs(xs.begin(), xs.end());
  // emit takes a fixed list; depend on any input that needs a gradient and
  // let the closure handle every input.
  Var dep = inputs[0];
  for (Var v : inputs)
    if (tape.requires_grad(v)) dep = v;
  return tape.emit(std::move(y), {dep}, [&tape, inputs, inv](Var out) {
    const auto& dy = tape.grad(out);
    for (Var v : inputs) {
      if (!tape.requires_grad(v)) continue;
      auto& dv = tape.grad(v);
      for (std::size_t i = 0; i < dy.size(); ++i) dv[i] += dy[i] * inv;
    }
  });
}

template <typename T>
Var reshape(Tape<T>& tape, Var x, std::vector<int> shape) {
  Tensor<T> y = tape.value(x).reshaped(std::move(shape));
  return tape.emit(std::move(y), {x}, [&tape, x](Var out) { add_into(tape.grad(x), tape.grad(out)); });
}

template <typename T>
Var roi_pool(Tape<T>& tape, Var features, std::span<const BBox> boxes, int out) {
  const auto& fv = tape.value(features);
  if (fv.rank() != 3) throw_shape_error("roi_pool", fv.shape(), {out, out});
  const int fh = fv.dim(0), fw = fv.dim(1), c = fv.dim(2);
  const int r = static_cast<int>(boxes.size());
  Tensor<T> y({r, out, out, c});
  auto argmax = std::make_shared<std::vector<int>>(y.size(), -1);
  std::vector<T> best(static_cast<std::size_t>(c));
  std::vector<int> best_idx(static_cast<std::size_t>(c));
  for (int ri = 0; ri < r; ++ri) {
    const RoiBins bins = roi_bins(boxes[ri], fw, fh, out);
    for (int py = 0; py < out; ++py) {
      for (int px = 0; px < out; ++px) {
        const std::size_t o = ((static_cast<std::size_t>(ri) * out + py) * out + px) * c;
        const int ys = bins.ys[py], ye = bins.ys[py + 1];
        const int xs = bins.xs[px], xe = bins.xs[px + 1];
        if (ys >= ye || xs >= xe) continue;  // empty bin stays 0
        std::fill(best.begin(), best.end(), -std::numeric_limits<T>::infinity());
        for (int yy = ys; yy < ye; ++yy) {
          for (int xx = xs; xx < xe; ++xx) {
            const int base = (yy * fw + xx) * c;
            for (int ch = 0; ch < c; ++ch) {
              if (fv[base + ch] > best[ch]) {
                best[ch] = fv[base + ch];
                best_idx[ch] = base + ch;
              }
            }
          }
        }
        for (int ch = 0; ch < c; ++ch) {
          y[o + ch] = best[ch];
          (*argmax)[o + ch] = best_idx[ch];
        }
      }
    }
  }
  return tape.emit(std::move(y), {features}, [&tape, features, argmax](Var out) {
    const auto& dy = tape.grad(out);
    auto& df = tape.grad(features);
    for (std::size_t i = 0; i < dy.size(); ++i)
      if ((*argmax)[i] >= 0) df[(*argmax)[i]] += dy[i];
  });
}

namespace {
struct BilinearTap {
  int idx[4];
  double w[4];
};
}  // namespace

template <typename T>
Var roi_align(Tape<T>& tape, Var features, std::span<const BBox> boxes, int out) {
  const auto& fv = tape.value(features);
  if (fv.rank() != 3) throw_shape_error("roi_align", fv.shape(), {out, out});
  const int fh = fv.dim(0), fw = fv.dim(1), c = fv.dim(2);
  const int r = static_cast<int>(boxes.size());
  constexpr int kSamples = 2;
  Tensor<T> y({r, out, out, c});
  // per output bin: kSamples^2 taps, cell offsets (channel 0)
  auto taps = std::make_shared<std::vector<BilinearTap>>();
  taps->reserve(static_cast<std::size_t>(r) * out * out * kSamples * kSamples);
  for (int ri = 0; ri < r; ++ri) {
    const BBox& b = boxes[ri];
    const double bw = std::max(b.width(), 1e-6) / out, bh = std::max(b.height(), 1e-6) / out;
    for (int py = 0; py < out; ++py) {
      for (int px = 0; px < out; ++px) {
        const std::size_t o = ((static_cast<std::size_t>(ri) * out + py) * out + px) * c;
        for (int sy = 0; sy < kSamples; ++sy) {
          for (int sx = 0; sx < kSamples; ++sx) {
            // cell centers sit at integer + 0.5
            const double u = std::clamp(b.x1 + (px + (sx + 0.5) / kSamples) * bw - 0.5, 0.0, fw - 1.0);
            const double v = std::clamp(b.y1 + (py + (sy + 0.5) / kSamples) * bh - 0.5, 0.0, fh - 1.0);
            const int x0 = static_cast<int>(u), y0 = static_cast<int>(v);
            const int x1 = std::min(x0 + 1, fw - 1), y1 = std::min(y0 + 1, fh - 1);
            const double ax = u - x0, ay = v - y0;
            const double norm = 1.0 / (kSamples * kSamples);
            BilinearTap t{{(y0 * fw + x0) * c, (y0 * fw + x1) * c, (y1 * fw + x0) * c, (y1 * fw + x1) * c},
                          {(1 - ax) * (1 - ay) * norm, ax * (1 - ay) * norm, (1 - ax) * ay * norm,
                           ax * ay * norm}};
            for (int k = 0; k < 4; ++k)
              for (int ch = 0; ch < c; ++ch) y[o + ch] += static_cast<T>(t.w[k]) * fv[t.idx[k] + ch];
            taps->push_back(t);
          }
        }
      }
    }
  }
  return tape.emit(std::move(y), {features}, [&tape, features, taps, c](Var out) {
    const auto& dy = tape.grad(out);
    auto& df = tape.grad(features);
    constexpr int per_bin = kSamples * kSamples;
    for (std::size_t t = 0; t < taps->size(); ++t) {
      const std::size_t o = (t / per_bin) * c;
      const auto& tap = (*taps)[t];
      for (int k = 0; k < 4; ++k)
        for (int ch = 0; ch < c; ++ch) df[tap.idx[k] + ch] += static_cast<T>(tap.w[k]) * dy[o + ch];
    }
  });
}

template <typename T>
Var sigmoid_bce(Tape<T>& tape, Var logits, std::span<const T> labels, std::span<const T> weights,
                T normalizer) {
  const auto& z = tape.value(logits);
  if (labels.size() != z.size() || weights.size() != z.size())
    throw_shape_error("sigmoid_bce", z.shape(), {static_cast<int>(labels.size())});
  if (!(normalizer > T(0))) throw std::invalid_argument("sigmoid_bce: normalizer must be > 0");
  T total = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (weights[i] == T(0)) continue;
    const T zi = z[i];
    total += weights[i] * (std::max(zi, T(0)) - zi * labels[i] + std::log1p(std::exp(-std::abs(zi))));
  }
  std::vector<T> lab(labels.begin(), labels.end()), wts(weights.begin(), weights.end());
  return tape.emit(Tensor<T>({1}, {total / normalizer}), {logits},
                   [&tape, logits, lab = std::move(lab), wts = std::move(wts), normalizer](Var out) {
                     const T g = tape.grad(out)[0] / normalizer;
                     const auto& z = tape.value(logits);
                     auto& dz = tape.grad(logits);
                     for (std::size_t i = 0; i < z.size(); ++i) {
                       if (wts[i] == T(0)) continue;
                       const T p = T(1) / (T(1) + std::exp(-z[i]));
                       dz[i] += g * wts[i] * (p - lab[i]);
                     }
                   });
}

template <typename T>
Var smooth_l1(Tape<T>& tape, Var pred, const Tensor<T>& target, std::span<const T> weights,
              T normalizer, T beta) {
  const auto& pv = tape.value(pred);
  if (pv.shape() != target.shape() || pv.rank() != 2 || weights.size() != static_cast<std::size_t>(pv.dim(0)))
    throw_shape_error("smooth_l1", pv.shape(), target.shape());
  if (!(normalizer > T(0))) throw std::invalid_argument("smooth_l1: normalizer must be > 0");
  const int n = pv.dim(0), d = pv.dim(1);
  T total = 0;
  for (int i = 0; i < n; ++i) {
    if (weights[i] == T(0)) continue;
    for (int j = 0; j < d; ++j) {
      const T diff = std::abs(pv[i * d + j] - target[i * d + j]);
      total += weights[i] * (diff < beta ? T(0.5) * diff * diff / beta : diff - T(0.5) * beta);
    }
  }
  std::vector<T> wts(weights.begin(), weights.end());
  return tape.emit(Tensor<T>({1}, {total / normalizer}), {pred},
                   [&tape, pred, target, wts = std::move(wts), normalizer, beta, n, d](Var out) {
                     const T g = tape.grad(out)[0] / normalizer;
                     const auto& pv = tape.value(pred);
                     auto& dp = tape.grad(pred);
                     for (int i = 0; i < n; ++i) {
                       if (wts[i] == T(0)) continue;
                       for (int j = 0; j < d; ++j) {
                         const T diff = pv[i * d + j] - target[i * d + j];
                         const T slope = std::abs(diff) < beta ? diff / beta : (diff > 0 ? T(1) : T(-1));
                         dp[i * d + j] += g * wts[i] * slope;
                       }
                     }
                   });
}

#define GLYPHSPOT_INSTANTIATE_OPS(T)                                                               \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var, int, int);                                       \
  template Var maxpool2<T>(Tape<T>&, Var);                                                         \
  template Var relu<T>(Tape<T>&, Var);                                                             \
  template Var sigmoid<T>(Tape<T>&, Var);                                                          \
  template Var fc<T>(Tape<T>&, Var, Var, Var);                                                     \
  template Var global_avg_pool<T>(Tape<T>&, Var);                                                  \
  template Var elem_mul<T>(Tape<T>&, Var, Var);                                                    \
  template Var elem_sub<T>(Tape<T>&, Var, Var);                                                    \
  template Var add<T>(Tape<T>&, Var, Var);                                                         \
  template Var scale<T>(Tape<T>&, Var, T);                                                         \
  template Var mean<T>(Tape<T>&, std::span<const Var>);                                            \
  template Var reshape<T>(Tape<T>&, Var, std::vector<int>);                                        \
  template Var roi_pool<T>(Tape<T>&, Var, std::span<const BBox>, int);                             \
  template Var roi_align<T>(Tape<T>&, Var, std::span<const BBox>, int);                            \
  template Var sigmoid_bce<T>(Tape<T>&, Var, std::span<const T>, std::span<const T>, T);           \
  template Var smooth_l1<T>(Tape<T>&, Var, const Tensor<T>&, std::span<const T>, T, T);

GLYPHSPOT_INSTANTIATE_OPS(float)
GLYPHSPOT_INSTANTIATE_OPS(double)

}  // namespace glyphspot::ops
