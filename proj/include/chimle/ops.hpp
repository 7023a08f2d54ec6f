#pragma once

// Differentiable tensor operations recorded on a BasicTape.
//
// Image tensors are NCHW. Every op checks shapes eagerly and throws
// DimensionError naming the offending shapes.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "chimle/tape.hpp"

namespace chimle {

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kAdainEpsilon = 1e-5;
inline constexpr double kWeightNormMinNorm = 1e-12;

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

inline void require_rank(const Shape& s, std::size_t r, const char* op, const char* arg) {
  require(s.size() == r, std::string(op) + ": " + arg + " must have rank " + std::to_string(r) +
                             ", got " + shape_str(s));
}

template <typename T>
void add_into(std::vector<T>& dst, const std::vector<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

struct ConvGeometry {
  std::size_t ci, h, w, kh, kw, stride, pad, ho, wo;
  std::size_t rows() const { return ci * kh * kw; }
  std::size_t cols() const { return ho * wo; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t p = g.cols();
  for (std::size_t c = 0; c < g.ci; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = cols + ((c * g.kh + ky) * g.kw + kx) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          T* out = row + oy * g.wo;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(out, out + g.wo, T(0));
            continue;
          }
          const T* in = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            out[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : in[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t p = g.cols();
  for (std::size_t c = 0; c < g.ci; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* out = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* in = row + oy * g.wo;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// y = xW + b for x[n,in], W[in,out], b[out].
template <typename T>
Var dense(BasicTape<T>& tape, Var x, Var W, Var b) {
  const Shape& xs = tape.shape(x);
  const Shape& ws = tape.shape(W);
  const Shape& bs = tape.shape(b);
  detail::require(xs.size() == 2 && ws.size() == 2 && bs.size() == 1 && xs[1] == ws[0] && bs[0] == ws[1],
                  "dense: incompatible shapes x" + shape_str(xs) + " W" + shape_str(ws) + " b" + shape_str(bs));
  const std::size_t n = xs[0], in = xs[1], out = ws[1];
  BasicTensor<T> y(Shape{n, out});
  {
    detail::MapMat<T> Y(y.data.data(), n, out);
    Y.noalias() = detail::CMapMat<T>(tape.value(x).data.data(), n, in) *
                  detail::CMapMat<T>(tape.value(W).data.data(), in, out);
    const auto& bv = tape.value(b).data;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < out; ++c) Y(r, c) += bv[c];
  }
  return tape.record(std::move(y), {x, W, b}, [x, W, b, n, in, out](BasicTape<T>& t, std::uint32_t self) {
    detail::CMapMat<T> dY(t.grad(self).data(), n, out);
    if (t.needs_grad(x)) {
      detail::MapMat<T> dX(t.grad(x).data(), n, in);
      dX.noalias() += dY * detail::CMapMat<T>(t.value(W).data.data(), in, out).transpose();
    }
    if (t.needs_grad(W)) {
      detail::MapMat<T> dW(t.grad(W).data(), in, out);
      dW.noalias() += detail::CMapMat<T>(t.value(x).data.data(), n, in).transpose() * dY;
    }
    if (t.needs_grad(b)) {
      auto& db = t.grad(b);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < out; ++c) db[c] += dY(r, c);
    }
  });
}

/// Cross-correlation of x[n,ci,h,w] with K[co,ci,kh,kw].
template <typename T>
Var conv2d(BasicTape<T>& tape, Var x, Var K, std::size_t stride = 1, std::size_t pad = 0) {
  const Shape& xs = tape.shape(x);
  const Shape& ks = tape.shape(K);
  detail::require_rank(xs, 4, "conv2d", "input");
  detail::require_rank(ks, 4, "conv2d", "kernel");
  detail::require(xs[1] == ks[1], "conv2d: channel mismatch between input" + shape_str(xs) + " and kernel" +
                                      shape_str(ks));
  detail::require(stride >= 1, "conv2d: stride must be positive");
  detail::require(xs[2] + 2 * pad >= ks[2] && xs[3] + 2 * pad >= ks[3],
                  "conv2d: kernel" + shape_str(ks) + " larger than padded input" + shape_str(xs));
  const std::size_t n = xs[0], co = ks[0];
  detail::ConvGeometry g{xs[1], xs[2], xs[3], ks[2], ks[3], stride, pad,
                         (xs[2] + 2 * pad - ks[2]) / stride + 1, (xs[3] + 2 * pad - ks[3]) / stride + 1};
  BasicTensor<T> y(Shape{n, co, g.ho, g.wo});
  std::vector<T> cols(g.rows() * g.cols());
  const auto& xv = tape.value(x).data;
  detail::CMapMat<T> Km(tape.value(K).data.data(), co, g.rows());
  for (std::size_t b = 0; b < n; ++b) {
    detail::im2col(xv.data() + b * g.ci * g.h * g.w, g, cols.data());
    detail::MapMat<T>(y.data.data() + b * co * g.cols(), co, g.cols()).noalias() =
        Km * detail::CMapMat<T>(cols.data(), g.rows(), g.cols());
  }
  return tape.record(std::move(y), {x, K}, [x, K, n, co, g](BasicTape<T>& t, std::uint32_t self) {
    const auto& gy = t.grad(self);
    const auto& xv = t.value(x).data;
    detail::CMapMat<T> Km(t.value(K).data.data(), co, g.rows());
    std::vector<T> cols(g.rows() * g.cols());
    const bool want_k = t.needs_grad(K), want_x = t.needs_grad(x);
    for (std::size_t b = 0; b < n; ++b) {
      detail::CMapMat<T> dY(gy.data() + b * co * g.cols(), co, g.cols());
      if (want_k) {
        detail::im2col(xv.data() + b * g.ci * g.h * g.w, g, cols.data());
        detail::MapMat<T>(t.grad(K).data(), co, g.rows()).noalias() +=
            dY * detail::CMapMat<T>(cols.data(), g.rows(), g.cols()).transpose();
      }
      if (want_x) {
        detail::MapMat<T>(cols.data(), g.rows(), g.cols()).noalias() = Km.transpose() * dY;
        detail::col2im_add(cols.data(), g, t.grad(x).data() + b * g.ci * g.h * g.w);
      }
    }
  });
}

/// "Same" 3x3 (or any odd) convolution at stride 1.
template <typename T>
Var conv2d_same(BasicTape<T>& tape, Var x, Var K) {
  const Shape& ks = tape.shape(K);
  detail::require_rank(ks, 4, "conv2d", "kernel");
  detail::require(ks[2] % 2 == 1 && ks[3] == ks[2], "conv2d_same: kernel must be square and odd, got " +
                                                        shape_str(ks));
  return conv2d(tape, x, K, 1, ks[2] / 2);
}

/// W = g * v / ||v|| with the norm taken per output row (first axis of v).
template <typename T>
Var weight_norm(BasicTape<T>& tape, Var v, Var g) {
  const Shape& vs = tape.shape(v);
  const Shape& gs = tape.shape(g);
  detail::require(!vs.empty() && gs.size() == 1 && gs[0] == vs[0],
                  "weight_norm: gain" + shape_str(gs) + " does not match direction" + shape_str(vs));
  const std::size_t rows = vs[0];
  const std::size_t per = tape.value(v).numel() / rows;
  const auto& vv = tape.value(v).data;
  const auto& gv = tape.value(g).data;
  std::vector<T> norms(rows);
  BasicTensor<T> w(vs);
  for (std::size_t r = 0; r < rows; ++r) {
    T ss = 0;
    for (std::size_t i = 0; i < per; ++i) ss += vv[r * per + i] * vv[r * per + i];
    const T norm = std::sqrt(ss);
    if (!(norm >= T(kWeightNormMinNorm))) {
      throw NumericalError("weight_norm: direction row " + std::to_string(r) + " has degenerate norm " +
                           std::to_string(static_cast<double>(norm)));
    }
    norms[r] = norm;
    for (std::size_t i = 0; i < per; ++i) w.data[r * per + i] = gv[r] * vv[r * per + i] / norm;
  }
  return tape.record(std::move(w), {v, g}, [v, g, rows, per, norms](BasicTape<T>& t, std::uint32_t self) {
    const auto& dw = t.grad(self);
    const auto& vv = t.value(v).data;
    const auto& gv = t.value(g).data;
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t i = 0; i < per; ++i) dot += dw[r * per + i] * vv[r * per + i];
      const T n = norms[r];
      if (t.needs_grad(g)) t.grad(g)[r] += dot / n;
      if (t.needs_grad(v)) {
        auto& dv = t.grad(v);
        const T a = gv[r] / n;
        const T c = dot / (n * n);
        for (std::size_t i = 0; i < per; ++i) dv[r * per + i] += a * (dw[r * per + i] - c * vv[r * per + i]);
      }
    }
  });
}

/// Instance-normalize each (sample, channel) plane, then apply scale and offset.
template <typename T>
Var adain(BasicTape<T>& tape, Var x, Var scale, Var offset) {
  const Shape& xs = tape.shape(x);
  detail::require_rank(xs, 4, "adain", "features");
  const std::size_t n = xs[0], c = xs[1], hw = xs[2] * xs[3];
  detail::require(tape.shape(scale) == Shape{n, c} && tape.shape(offset) == Shape{n, c},
                  "adain: scale" + shape_str(tape.shape(scale)) + " / offset" + shape_str(tape.shape(offset)) +
                      " must be [n,c] for features" + shape_str(xs));
  if (hw == 1) throw DimensionError("adain: spatial size 1x1 has undefined variance");
  const auto& xv = tape.value(x).data;
  const auto& sv = tape.value(scale).data;
  const auto& ov = tape.value(offset).data;
  std::vector<T> xhat(xv.size());
  std::vector<T> inv_std(n * c);
  BasicTensor<T> y(xs);
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* in = xv.data() + p * hw;
    T mean = 0;
    for (std::size_t i = 0; i < hw; ++i) mean += in[i];
    mean /= T(hw);
    T var = 0;
    for (std::size_t i = 0; i < hw; ++i) var += (in[i] - mean) * (in[i] - mean);
    var /= T(hw);
    const T is = T(1) / std::sqrt(var + T(kAdainEpsilon));
    inv_std[p] = is;
    for (std::size_t i = 0; i < hw; ++i) {
      const T h = (in[i] - mean) * is;
      xhat[p * hw + i] = h;
      y.data[p * hw + i] = sv[p] * h + ov[p];
    }
  }
  return tape.record(std::move(y), {x, scale, offset},
                     [x, scale, offset, n, c, hw, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                         BasicTape<T>& t, std::uint32_t self) {
                       const auto& dy = t.grad(self);
                       const auto& sv = t.value(scale).data;
                       for (std::size_t p = 0; p < n * c; ++p) {
                         const T* gy = dy.data() + p * hw;
                         const T* h = xhat.data() + p * hw;
                         T sum_dy = 0, sum_dy_h = 0;
                         for (std::size_t i = 0; i < hw; ++i) {
                           sum_dy += gy[i];
                           sum_dy_h += gy[i] * h[i];
                         }
                         if (t.needs_grad(scale)) t.grad(scale)[p] += sum_dy_h;
                         if (t.needs_grad(offset)) t.grad(offset)[p] += sum_dy;
                         if (t.needs_grad(x)) {
                           T* dx = t.grad(x).data() + p * hw;
                           const T k = sv[p] * inv_std[p] / T(hw);
                           for (std::size_t i = 0; i < hw; ++i) {
                             dx[i] += k * (T(hw) * gy[i] - sum_dy - h[i] * sum_dy_h);
                           }
                         }
                       }
                     });
}

template <typename T>
Var leaky_relu(BasicTape<T>& tape, Var x, double slope = kLeakySlope) {
  const auto& xv = tape.value(x).data;
  BasicTensor<T> y(tape.shape(x));
  const T s = static_cast<T>(slope);
  for (std::size_t i = 0; i < xv.size(); ++i) y.data[i] = xv[i] > T(0) ? xv[i] : s * xv[i];
  return tape.record(std::move(y), {x}, [x, s](BasicTape<T>& t, std::uint32_t self) {
    const auto& dy = t.grad(self);
    const auto& xv = t.value(x).data;
    auto& dx = t.grad(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += xv[i] > T(0) ? dy[i] : s * dy[i];
  });
}

template <typename T>
Var upsample_nearest2x(BasicTape<T>& tape, Var x) {
  const Shape& xs = tape.shape(x);
  detail::require_rank(xs, 4, "upsample_nearest2x", "input");
  const std::size_t planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  const auto& xv = tape.value(x).data;
  BasicTensor<T> y(Shape{xs[0], xs[1], 2 * h, 2 * w});
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < 2 * h; ++oy)
      for (std::size_t ox = 0; ox < 2 * w; ++ox)
        y.data[(p * 2 * h + oy) * 2 * w + ox] = xv[(p * h + oy / 2) * w + ox / 2];
  return tape.record(std::move(y), {x}, [x, planes, h, w](BasicTape<T>& t, std::uint32_t self) {
    const auto& dy = t.grad(self);
    auto& dx = t.grad(x);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t oy = 0; oy < 2 * h; ++oy)
        for (std::size_t ox = 0; ox < 2 * w; ++ox)
          dx[(p * h + oy / 2) * w + ox / 2] += dy[(p * 2 * h + oy) * 2 * w + ox];
  });
}

template <typename T>
Var downsample_avg2x(BasicTape<T>& tape, Var x) {
  const Shape& xs = tape.shape(x);
  detail::require_rank(xs, 4, "downsample_avg2x", "input");
  detail::require(xs[2] % 2 == 0 && xs[3] % 2 == 0,
                  "downsample_avg2x: spatial dims must be even, got " + shape_str(xs));
  const std::size_t planes = xs[0] * xs[1], h = xs[2] / 2, w = xs[3] / 2;
  const auto& xv = tape.value(x).data;
  BasicTensor<T> y(Shape{xs[0], xs[1], h, w});
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < h; ++oy)
      for (std::size_t ox = 0; ox < w; ++ox) {
        const T* r0 = xv.data() + (p * 2 * h + 2 * oy) * 2 * w + 2 * ox;
        const T* r1 = r0 + 2 * w;
        y.data[(p * h + oy) * w + ox] = (r0[0] + r0[1] + r1[0] + r1[1]) * T(0.25);
      }
  return tape.record(std::move(y), {x}, [x, planes, h, w](BasicTape<T>& t, std::uint32_t self) {
    const auto& dy = t.grad(self);
    auto& dx = t.grad(x);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t oy = 0; oy < 2 * h; ++oy)
        for (std::size_t ox = 0; ox < 2 * w; ++ox)
          dx[(p * 2 * h + oy) * 2 * w + ox] += dy[(p * h + oy / 2) * w + ox / 2] * T(0.25);
  });
}

/// Mean squared error, returned as a rank-0 tensor.
template <typename T>
Var mse(BasicTape<T>& tape, Var a, Var b) {
  detail::require(tape.shape(a) == tape.shape(b),
                  "mse: shape mismatch " + shape_str(tape.shape(a)) + " vs " + shape_str(tape.shape(b)));
  const auto& av = tape.value(a).data;
  const auto& bv = tape.value(b).data;
  T acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += (av[i] - bv[i]) * (av[i] - bv[i]);
  const T inv_n = T(1) / T(av.size());
  return tape.record(BasicTensor<T>::scalar(acc * inv_n), {a, b}, [a, b, inv_n](BasicTape<T>& t, std::uint32_t self) {
    const T gy = t.grad(self)[0];
    const auto& av = t.value(a).data;
    const auto& bv = t.value(b).data;
    const T k = T(2) * gy * inv_n;
    if (t.needs_grad(a)) {
      auto& da = t.grad(a);
      for (std::size_t i = 0; i < av.size(); ++i) da[i] += k * (av[i] - bv[i]);
    }
    if (t.needs_grad(b)) {
      auto& db = t.grad(b);
      for (std::size_t i = 0; i < av.size(); ++i) db[i] -= k * (av[i] - bv[i]);
    }
  });
}

template <typename T>
Var sum(BasicTape<T>& tape, Var x) {
  T acc = 0;
  for (T v : tape.value(x).data) acc += v;
  return tape.record(BasicTensor<T>::scalar(acc), {x}, [x](BasicTape<T>& t, std::uint32_t self) {
    const T gy = t.grad(self)[0];
    for (T& d : t.grad(x)) d += gy;
  });
}

template <typename T>
Var add(BasicTape<T>& tape, Var a, Var b) {
  detail::require(tape.shape(a) == tape.shape(b),
                  "add: shape mismatch " + shape_str(tape.shape(a)) + " vs " + shape_str(tape.shape(b)));
  BasicTensor<T> y = tape.value(a);
  y.requires_grad = false;
  y.grad.clear();
  const auto& bv = tape.value(b).data;
  for (std::size_t i = 0; i < bv.size(); ++i) y.data[i] += bv[i];
  return tape.record(std::move(y), {a, b}, [a, b](BasicTape<T>& t, std::uint32_t self) {
    const auto& dy = t.grad(self);
    if (t.needs_grad(a)) detail::add_into(t.grad(a), dy);
    if (t.needs_grad(b)) detail::add_into(t.grad(b), dy);
  });
}

/// Elementwise product.
template <typename T>
Var mul(BasicTape<T>& tape, Var a, Var b) {
  detail::require(tape.shape(a) == tape.shape(b),
                  "mul: shape mismatch " + shape_str(tape.shape(a)) + " vs " + shape_str(tape.shape(b)));
  const auto& av = tape.value(a).data;
  const auto& bv = tape.value(b).data;
  BasicTensor<T> y(tape.shape(a));
  for (std::size_t i = 0; i < av.size(); ++i) y.data[i] = av[i] * bv[i];
  return tape.record(std::move(y), {a, b}, [a, b](BasicTape<T>& t, std::uint32_t self) {
    const auto& dy = t.grad(self);
    const auto& av = t.value(a).data;
    const auto& bv = t.value(b).data;
    if (t.needs_grad(a)) {
      auto& da = t.grad(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      auto& db = t.grad(b);
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

/// y = s * x + c for scalars s, c.
template <typename T>
Var affine_scalar(BasicTape<T>& tape, Var x, double s, double c = 0.0) {
  BasicTensor<T> y(tape.shape(x));
  const auto& xv = tape.value(x).data;
  const T ss = static_cast<T>(s), cc = static_cast<T>(c);
  for (std::size_t i = 0; i < xv.size(); ++i) y.data[i] = ss * xv[i] + cc;
  return tape.record(std::move(y), {x}, [x, ss](BasicTape<T>& t, std::uint32_t self) {
    const auto& dy = t.grad(self);
    auto& dx = t.grad(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += ss * dy[i];
  });
}

/// Residual with scaled branch: base + beta * branch.
template <typename T>
Var scaled_residual(BasicTape<T>& tape, Var base, Var branch, double beta) {
  return add(tape, base, affine_scalar(tape, branch, beta));
}

/// Concatenate NCHW tensors along the channel axis.
template <typename T>
Var concat_channels(BasicTape<T>& tape, const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat_channels: no inputs");
  const Shape& s0 = tape.shape(parts[0]);
  detail::require_rank(s0, 4, "concat_channels", "input");
  std::size_t total_c = 0;
  for (Var p : parts) {
    const Shape& s = tape.shape(p);
    detail::require(s.size() == 4 && s[0] == s0[0] && s[2] == s0[2] && s[3] == s0[3],
                    "concat_channels: " + shape_str(s) + " incompatible with " + shape_str(s0));
    total_c += s[1];
  }
  if (parts.size() == 1) return parts[0];
  const std::size_t n = s0[0], hw = s0[2] * s0[3];
  BasicTensor<T> y(Shape{n, total_c, s0[2], s0[3]});
  std::vector<std::size_t> chans;
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t off = 0;
    for (Var p : parts) {
      const std::size_t c = tape.shape(p)[1];
      const auto& pv = tape.value(p).data;
      std::copy_n(pv.data() + b * c * hw, c * hw, y.data.data() + (b * total_c + off) * hw);
      off += c;
    }
  }
  for (Var p : parts) chans.push_back(tape.shape(p)[1]);
  return tape.record(std::move(y), parts, [parts, chans, n, hw, total_c](BasicTape<T>& t, std::uint32_t self) {
    const auto& dy = t.grad(self);
    for (std::size_t b = 0; b < n; ++b) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::size_t c = chans[k];
        if (t.needs_grad(parts[k])) {
          T* dx = t.grad(parts[k]).data() + b * c * hw;
          const T* src = dy.data() + (b * total_c + off) * hw;
          for (std::size_t i = 0; i < c * hw; ++i) dx[i] += src[i];
        }
        off += c;
      }
    }
  });
}

/// Adds bias[c] to every pixel of channel c.
template <typename T>
Var add_channel_bias(BasicTape<T>& tape, Var x, Var bias) {
  const Shape& xs = tape.shape(x);
  detail::require_rank(xs, 4, "add_channel_bias", "input");
  detail::require(tape.shape(bias) == Shape{xs[1]},
                  "add_channel_bias: bias" + shape_str(tape.shape(bias)) + " vs input" + shape_str(xs));
  const std::size_t n = xs[0], c = xs[1], hw = xs[2] * xs[3];
  BasicTensor<T> y = tape.value(x);
  y.requires_grad = false;
  y.grad.clear();
  const auto& bv = tape.value(bias).data;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) y.data[(b * c + ch) * hw + i] += bv[ch];
  return tape.record(std::move(y), {x, bias}, [x, bias, n, c, hw](BasicTape<T>& t, std::uint32_t self) {
    const auto& dy = t.grad(self);
    if (t.needs_grad(x)) detail::add_into(t.grad(x), dy);
    if (t.needs_grad(bias)) {
      auto& db = t.grad(bias);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t i = 0; i < hw; ++i) db[ch] += dy[(b * c + ch) * hw + i];
    }
  });
}

/// Columns [begin, end) of a matrix x[n,d].
template <typename T>
Var slice_columns(BasicTape<T>& tape, Var x, std::size_t begin, std::size_t end) {
  const Shape& xs = tape.shape(x);
  detail::require(xs.size() == 2 && begin < end && end <= xs[1],
                  "slice_columns: [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                      shape_str(xs));
  const std::size_t n = xs[0], d = xs[1], w = end - begin;
  const auto& xv = tape.value(x).data;
  BasicTensor<T> y(Shape{n, w});
  for (std::size_t r = 0; r < n; ++r) std::copy_n(xv.data() + r * d + begin, w, y.data.data() + r * w);
  return tape.record(std::move(y), {x}, [x, n, d, w, begin](BasicTape<T>& t, std::uint32_t self) {
    const auto& dy = t.grad(self);
    auto& dx = t.grad(x);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t i = 0; i < w; ++i) dx[r * d + begin + i] += dy[r * w + i];
  });
}

template <typename T>
Var reshape(BasicTape<T>& tape, Var x, Shape shape) {
  detail::require(shape_numel(shape) == tape.value(x).numel(),
                  "reshape: cannot view " + shape_str(tape.shape(x)) + " as " + shape_str(shape));
  BasicTensor<T> y(std::move(shape), tape.value(x).data);
  return tape.record(std::move(y), {x}, [x](BasicTape<T>& t, std::uint32_t self) {
    detail::add_into(t.grad(x), t.grad(self));
  });
}

}  // namespace chimle
