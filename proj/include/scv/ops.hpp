#pragma once

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scv/autodiff.hpp"

namespace scv {

enum class OpKind {
  conv2d,
  matmul,
  add,
  sub,
  mul,
  scale,
  relu,
  sigmoid,
  tanh,
  concat_channels,
  bilinear_upsample,
  slice,
  sum,
  mean,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::conv2d: return "conv2d";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::concat_channels: return "concat-channels";
    case OpKind::bilinear_upsample: return "bilinear-upsample";
    case OpKind::slice: return "slice";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
  }
  return "?";
}

struct OpAttrs {
  std::size_t stride = 1;   // conv2d
  std::size_t pad = 0;      // conv2d, zero padding on all sides
  std::size_t factor = 2;   // bilinear_upsample
  std::size_t axis = 1;     // slice
  std::size_t begin = 0;    // slice
  std::size_t end = 0;      // slice, exclusive
  double scale = 1.0;       // scale
};

template <class T>
void check_finite(const char* op, const Tensor<T>& t) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t[i]))
      throw NumericError(std::string("non-finite output from ") + op + " at flat index " +
                         std::to_string(i));
}

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeom {
  std::size_t n, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  [[nodiscard]] std::size_t patch() const { return cin * kh * kw; }
  [[nodiscard]] std::size_t pixels() const { return ho * wo; }
};

// Output columns [lo, hi) whose input column ox*stride + k - pad is in range.
inline std::pair<std::size_t, std::size_t> valid_span(std::size_t k, const ConvGeom& g, std::size_t in, std::size_t out) {
  const long off = long(k) - long(g.pad), s = long(g.stride);
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long hi = (long(in) - 1 - off) < 0 ? 0 : (long(in) - 1 - off) / s + 1;
  hi = std::min(hi, long(out));
  lo = std::min(lo, hi);
  return {std::size_t(lo), std::size_t(hi)};
}

// col is (cin*kh*kw) x (n*ho*wo), row major.
template <class T>
void im2col(const ConvGeom& g, const T* x, T* col) {
  const std::size_t cols = g.n * g.pixels();
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((ci * g.kh + ky) * g.kw + kx) * cols;
        const auto [xlo, xhi] = valid_span(kx, g, g.w, g.wo);
        const long xoff = long(kx) - long(g.pad);
        for (std::size_t n = 0; n < g.n; ++n) {
          const T* xc = x + (n * g.cin + ci) * g.h * g.w;
          T* dst = row + n * g.pixels();
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const long iy = long(oy * g.stride + ky) - long(g.pad);
            T* d = dst + oy * g.wo;
            if (iy < 0 || iy >= long(g.h)) {
              std::fill(d, d + g.wo, T(0));
              continue;
            }
            const T* xr = xc + std::size_t(iy) * g.w;
            std::fill(d, d + xlo, T(0));
            if (g.stride == 1) {
              std::copy(xr + long(xlo) + xoff, xr + long(xhi) + xoff, d + xlo);
            } else {
              for (std::size_t ox = xlo; ox < xhi; ++ox) d[ox] = xr[long(ox * g.stride) + xoff];
            }
            std::fill(d + xhi, d + g.wo, T(0));
          }
        }
      }
}

template <class T>
void col2im_add(const ConvGeom& g, const T* col, T* dx) {
  const std::size_t cols = g.n * g.pixels();
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((ci * g.kh + ky) * g.kw + kx) * cols;
        const auto [xlo, xhi] = valid_span(kx, g, g.w, g.wo);
        const long xoff = long(kx) - long(g.pad);
        for (std::size_t n = 0; n < g.n; ++n) {
          T* xc = dx + (n * g.cin + ci) * g.h * g.w;
          const T* src = row + n * g.pixels();
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const long iy = long(oy * g.stride + ky) - long(g.pad);
            if (iy < 0 || iy >= long(g.h)) continue;
            T* xr = xc + std::size_t(iy) * g.w;
            const T* s = src + oy * g.wo;
            if (g.stride == 1) {
              T* xo = xr + xoff;
              for (std::size_t ox = xlo; ox < xhi; ++ox) xo[ox] += s[ox];
            } else {
              for (std::size_t ox = xlo; ox < xhi; ++ox) xr[long(ox * g.stride) + xoff] += s[ox];
            }
          }
        }
      }
}

// Bilinear source taps for align_corners=false upsampling by an integer factor.
struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> w_hi;
};

inline Taps upsample_taps(std::size_t in, std::size_t factor) {
  Taps t;
  const std::size_t out = in * factor;
  t.lo.resize(out);
  t.hi.resize(out);
  t.w_hi.resize(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (double(o) + 0.5) / double(factor) - 0.5;
    if (src < 0) src = 0;
    auto lo = std::size_t(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    t.lo[o] = lo;
    t.hi[o] = hi;
    t.w_hi[o] = hi == lo ? 0.0 : src - double(lo);
  }
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) {
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    check_finite("add", out);
    return tape.record(std::move(out), {&a, &b}, [a, b](const Node<T>& self) {
      accumulate(a, [&](Tensor<T>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
      accumulate(b, [&](Tensor<T>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
    });
  }
  // Per-channel bias on NCHW.
  if (sa.size() == 4 && sb.size() == 1 && sb[0] == sa[1]) {
    const std::size_t n = sa[0], c = sa[1], hw = sa[2] * sa[3];
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) {
        T* p = out.ptr() + (i * c + ch) * hw;
        const T bias = b.value()[ch];
        for (std::size_t k = 0; k < hw; ++k) p[k] += bias;
      }
    check_finite("add", out);
    return tape.record(std::move(out), {&a, &b}, [a, b, n, c, hw](const Node<T>& self) {
      accumulate(a, [&](Tensor<T>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
      accumulate(b, [&](Tensor<T>& g) {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const T* p = self.grad.ptr() + (i * c + ch) * hw;
            T s = 0;
            for (std::size_t k = 0; k < hw; ++k) s += p[k];
            g[ch] += s;
          }
      });
    });
  }
  throw ShapeError("add", sa, sb);
}

template <class T>
Var<T> sub(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  require_shape("sub", a.shape(), b.shape());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  check_finite("sub", out);
  return tape.record(std::move(out), {&a, &b}, [a, b](const Node<T>& self) {
    accumulate(a, [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    accumulate(b, [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    });
  });
}

template <class T>
Var<T> mul(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  require_shape("mul", a.shape(), b.shape());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  check_finite("mul", out);
  return tape.record(std::move(out), {&a, &b}, [a, b](const Node<T>& self) {
    accumulate(a, [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b.value()[i];
    });
    accumulate(b, [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a.value()[i];
    });
  });
}

template <class T>
Var<T> scale(Tape<T>& tape, const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  check_finite("scale", out);
  return tape.record(std::move(out), {&a}, [a, s](const Node<T>& self) {
    accumulate(a, [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
  });
}

template <class T>
Var<T> relu(Tape<T>& tape, const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  check_finite("relu", out);
  return tape.record(std::move(out), {&a}, [a](const Node<T>& self) {
    accumulate(a, [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i)
        if (a.value()[i] > T(0)) g[i] += self.grad[i];
    });
  });
}

template <class T>
Var<T> sigmoid(Tape<T>& tape, const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = T(1) / (T(1) + std::exp(-v));
  check_finite("sigmoid", out);
  return tape.record(std::move(out), {&a}, [a](const Node<T>& self) {
    accumulate(a, [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T y = self.value[i];
        g[i] += self.grad[i] * y * (T(1) - y);
      }
    });
  });
}

template <class T>
Var<T> tanh(Tape<T>& tape, const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = std::tanh(v);
  check_finite("tanh", out);
  return tape.record(std::move(out), {&a}, [a](const Node<T>& self) {
    accumulate(a, [&](Tensor<T>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T y = self.value[i];
        g[i] += self.grad[i] * (T(1) - y * y);
      }
    });
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Var<T> sum(Tape<T>& tape, const Var<T>& a) {
  T s = 0;
  for (T v : a.value().data()) s += v;
  Tensor<T> out = Tensor<T>::scalar(s);
  check_finite("sum", out);
  return tape.record(std::move(out), {&a}, [a](const Node<T>& self) {
    accumulate(a, [&](Tensor<T>& g) {
      for (auto& v : g.data()) v += self.grad[0];
    });
  });
}

template <class T>
Var<T> mean(Tape<T>& tape, const Var<T>& a) {
  T s = 0;
  for (T v : a.value().data()) s += v;
  const T inv = T(1) / T(a.value().size());
  Tensor<T> out = Tensor<T>::scalar(s * inv);
  check_finite("mean", out);
  return tape.record(std::move(out), {&a}, [a, inv](const Node<T>& self) {
    accumulate(a, [&](Tensor<T>& g) {
      for (auto& v : g.data()) v += self.grad[0] * inv;
    });
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// (m,k) x (k,n) -> (m,n)
template <class T>
Var<T> matmul(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
  require_rank("matmul lhs", 2, a.shape());
  require_rank("matmul rhs", 2, b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul inner extent", Shape{k, n}, b.shape());
  Tensor<T> out(Shape{m, n});
  detail::MapMat<T>(out.ptr(), m, n).noalias() =
      detail::CMapMat<T>(a.value().ptr(), m, k) * detail::CMapMat<T>(b.value().ptr(), k, n);
  check_finite("matmul", out);
  return tape.record(std::move(out), {&a, &b}, [a, b, m, k, n](const Node<T>& self) {
    detail::CMapMat<T> go(self.grad.ptr(), m, n);
    accumulate(a, [&](Tensor<T>& g) {
      detail::MapMat<T>(g.ptr(), m, k).noalias() +=
          go * detail::CMapMat<T>(b.value().ptr(), k, n).transpose();
    });
    accumulate(b, [&](Tensor<T>& g) {
      detail::MapMat<T>(g.ptr(), k, n).noalias() +=
          detail::CMapMat<T>(a.value().ptr(), m, k).transpose() * go;
    });
  });
}

/// x: (N,Cin,H,W), weight: (Cout,Cin,kh,kw), bias: (Cout) or empty Var.
template <class T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
              std::size_t stride = 1, std::size_t pad = 0) {
  require_rank("conv2d input", 4, x.shape());
  require_rank("conv2d weight", 4, weight.shape());
  if (stride == 0) throw ShapeError("conv2d stride must be positive");
  detail::ConvGeom g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = pad;
  if (weight.dim(1) != g.cin)
    throw ShapeError("conv2d weight input channels", Shape{g.cout, g.cin, g.kh, g.kw},
                     weight.shape());
  if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw)
    throw ShapeError("conv2d kernel larger than padded input", Shape{g.kh, g.kw},
                     Shape{g.h + 2 * pad, g.w + 2 * pad});
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  if (bias) require_shape("conv2d bias", Shape{g.cout}, bias.shape());

  const std::size_t cols = g.n * g.pixels();
  std::unique_ptr<T[]> col(new T[g.patch() * cols]);
  detail::im2col(g, x.value().ptr(), col.get());
  detail::RowMat<T> tmp(g.cout, cols);
  tmp.noalias() = detail::CMapMat<T>(weight.value().ptr(), g.cout, g.patch()) *
                  detail::CMapMat<T>(col.get(), g.patch(), cols);

  Tensor<T> out(Shape{g.n, g.cout, g.ho, g.wo});
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t co = 0; co < g.cout; ++co) {
      const T b = bias ? bias.value()[co] : T(0);
      const T* src = tmp.data() + co * cols + n * g.pixels();
      T* dst = out.ptr() + (n * g.cout + co) * g.pixels();
      for (std::size_t p = 0; p < g.pixels(); ++p) dst[p] = src[p] + b;
    }
  check_finite("conv2d", out);

  const bool needs = x.requires_grad() || weight.requires_grad() || (bias && bias.requires_grad());
  return tape.record_if(std::move(out), needs, [x, weight, bias, g, cols](const Node<T>& self) {
    detail::RowMat<T> go(g.cout, cols);
    for (std::size_t n = 0; n < g.n; ++n)
      for (std::size_t co = 0; co < g.cout; ++co) {
        const T* src = self.grad.ptr() + (n * g.cout + co) * g.pixels();
        std::copy(src, src + g.pixels(), go.data() + co * cols + n * g.pixels());
      }
    if (bias && bias.requires_grad()) {
      Tensor<T>& gb = bias.node()->grad_buffer();
      for (std::size_t co = 0; co < g.cout; ++co) gb[co] += go.row(co).sum();
    }
    const bool need_col = weight.requires_grad();
    std::unique_ptr<T[]> colbuf(new T[g.patch() * cols]);
    if (need_col) {
      detail::im2col(g, x.value().ptr(), colbuf.get());
      Tensor<T>& gw = weight.node()->grad_buffer();
      detail::MapMat<T>(gw.ptr(), g.cout, g.patch()).noalias() +=
          go * detail::CMapMat<T>(colbuf.get(), g.patch(), cols).transpose();
    }
    if (x.requires_grad()) {
      detail::MapMat<T> dcol(colbuf.get(), g.patch(), cols);
      dcol.noalias() =
          detail::CMapMat<T>(weight.value().ptr(), g.cout, g.patch()).transpose() * go;
      detail::col2im_add(g, colbuf.get(), x.node()->grad_buffer().ptr());
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

template <class T>
Var<T> concat_channels(Tape<T>& tape, const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat-channels needs at least one input");
  const Shape& s0 = parts[0].shape();
  require_rank("concat-channels", 4, s0);
  std::size_t ctot = 0;
  bool needs = false;
  for (const auto& p : parts) {
    require_rank("concat-channels", 4, p.shape());
    if (p.dim(0) != s0[0] || p.dim(2) != s0[2] || p.dim(3) != s0[3])
      throw ShapeError("concat-channels extents", Shape{s0[0], p.dim(1), s0[2], s0[3]}, p.shape());
    ctot += p.dim(1);
    needs = needs || p.requires_grad();
  }
  const std::size_t n = s0[0], hw = s0[2] * s0[3];
  Tensor<T> out(Shape{n, ctot, s0[2], s0[3]});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t c = p.dim(1);
      const T* src = p.value().ptr() + i * c * hw;
      std::copy(src, src + c * hw, out.ptr() + (i * ctot + off) * hw);
      off += c;
    }
  }
  return tape.record_if(std::move(out), needs, [parts, n, ctot, hw](const Node<T>& self) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t c = p.dim(1);
      accumulate(p, [&](Tensor<T>& g) {
        for (std::size_t i = 0; i < n; ++i) {
          const T* src = self.grad.ptr() + (i * ctot + off) * hw;
          T* dst = g.ptr() + i * c * hw;
          for (std::size_t k = 0; k < c * hw; ++k) dst[k] += src[k];
        }
      });
      off += c;
    }
  });
}

/// Keeps indices [begin, end) along `axis`.
template <class T>
Var<T> slice(Tape<T>& tape, const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis])
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape os = s;
  os[axis] = end - begin;
  Tensor<T> out(os);
  const std::size_t len = (end - begin) * inner, full = s[axis] * inner;
  for (std::size_t o = 0; o < outer; ++o) {
    const T* src = a.value().ptr() + o * full + begin * inner;
    std::copy(src, src + len, out.ptr() + o * len);
  }
  return tape.record(std::move(out), {&a}, [a, outer, len, full, begin, inner](const Node<T>& self) {
    accumulate(a, [&](Tensor<T>& g) {
      for (std::size_t o = 0; o < outer; ++o) {
        T* dst = g.ptr() + o * full + begin * inner;
        const T* src = self.grad.ptr() + o * len;
        for (std::size_t k = 0; k < len; ++k) dst[k] += src[k];
      }
    });
  });
}

/// Bilinear resize of NCHW by an integer factor, half-pixel centers
/// (align_corners = false) with edge clamping.
template <class T>
Var<T> bilinear_upsample(Tape<T>& tape, const Var<T>& a, std::size_t factor) {
  require_rank("bilinear-upsample", 4, a.shape());
  if (factor == 0) throw ShapeError("bilinear-upsample factor must be positive");
  const std::size_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  const std::size_t ho = h * factor, wo = w * factor;
  auto ty = std::make_shared<detail::Taps>(detail::upsample_taps(h, factor));
  auto tx = std::make_shared<detail::Taps>(detail::upsample_taps(w, factor));
  Tensor<T> out(Shape{n, c, ho, wo});
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* src = a.value().ptr() + p * h * w;
    T* dst = out.ptr() + p * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      const T wy = T(ty->w_hi[oy]);
      const T* r0 = src + ty->lo[oy] * w;
      const T* r1 = src + ty->hi[oy] * w;
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const T wx = T(tx->w_hi[ox]);
        const std::size_t x0 = tx->lo[ox], x1 = tx->hi[ox];
        const T top = r0[x0] + wx * (r0[x1] - r0[x0]);
        const T bot = r1[x0] + wx * (r1[x1] - r1[x0]);
        dst[oy * wo + ox] = top + wy * (bot - top);
      }
    }
  }
  return tape.record(std::move(out), {&a}, [a, ty, tx, n, c, h, w, ho, wo](const Node<T>& self) {
    accumulate(a, [&](Tensor<T>& g) {
      for (std::size_t p = 0; p < n * c; ++p) {
        T* dst = g.ptr() + p * h * w;
        const T* src = self.grad.ptr() + p * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const T wy = T(ty->w_hi[oy]);
          T* r0 = dst + ty->lo[oy] * w;
          T* r1 = dst + ty->hi[oy] * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const T wx = T(tx->w_hi[ox]);
            const std::size_t x0 = tx->lo[ox], x1 = tx->hi[ox];
            const T go = src[oy * wo + ox];
            r0[x0] += go * (T(1) - wy) * (T(1) - wx);
            r0[x1] += go * (T(1) - wy) * wx;
            r1[x0] += go * wy * (T(1) - wx);
            r1[x1] += go * wy * wx;
          }
        }
      }
    });
  });
}

// ---------------------------------------------------------------------------

/// Generic dispatcher over the op set. conv2d takes {x, weight[, bias]}.
template <class T>
Var<T> apply_op(Tape<T>& tape, OpKind kind, std::span<const Var<T>> in, const OpAttrs& attrs = {}) {
  auto arity = [&](std::size_t lo, std::size_t hi) {
    if (in.size() < lo || in.size() > hi)
      throw ShapeError(std::string(op_name(kind)) + " takes " + std::to_string(lo) + ".." +
                       std::to_string(hi) + " inputs, got " + std::to_string(in.size()));
  };
  switch (kind) {
    case OpKind::conv2d:
      arity(2, 3);
      return conv2d(tape, in[0], in[1], in.size() == 3 ? in[2] : Var<T>(), attrs.stride, attrs.pad);
    case OpKind::matmul: arity(2, 2); return matmul(tape, in[0], in[1]);
    case OpKind::add: arity(2, 2); return add(tape, in[0], in[1]);
    case OpKind::sub: arity(2, 2); return sub(tape, in[0], in[1]);
    case OpKind::mul: arity(2, 2); return mul(tape, in[0], in[1]);
    case OpKind::scale: arity(1, 1); return scale(tape, in[0], T(attrs.scale));
    case OpKind::relu: arity(1, 1); return relu(tape, in[0]);
    case OpKind::sigmoid: arity(1, 1); return sigmoid(tape, in[0]);
    case OpKind::tanh: arity(1, 1); return tanh(tape, in[0]);
    case OpKind::concat_channels:
      arity(1, ~std::size_t{0});
      return concat_channels(tape, std::vector<Var<T>>(in.begin(), in.end()));
    case OpKind::bilinear_upsample: arity(1, 1); return bilinear_upsample(tape, in[0], attrs.factor);
    case OpKind::slice: arity(1, 1); return slice(tape, in[0], attrs.axis, attrs.begin, attrs.end);
    case OpKind::sum: arity(1, 1); return sum(tape, in[0]);
    case OpKind::mean: arity(1, 1); return mean(tape, in[0]);
  }
  throw ShapeError("unknown op kind");
}

}  // namespace scv
