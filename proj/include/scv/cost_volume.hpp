#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <vector>

#include "scv/ops.hpp"

namespace scv {

/// All matching costs C(p,d) = <F_l(p), F_r(p - d)> for d in [0, candidates).
/// Entries with x - d < 0 are out of range: stored as 0 and never selected.
template <class T>
struct DenseCostVolume {
  Var<T> costs;  // (N, D, H, W)
  std::size_t candidates = 0;

  [[nodiscard]] static bool in_range(std::size_t x, std::size_t d) noexcept { return d <= x; }
  [[nodiscard]] std::size_t bytes() const { return costs.value().bytes(); }
};

/// Best-K costs per pixel with their integer disparities. Slots are ordered by
/// decreasing cost; a pixel with fewer than K in-range candidates pads the
/// tail with coord = -1 (invalid) and cost 0.
template <class T>
struct SparseCostVolume {
  std::size_t n = 0, k = 0, h = 0, w = 0;
  std::size_t candidates = 0;
  std::vector<std::int32_t> coords;  // (N, K, H, W)
  Var<T> costs;                      // (N, K, H, W)

  [[nodiscard]] std::size_t index(std::size_t b, std::size_t slot, std::size_t y, std::size_t x) const {
    return ((b * k + slot) * h + y) * w + x;
  }
  [[nodiscard]] bool valid(std::size_t i) const { return coords[i] >= 0; }
  [[nodiscard]] std::size_t bytes() const {
    return coords.capacity() * sizeof(std::int32_t) + costs.value().bytes();
  }
};

namespace detail {

// Costs for one image row: out[x * D + d]. Channel order is fixed so every
// path that calls this produces bit-identical values.
template <class T>
void row_costs(const Tensor<T>& fl, const Tensor<T>& fr, std::size_t b, std::size_t y, std::size_t D,
               std::vector<T>& out) {
  const std::size_t c = fl.dim(1), h = fl.dim(2), w = fl.dim(3);
  out.assign(w * D, T(0));
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* l = fl.ptr() + ((b * c + ch) * h + y) * w;
    const T* r = fr.ptr() + ((b * c + ch) * h + y) * w;
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t dmax = std::min(D, x + 1);
      T* o = out.data() + x * D;
      const T lv = l[x];
      for (std::size_t d = 0; d < dmax; ++d) o[d] += lv * r[x - d];
    }
  }
}

// Indices of the best `k` values in row[0..count): larger cost first, ties
// toward the smaller disparity.
template <class T>
void select_best(const T* row, std::size_t count, std::size_t k, std::vector<std::int32_t>& idx) {
  idx.resize(count);
  std::iota(idx.begin(), idx.end(), 0);
  const auto better = [row](std::int32_t a, std::int32_t b) {
    return row[a] > row[b] || (row[a] == row[b] && a < b);
  };
  const std::size_t keep = std::min(k, count);
  std::partial_sort(idx.begin(), idx.begin() + std::ptrdiff_t(keep), idx.end(), better);
  idx.resize(keep);
}

// Backward of any cost gather: each (pixel, d, g) adds g*F_r(p-d) to F_l(p)
// and g*F_l(p) to F_r(p-d).
template <class T>
void scatter_cost_grad(const Var<T>& fl, const Var<T>& fr, std::size_t b, std::size_t y, std::size_t x,
                       std::size_t d, T g) {
  if (g == T(0)) return;
  const std::size_t c = fl.dim(1), h = fl.dim(2), w = fl.dim(3);
  const std::size_t plane = h * w;
  const std::size_t pl = (b * c * h + y) * w + x;
  const std::size_t pr = pl - d;
  if (fl.requires_grad()) {
    T* gl = fl.node()->grad_buffer().ptr();
    const T* vr = fr.value().ptr();
    for (std::size_t ch = 0; ch < c; ++ch) gl[pl + ch * plane] += g * vr[pr + ch * plane];
  }
  if (fr.requires_grad()) {
    T* gr = fr.node()->grad_buffer().ptr();
    const T* vl = fl.value().ptr();
    for (std::size_t ch = 0; ch < c; ++ch) gr[pr + ch * plane] += g * vl[pl + ch * plane];
  }
}

}  // namespace detail

/// Divides each pixel's feature vector by its L2 norm (plus a small floor).
template <class T>
Var<T> normalize_channels(Tape<T>& tape, const Var<T>& f) {
  require_rank("normalize_channels", 4, f.shape());
  const std::size_t n = f.dim(0), c = f.dim(1), hw = f.dim(2) * f.dim(3);
  Tensor<T> out = f.value();
  Tensor<T> norms(Shape{n, hw});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < hw; ++p) {
      T s = 0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T v = f.value()[(b * c + ch) * hw + p];
        s += v * v;
      }
      const T nrm = std::sqrt(s) + T(1e-12);
      norms[b * hw + p] = nrm;
      for (std::size_t ch = 0; ch < c; ++ch) out[(b * c + ch) * hw + p] /= nrm;
    }
  return tape.record(std::move(out), {&f}, [f, norms, n, c, hw](const Node<T>& self) {
    accumulate(f, [&](Tensor<T>& g) {
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t p = 0; p < hw; ++p) {
          T dot = 0;
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t i = (b * c + ch) * hw + p;
            dot += self.grad[i] * self.value[i];
          }
          const T nrm = norms[b * hw + p];
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t i = (b * c + ch) * hw + p;
            g[i] += (self.grad[i] - dot * self.value[i]) / nrm;
          }
        }
    });
  });
}

/// Full correlation volume. Differentiable w.r.t. both feature maps.
template <class T>
DenseCostVolume<T> dense_cost(Tape<T>& tape, const Var<T>& fl, const Var<T>& fr, std::size_t candidates) {
  require_rank("dense_cost", 4, fl.shape());
  require_shape("dense_cost right features", fl.shape(), fr.shape());
  if (candidates == 0) throw ConfigError("dense_cost: candidate count must be positive");
  const std::size_t n = fl.dim(0), h = fl.dim(2), w = fl.dim(3), D = candidates;
  Tensor<T> out(Shape{n, D, h, w});
  std::vector<T> row;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < h; ++y) {
      detail::row_costs(fl.value(), fr.value(), b, y, D, row);
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t d = 0; d < D; ++d) out.at(b, d, y, x) = row[x * D + d];
    }
  check_finite("dense_cost", out);
  Var<T> costs = tape.record(std::move(out), {&fl, &fr}, [fl, fr, n, h, w, D](const Node<T>& self) {
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = d; x < w; ++x)
            detail::scatter_cost_grad(fl, fr, b, y, x, d, self.grad.at(b, d, y, x));
  });
  return {std::move(costs), D};
}

/// Keeps the K best in-range candidates per pixel. Gradients reach only the
/// selected entries; the selection itself is a constant.
template <class T>
SparseCostVolume<T> topk_select(Tape<T>& tape, const DenseCostVolume<T>& dense, std::size_t k) {
  const std::size_t D = dense.candidates;
  if (k == 0) throw ConfigError("topk_select: K must be positive");
  if (k > D) throw ConfigError("topk_select: K=" + std::to_string(k) + " exceeds candidate count " +
                               std::to_string(D));
  const Tensor<T>& dv = dense.costs.value();
  SparseCostVolume<T> scv;
  scv.n = dv.dim(0);
  scv.k = k;
  scv.h = dv.dim(2);
  scv.w = dv.dim(3);
  scv.candidates = D;
  scv.coords.assign(scv.n * k * scv.h * scv.w, -1);
  Tensor<T> out(Shape{scv.n, k, scv.h, scv.w});
  std::vector<T> row(D);
  std::vector<std::int32_t> idx;
  for (std::size_t b = 0; b < scv.n; ++b)
    for (std::size_t y = 0; y < scv.h; ++y)
      for (std::size_t x = 0; x < scv.w; ++x) {
        const std::size_t count = std::min(D, x + 1);
        for (std::size_t d = 0; d < count; ++d) row[d] = dv.at(b, d, y, x);
        detail::select_best(row.data(), count, k, idx);
        for (std::size_t s = 0; s < idx.size(); ++s) {
          const std::size_t i = scv.index(b, s, y, x);
          scv.coords[i] = idx[s];
          out[i] = row[std::size_t(idx[s])];
        }
      }
  const Var<T> src = dense.costs;
  auto coords = std::make_shared<std::vector<std::int32_t>>(scv.coords);
  scv.costs = tape.record(std::move(out), {&src}, [src, coords](const Node<T>& self) {
    accumulate(src, [&](Tensor<T>& g) {
      const std::size_t n = self.value.dim(0), kk = self.value.dim(1), h = self.value.dim(2),
                        w = self.value.dim(3);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t s = 0; s < kk; ++s)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
              const std::size_t i = ((b * kk + s) * h + y) * w + x;
              const std::int32_t d = (*coords)[i];
              if (d >= 0) g.at(b, std::size_t(d), y, x) += self.grad[i];
            }
    });
  });
  return scv;
}

/// Fused dense_cost + topk_select: costs are computed one row at a time, so
/// the full (N,D,H,W) volume never exists. Matches the unfused path exactly.
template <class T>
SparseCostVolume<T> build_scv_fused(Tape<T>& tape, const Var<T>& fl, const Var<T>& fr, std::size_t k,
                                    std::size_t candidates) {
  require_rank("build_scv", 4, fl.shape());
  require_shape("build_scv right features", fl.shape(), fr.shape());
  const std::size_t D = candidates;
  if (D == 0) throw ConfigError("build_scv: candidate count must be positive");
  if (k == 0) throw ConfigError("build_scv: K must be positive");
  if (k > D) throw ConfigError("build_scv: K=" + std::to_string(k) + " exceeds candidate count " +
                               std::to_string(D));
  SparseCostVolume<T> scv;
  scv.n = fl.dim(0);
  scv.k = k;
  scv.h = fl.dim(2);
  scv.w = fl.dim(3);
  scv.candidates = D;
  scv.coords.assign(scv.n * k * scv.h * scv.w, -1);
  Tensor<T> out(Shape{scv.n, k, scv.h, scv.w});
  std::vector<T> row;
  std::vector<std::int32_t> idx;
  for (std::size_t b = 0; b < scv.n; ++b)
    for (std::size_t y = 0; y < scv.h; ++y) {
      detail::row_costs(fl.value(), fr.value(), b, y, D, row);
      for (std::size_t x = 0; x < scv.w; ++x) {
        const T* r = row.data() + x * D;
        detail::select_best(r, std::min(D, x + 1), k, idx);
        for (std::size_t s = 0; s < idx.size(); ++s) {
          const std::size_t i = scv.index(b, s, y, x);
          scv.coords[i] = idx[s];
          out[i] = r[std::size_t(idx[s])];
        }
      }
    }
  check_finite("build_scv", out);
  auto coords = std::make_shared<std::vector<std::int32_t>>(scv.coords);
  scv.costs = tape.record(std::move(out), {&fl, &fr}, [fl, fr, coords](const Node<T>& self) {
    const std::size_t n = self.value.dim(0), kk = self.value.dim(1), h = self.value.dim(2),
                      w = self.value.dim(3);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t s = 0; s < kk; ++s)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const std::size_t i = ((b * kk + s) * h + y) * w + x;
            const std::int32_t d = (*coords)[i];
            if (d >= 0) detail::scatter_cost_grad(fl, fr, b, y, x, std::size_t(d), self.grad[i]);
          }
  });
  return scv;
}

struct ScvOptions {
  std::size_t k = 8;
  std::size_t candidates = 48;
  bool normalize_features = false;
  bool fused = true;
};

/// Correlation + top-K selection, optionally on unit-normalized features.
template <class T>
SparseCostVolume<T> build_scv(Tape<T>& tape, const Var<T>& fl, const Var<T>& fr, const ScvOptions& opt) {
  Var<T> l = fl, r = fr;
  if (opt.normalize_features) {
    l = normalize_channels(tape, fl);
    r = normalize_channels(tape, fr);
  }
  if (opt.fused) return build_scv_fused(tape, l, r, opt.k, opt.candidates);
  return topk_select(tape, dense_cost(tape, l, r, opt.candidates), opt.k);
}

/// Plain-text table, one `x y k coord cost valid` row per slot of batch item b.
template <class T>
void dump_scv(std::ostream& os, const SparseCostVolume<T>& scv, std::size_t b = 0) {
  const auto old = os.precision(9);
  os << "x y k coord cost valid\n";
  for (std::size_t y = 0; y < scv.h; ++y)
    for (std::size_t x = 0; x < scv.w; ++x)
      for (std::size_t s = 0; s < scv.k; ++s) {
        const std::size_t i = scv.index(b, s, y, x);
        os << x << ' ' << y << ' ' << s << ' ' << scv.coords[i] << ' ' << scv.costs.value()[i] << ' '
           << (scv.valid(i) ? 1 : 0) << '\n';
      }
  os.precision(old);
}

}  // namespace scv
