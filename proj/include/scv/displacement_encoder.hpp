#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "scv/cost_volume.hpp"

namespace scv {

inline constexpr std::size_t kPyramidLevels = 5;

inline constexpr std::size_t motion_channels(std::size_t levels, std::size_t d_max) {
  return levels * (2 * d_max + 1);
}

/// SCV entries re-expressed relative to the current estimate:
/// rel = coord - estimate(p). Costs and validity are carried unchanged.
template <class T>
struct ShiftedScv {
  std::size_t n = 0, k = 0, h = 0, w = 0;
  std::vector<double> rel;          // (N, K, H, W)
  std::vector<std::uint8_t> valid;  // (N, K, H, W)
  Var<T> costs;
};

/// Relative coordinates at each level l: rel / 2^l.
template <class T>
struct ScvPyramid {
  std::size_t n = 0, k = 0, h = 0, w = 0;
  std::vector<std::vector<double>> levels;
  std::vector<std::uint8_t> valid;
  Var<T> costs;
};

/// `estimate` is (N,1,H,W) at the SCV's resolution. It is read as a plain
/// value: no gradient flows from the scatter positions into the estimate.
template <class T>
ShiftedScv<T> shift_coordinates(const SparseCostVolume<T>& scv, const Tensor<T>& estimate) {
  require_shape("shift_coordinates estimate", Shape{scv.n, 1, scv.h, scv.w}, estimate.shape());
  ShiftedScv<T> out;
  out.n = scv.n;
  out.k = scv.k;
  out.h = scv.h;
  out.w = scv.w;
  out.costs = scv.costs;
  out.rel.resize(scv.coords.size());
  out.valid.resize(scv.coords.size());
  const std::size_t hw = scv.h * scv.w;
  for (std::size_t b = 0; b < scv.n; ++b)
    for (std::size_t s = 0; s < scv.k; ++s)
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t i = (b * scv.k + s) * hw + p;
        out.valid[i] = scv.coords[i] >= 0 ? 1 : 0;
        out.rel[i] = out.valid[i] ? double(scv.coords[i]) - double(estimate[b * hw + p]) : 0.0;
      }
  return out;
}

template <class T>
ScvPyramid<T> pyramid_levels(const ShiftedScv<T>& shifted, std::size_t levels = kPyramidLevels) {
  if (levels == 0) throw ConfigError("pyramid needs at least one level");
  ScvPyramid<T> pyr;
  pyr.n = shifted.n;
  pyr.k = shifted.k;
  pyr.h = shifted.h;
  pyr.w = shifted.w;
  pyr.valid = shifted.valid;
  pyr.costs = shifted.costs;
  pyr.levels.resize(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    const double s = std::ldexp(1.0, -int(l));
    pyr.levels[l].resize(shifted.rel.size());
    for (std::size_t i = 0; i < shifted.rel.size(); ++i) pyr.levels[l][i] = shifted.rel[i] * s;
  }
  return pyr;
}

namespace detail {

// Linear split of a cost at real offset r onto bins floor(r) and ceil(r).
// Calls emit(bin, weight) for each in-window share.
template <class F>
void linear_split(double r, long d_max, F&& emit) {
  const double lo = std::floor(r);
  const double hi = std::ceil(r);
  const long blo = long(lo), bhi = long(hi);
  if (blo == bhi) {
    if (std::labs(blo) <= d_max) emit(blo, 1.0);
    return;
  }
  if (std::labs(blo) <= d_max) emit(blo, hi - r);
  if (std::labs(bhi) <= d_max) emit(bhi, r - lo);
}

}  // namespace detail

/// Scatters every valid entry of every level into a (2*d_max+1)-bin window
/// centred on the estimate. Output is (N, L*(2*d_max+1), H, W), level-major,
/// bin b at channel offset b + d_max. Empty bins are exactly zero.
template <class T>
Var<T> encode_dense(Tape<T>& tape, const ScvPyramid<T>& pyr, std::size_t d_max) {
  if (d_max == 0) throw ConfigError("encode_dense: d_max must be >= 1");
  const std::size_t L = pyr.levels.size(), bins = 2 * d_max + 1, hw = pyr.h * pyr.w;
  const std::size_t n = pyr.n, k = pyr.k;
  const long dm = long(d_max);
  Tensor<T> out(Shape{n, L * bins, pyr.h, pyr.w});
  const Tensor<T>& cv = pyr.costs.value();
  for (std::size_t l = 0; l < L; ++l) {
    const std::vector<double>& rel = pyr.levels[l];
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t s = 0; s < k; ++s)
        for (std::size_t p = 0; p < hw; ++p) {
          const std::size_t i = (b * k + s) * hw + p;
          if (!pyr.valid[i]) continue;
          const T c = cv[i];
          detail::linear_split(rel[i], dm, [&](long bin, double wgt) {
            out[(b * L * bins + l * bins + std::size_t(bin + dm)) * hw + p] += c * T(wgt);
          });
        }
  }
  auto levels = std::make_shared<std::vector<std::vector<double>>>(pyr.levels);
  auto valid = std::make_shared<std::vector<std::uint8_t>>(pyr.valid);
  const Var<T> costs = pyr.costs;
  return tape.record(std::move(out), {&costs}, [costs, levels, valid, n, k, hw, L, bins, dm](const Node<T>& self) {
    accumulate(costs, [&](Tensor<T>& g) {
      for (std::size_t l = 0; l < L; ++l) {
        const std::vector<double>& rel = (*levels)[l];
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t s = 0; s < k; ++s)
            for (std::size_t p = 0; p < hw; ++p) {
              const std::size_t i = (b * k + s) * hw + p;
              if (!(*valid)[i]) continue;
              detail::linear_split(rel[i], dm, [&](long bin, double wgt) {
                g[i] += self.grad[(b * L * bins + l * bins + std::size_t(bin + dm)) * hw + p] * T(wgt);
              });
            }
      }
    });
  });
}

/// shift -> pyramid -> scatter.
template <class T>
Var<T> encode_motion(Tape<T>& tape, const SparseCostVolume<T>& scv, const Tensor<T>& estimate,
                     std::size_t d_max, std::size_t levels = kPyramidLevels) {
  return encode_dense(tape, pyramid_levels(shift_coordinates(scv, estimate), levels), d_max);
}

}  // namespace scv
