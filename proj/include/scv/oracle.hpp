#pragma once

// Brute-force reference paths. Slow by construction; used by tests and the
// dense-vs-sparse comparison in the benchmark harness.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "scv/cost_volume.hpp"

namespace scv::oracle {

inline constexpr std::size_t kMaxSubsetCandidates = 16;
inline constexpr std::size_t kMaxEncodingEntries = 100000;

/// Enumerates every K-subset of `costs` and returns the one with the largest
/// sum, as sorted indices. Among equal sums the lexicographically smallest
/// index set wins (ties go to smaller disparities).
inline std::vector<std::size_t> topk(const std::vector<double>& costs, std::size_t k) {
  const std::size_t n = costs.size();
  if (n > kMaxSubsetCandidates)
    throw ConfigError("oracle::topk: " + std::to_string(n) + " candidates exceeds enumeration limit " +
                      std::to_string(kMaxSubsetCandidates));
  if (k == 0 || k > n) throw ConfigError("oracle::topk: need 1 <= K <= |D|");
  std::vector<std::size_t> cur, best;
  double best_sum = -INFINITY;
  std::vector<double> vals;
  // Sums are taken over descending values so equal multisets sum identically.
  auto subset_sum = [&](const std::vector<std::size_t>& s) {
    vals.clear();
    for (std::size_t i : s) vals.push_back(costs[i]);
    std::sort(vals.begin(), vals.end(), std::greater<>());
    double t = 0;
    for (double v : vals) t += v;
    return t;
  };
  std::function<void(std::size_t)> rec = [&](std::size_t start) {
    if (cur.size() == k) {
      const double s = subset_sum(cur);
      if (s > best_sum) {
        best_sum = s;
        best = cur;
      }
      return;
    }
    for (std::size_t i = start; i + (k - cur.size()) <= n; ++i) {
      cur.push_back(i);
      rec(i + 1);
      cur.pop_back();
    }
  };
  rec(0);
  return best;
}

/// Dense costs for a small instance, computed pixel by pixel with no reuse.
/// Returns (N, D, H, W); out-of-range entries are 0.
template <class T>
Tensor<T> dense_costs(const Tensor<T>& fl, const Tensor<T>& fr, std::size_t candidates) {
  require_shape("oracle::dense_costs", fl.shape(), fr.shape());
  const std::size_t n = fl.dim(0), c = fl.dim(1), h = fl.dim(2), w = fl.dim(3);
  Tensor<T> out(Shape{n, candidates, h, w});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t d = 0; d < candidates && d <= x; ++d) {
          T s = 0;
          for (std::size_t ch = 0; ch < c; ++ch) s += fl.at(b, ch, y, x) * fr.at(b, ch, y, x - d);
          out.at(b, d, y, x) = s;
        }
  return out;
}

/// Motion encoding from every in-range candidate of a dense volume. Each
/// entry contributes cost * max(0, 1 - |r_l - bin|) to every bin of every
/// level, with r_l = (d - estimate) / 2^l.
template <class T>
Tensor<T> encoding(const Tensor<T>& dense, const Tensor<T>& estimate, std::size_t d_max, std::size_t levels) {
  require_rank("oracle::encoding", 4, dense.shape());
  const std::size_t n = dense.dim(0), D = dense.dim(1), h = dense.dim(2), w = dense.dim(3);
  if (h * w * D * n > kMaxEncodingEntries) throw ConfigError("oracle::encoding: instance too large");
  require_shape("oracle::encoding estimate", Shape{n, 1, h, w}, estimate.shape());
  const std::size_t bins = 2 * d_max + 1;
  Tensor<T> out(Shape{n, levels * bins, h, w});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t d = 0; d < D && d <= x; ++d) {
          const double c = double(dense.at(b, d, y, x));
          const double r = double(d) - double(estimate.at(b, 0, y, x));
          for (std::size_t l = 0; l < levels; ++l) {
            const double rl = r / std::pow(2.0, double(l));
            for (std::size_t bin = 0; bin < bins; ++bin) {
              const double center = double(bin) - double(d_max);
              const double wgt = std::max(0.0, 1.0 - std::abs(rl - center));
              if (wgt > 0) out.at(b, l * bins + bin, y, x) += T(c * wgt);
            }
          }
        }
  return out;
}

}  // namespace scv::oracle
