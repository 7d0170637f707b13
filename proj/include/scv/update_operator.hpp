#pragma once

#include <optional>
#include <vector>

#include "scv/displacement_encoder.hpp"
#include "scv/feature_encoder.hpp"

namespace scv {

struct UpdateWidths {
  std::size_t feature = 32;
  std::size_t hidden = 32;
  std::size_t upsample = 8;
  std::size_t d_max = 4;
  std::size_t levels = kPyramidLevels;

  /// disparity (1) + motion encoding + left features
  [[nodiscard]] std::size_t input_channels() const { return 1 + motion_channels(levels, d_max) + feature; }
};

/// Context head, ConvGRU (z, r, q), residual head and upsampling head.
/// The last conv of both heads starts at zero, so the untrained operator
/// predicts zero residuals and the upsampler is a plain x4 resize.
template <class T>
ParameterStore<T> init_update_params(std::uint64_t seed, const UpdateWidths& u) {
  if (u.feature == 0 || u.hidden == 0 || u.upsample == 0) throw ConfigError("channel counts must be positive");
  ParameterStore<T> p(seed);
  Rng rng(seed);
  const std::size_t hx = u.hidden + u.input_channels();
  detail::add_conv(p, rng, "upd.ctx", u.hidden, u.feature, 3);
  detail::add_conv(p, rng, "upd.gru.z", u.hidden, hx, 3);
  detail::add_conv(p, rng, "upd.gru.r", u.hidden, hx, 3);
  detail::add_conv(p, rng, "upd.gru.q", u.hidden, hx, 3);
  detail::add_conv(p, rng, "upd.head.conv1", u.hidden, u.hidden, 3);
  p.add("upd.head.conv2.w", Tensor<T>(Shape{1, u.hidden, 3, 3}));
  p.add("upd.head.conv2.b", Tensor<T>(Shape{1}));
  detail::add_conv(p, rng, "upd.up.conv1", u.upsample, 1, 3);
  p.add("upd.up.conv2.w", Tensor<T>(Shape{1, u.upsample, 3, 3}));
  p.add("upd.up.conv2.b", Tensor<T>(Shape{1}));
  return p;
}

/// Initial hidden state tanh(conv(F_l)).
template <class T>
Var<T> context_hidden(Tape<T>& tape, const Var<T>& features, const ParameterStore<T>& p) {
  return tanh(tape, detail::conv(tape, p, "upd.ctx", features));
}

template <class T>
struct GruOutput {
  Var<T> hidden;
  Var<T> delta;  // (N,1,H,W) residual disparity
};

/// z = s(conv[h,x]), r = s(conv[h,x]), q = tanh(conv[r*h, x]),
/// h' = (1-z)*h + z*q, delta = head(h').
template <class T>
GruOutput<T> gru_step(Tape<T>& tape, const Var<T>& h, const Var<T>& x, const ParameterStore<T>& p) {
  const Var<T> hx = concat_channels<T>(tape, {h, x});
  const Var<T> z = sigmoid(tape, detail::conv(tape, p, "upd.gru.z", hx));
  const Var<T> r = sigmoid(tape, detail::conv(tape, p, "upd.gru.r", hx));
  const Var<T> rhx = concat_channels<T>(tape, {mul(tape, r, h), x});
  const Var<T> q = tanh(tape, detail::conv(tape, p, "upd.gru.q", rhx));
  const Var<T> h_next = add(tape, h, mul(tape, z, sub(tape, q, h)));
  const Var<T> mid = relu(tape, detail::conv(tape, p, "upd.head.conv1", h_next));
  return {h_next, detail::conv(tape, p, "upd.head.conv2", mid)};
}

/// x4 bilinear resize with values scaled by 4, plus a two-conv residual.
template <class T>
Var<T> upsample_full(Tape<T>& tape, const Var<T>& quarter, const ParameterStore<T>& p) {
  require_rank("upsample_full", 4, quarter.shape());
  if (quarter.dim(1) != 1) throw ShapeError("upsample_full expects one channel, got " + shape_str(quarter.shape()));
  const Var<T> base = scale(tape, bilinear_upsample(tape, quarter, 4), T(4));
  const Var<T> mid = relu(tape, detail::conv(tape, p, "upd.up.conv1", base));
  return add(tape, base, detail::conv(tape, p, "upd.up.conv2", mid));
}

struct RolloutOptions {
  std::size_t iterations = 8;
  std::size_t d_max = 4;
  std::size_t levels = kPyramidLevels;
  /// When set, step i shifts the SCV by shift_estimates[i-1] instead of the
  /// live estimate. Used to hold scatter positions fixed in gradient checks.
  std::optional<std::vector<Tensor<double>>> shift_estimates;
};

template <class T>
struct Rollout {
  std::vector<Var<T>> full;       // D^1..D^N at input resolution
  std::vector<Var<T>> quarter;    // D^1_s..D^N_s
  std::vector<Var<T>> deltas;     // residuals per step
  std::vector<Var<T>> hidden;     // h after each step
  std::vector<Tensor<T>> shifts;  // estimate used to shift the SCV at each step
};

/// D^0_s = 0; per step: shift -> pyramid -> scatter -> GRU -> accumulate -> upsample.
template <class T>
Rollout<T> iterate(Tape<T>& tape, const SparseCostVolume<T>& scv, const Var<T>& features,
                   const ParameterStore<T>& p, const RolloutOptions& opt) {
  if (opt.iterations == 0) throw ConfigError("iterations must be >= 1");
  if (opt.shift_estimates && opt.shift_estimates->size() < opt.iterations)
    throw ConfigError("shift_estimates shorter than iteration count");
  Rollout<T> out;
  Var<T> estimate = make_constant(Tensor<T>(Shape{scv.n, 1, scv.h, scv.w}));
  Var<T> h = context_hidden(tape, features, p);
  for (std::size_t i = 0; i < opt.iterations; ++i) {
    Tensor<T> shift = opt.shift_estimates ? (*opt.shift_estimates)[i].template cast<T>() : estimate.value();
    const Var<T> motion = encode_motion(tape, scv, shift, opt.d_max, opt.levels);
    const Var<T> x = concat_channels<T>(tape, {estimate, motion, features});
    GruOutput<T> step = gru_step(tape, h, x, p);
    h = step.hidden;
    estimate = add(tape, estimate, step.delta);
    out.shifts.push_back(std::move(shift));
    out.deltas.push_back(step.delta);
    out.hidden.push_back(h);
    out.quarter.push_back(estimate);
    out.full.push_back(upsample_full(tape, estimate, p));
  }
  return out;
}

}  // namespace scv
