#pragma once

#include <string>
#include <utility>

#include "scv/ops.hpp"
#include "scv/parameter_store.hpp"

namespace scv {

struct EncoderWidths {
  std::size_t in_channels = 3;
  std::size_t half = 8;   // channels at 1/2 resolution
  std::size_t out = 32;   // channels of the emitted feature map
};

inline EncoderWidths encoder_widths(std::size_t channels_out, std::size_t in_channels = 3) {
  return {in_channels, std::max<std::size_t>(8, channels_out / 2), channels_out};
}

namespace detail {

template <class T>
void add_conv(ParameterStore<T>& p, Rng& rng, const std::string& name, std::size_t cout,
              std::size_t cin, std::size_t k) {
  p.add(name + ".w", fan_in_uniform<T>(rng, Shape{cout, cin, k, k}));
  p.add(name + ".b", Tensor<T>(Shape{cout}));
}

template <class T>
Var<T> conv(Tape<T>& tape, const ParameterStore<T>& p, const std::string& name, const Var<T>& x,
            std::size_t stride = 1) {
  const Var<T>& w = p[name + ".w"];
  return conv2d(tape, x, w, p[name + ".b"], stride, w.dim(2) / 2);
}

template <class T>
Var<T> residual_block(Tape<T>& tape, const ParameterStore<T>& p, const std::string& name,
                      const Var<T>& x, std::size_t stride) {
  Var<T> y = relu(tape, conv(tape, p, name + ".conv1", x, stride));
  y = conv(tape, p, name + ".conv2", y);
  const Var<T> shortcut = p.contains(name + ".proj.w") ? conv(tape, p, name + ".proj", x, stride) : x;
  return relu(tape, add(tape, y, shortcut));
}

}  // namespace detail

/// Stem conv (stride 2) -> residual block -> stride-2 residual block ->
/// residual block -> 1x1 output conv. 3x3 kernels, relu, no normalization.
template <class T>
ParameterStore<T> init_encoder(std::uint64_t seed, std::size_t channels_out, std::size_t in_channels = 3) {
  if (channels_out < 8) throw ConfigError("encoder needs channels_out >= 8");
  const EncoderWidths w = encoder_widths(channels_out, in_channels);
  ParameterStore<T> p(seed);
  Rng rng(seed);
  detail::add_conv(p, rng, "enc.stem", w.half, w.in_channels, 3);
  detail::add_conv(p, rng, "enc.res1.conv1", w.half, w.half, 3);
  detail::add_conv(p, rng, "enc.res1.conv2", w.half, w.half, 3);
  detail::add_conv(p, rng, "enc.res2.conv1", w.out, w.half, 3);
  detail::add_conv(p, rng, "enc.res2.conv2", w.out, w.out, 3);
  detail::add_conv(p, rng, "enc.res2.proj", w.out, w.half, 1);
  detail::add_conv(p, rng, "enc.res3.conv1", w.out, w.out, 3);
  detail::add_conv(p, rng, "enc.res3.conv2", w.out, w.out, 3);
  detail::add_conv(p, rng, "enc.out", w.out, w.out, 1);
  return p;
}

/// One image batch (N,C,H,W) -> features (N,C_out,H/4,W/4).
template <class T>
Var<T> encode_image(Tape<T>& tape, const Var<T>& image, const ParameterStore<T>& p) {
  require_rank("encoder input", 4, image.shape());
  if (image.dim(2) % 4 != 0 || image.dim(3) % 4 != 0)
    throw ShapeError("image extents must be divisible by 4, got " + shape_str(image.shape()));
  const std::size_t cin = p["enc.stem.w"].dim(1);
  if (image.dim(1) != cin)
    throw ShapeError("encoder input channels", Shape{image.dim(0), cin, image.dim(2), image.dim(3)},
                     image.shape());
  Var<T> x = relu(tape, detail::conv(tape, p, "enc.stem", image, 2));
  x = detail::residual_block(tape, p, "enc.res1", x, 1);
  x = detail::residual_block(tape, p, "enc.res2", x, 2);
  x = detail::residual_block(tape, p, "enc.res3", x, 1);
  return detail::conv(tape, p, "enc.out", x);
}

/// Both views go through the same parameters.
template <class T>
std::pair<Var<T>, Var<T>> extract_features(Tape<T>& tape, const Var<T>& left, const Var<T>& right,
                                           const ParameterStore<T>& p) {
  require_shape("stereo pair", left.shape(), right.shape());
  return {encode_image(tape, left, p), encode_image(tape, right, p)};
}

}  // namespace scv
