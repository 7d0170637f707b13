#pragma once

#include <filesystem>
#include <optional>
#include <tuple>
#include <string>

#include "scv/update_operator.hpp"

namespace scv {

/// Architecture and inference hyperparameters. Candidate count is in
/// quarter-resolution pixels.
struct ModelConfig {
  std::size_t feature_channels = 32;
  std::size_t hidden_channels = 32;
  std::size_t upsample_channels = 8;
  std::size_t d_max = 4;
  std::size_t levels = kPyramidLevels;
  std::size_t k = 8;
  std::size_t candidates = 48;
  std::size_t iterations = 8;
  bool normalize_features = false;

  [[nodiscard]] UpdateWidths widths() const {
    return {feature_channels, hidden_channels, upsample_channels, d_max, levels};
  }
  [[nodiscard]] ScvOptions scv_options() const { return {k, candidates, normalize_features, true}; }
  [[nodiscard]] RolloutOptions rollout_options() const {
    RolloutOptions o;
    o.iterations = iterations;
    o.d_max = d_max;
    o.levels = levels;
    return o;
  }

  void validate() const {
    if (k == 0) throw ConfigError("K must be >= 1");
    if (candidates == 0) throw ConfigError("candidate count must be >= 1");
    if (k > candidates)
      throw ConfigError("K (" + std::to_string(k) + ") exceeds candidate count |D| (" +
                        std::to_string(candidates) + ")");
    if (iterations == 0) throw ConfigError("N_s must be >= 1");
    if (d_max == 0) throw ConfigError("d_max must be >= 1");
    if (levels == 0) throw ConfigError("levels must be >= 1");
    if (feature_channels < 8) throw ConfigError("feature channels must be >= 8");
    if (hidden_channels == 0 || upsample_channels == 0) throw ConfigError("channel counts must be positive");
  }
};

inline constexpr std::uint64_t kUpdateSeedSalt = 0x9E3779B97F4A7C15ull;

template <class T>
ParameterStore<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParameterStore<T> p = init_encoder<T>(seed, cfg.feature_channels);
  p.merge(init_update_params<T>(seed ^ kUpdateSeedSalt, cfg.widths()));
  p.set_rng_seed(seed);
  return p;
}

template <class T>
struct Prediction {
  Var<T> features_left, features_right;
  SparseCostVolume<T> scv;
  Rollout<T> rollout;
};

/// Full forward pass on a batch of (N,3,H,W) image pairs.
template <class T>
Prediction<T> predict(Tape<T>& tape, const ParameterStore<T>& p, const ModelConfig& cfg, const Var<T>& left,
                      const Var<T>& right, std::optional<std::size_t> iterations = std::nullopt) {
  Prediction<T> out;
  std::tie(out.features_left, out.features_right) = extract_features(tape, left, right, p);
  out.scv = build_scv(tape, out.features_left, out.features_right, cfg.scv_options());
  RolloutOptions ro = cfg.rollout_options();
  if (iterations) ro.iterations = *iterations;
  out.rollout = iterate(tape, out.scv, out.features_left, p, ro);
  return out;
}

// Checkpoints carry the architecture as a "meta.config" entry next to the
// weights so inference can rebuild the model without the training config.

inline constexpr const char* kMetaEntry = "meta.config";

template <class T>
void save_model(const ParameterStore<T>& p, const ModelConfig& cfg, const std::filesystem::path& path) {
  ParameterStore<T> out = p.clone();
  out.add(kMetaEntry,
          Tensor<T>(Shape{10}, std::vector<T>{T(cfg.feature_channels), T(cfg.hidden_channels),
                                              T(cfg.upsample_channels), T(cfg.d_max), T(cfg.levels),
                                              T(cfg.k), T(cfg.candidates), T(cfg.iterations),
                                              T(cfg.normalize_features ? 1 : 0), T(p.rng_seed() % (1u << 24))}));
  save_checkpoint(out, path);
}

template <class T>
struct LoadedModel {
  ParameterStore<T> params;
  ModelConfig config;
};

/// Loads weights and architecture; throws ConfigError when the stored
/// weights do not fit the stored architecture.
template <class T>
LoadedModel<T> load_model(const std::filesystem::path& path) {
  ParameterStore<T> raw = load_checkpoint<T>(path);
  if (!raw.contains(kMetaEntry)) throw ConfigError("checkpoint has no " + std::string(kMetaEntry) + " entry");
  const Tensor<T>& m = raw[kMetaEntry].value();
  if (m.size() != 10) throw ConfigError("checkpoint meta entry has wrong length");
  LoadedModel<T> out;
  ModelConfig& c = out.config;
  c.feature_channels = std::size_t(m[0]);
  c.hidden_channels = std::size_t(m[1]);
  c.upsample_channels = std::size_t(m[2]);
  c.d_max = std::size_t(m[3]);
  c.levels = std::size_t(m[4]);
  c.k = std::size_t(m[5]);
  c.candidates = std::size_t(m[6]);
  c.iterations = std::size_t(m[7]);
  c.normalize_features = m[8] != T(0);
  c.validate();
  const ParameterStore<T> expect = init_model<T>(c, 0);
  for (const auto& [name, v] : expect) {
    if (!raw.contains(name)) throw ConfigError("checkpoint is missing parameter " + name);
    if (raw[name].shape() != v.shape())
      throw ConfigError("checkpoint parameter " + name + " has shape " + shape_str(raw[name].shape()) +
                        " but the stored architecture needs " + shape_str(v.shape()));
    out.params.add(name, raw[name].value());
  }
  if (raw.size() != expect.size() + 1) throw ConfigError("checkpoint has unexpected extra entries");
  return out;
}

}  // namespace scv
