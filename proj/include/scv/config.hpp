#pragma once

// Flat key=value run configuration. Unknown or repeated keys are errors.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "scv/training.hpp"

namespace scv {

struct RunConfig {
  TrainConfig train;
  // Dataset: either three directories with matching file names, or synthetic pairs.
  std::filesystem::path left_dir, right_dir, gt_dir;
  std::size_t synth_count = 4;
  SynthSpec synth;

  [[nodiscard]] bool uses_directories() const { return !left_dir.empty(); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class U>
U parse_number(const std::string& key, const std::string& v) {
  U out{};
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

}  // namespace detail

/// Parses config text. `origin` names the source in error messages.
inline RunConfig parse_run_config(const std::string& text, const std::string& origin = "config") {
  RunConfig rc;
  TrainConfig& t = rc.train;
  ModelConfig& m = t.model;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto size = [](std::size_t& dst) -> Setter {
    return [&dst](const std::string& k, const std::string& v) { dst = detail::parse_number<std::size_t>(k, v); };
  };
  auto real = [](double& dst) -> Setter {
    return [&dst](const std::string& k, const std::string& v) { dst = detail::parse_number<double>(k, v); };
  };
  auto path = [](std::filesystem::path& dst) -> Setter {
    return [&dst](const std::string&, const std::string& v) { dst = v; };
  };
  const std::map<std::string, Setter> keys = {
      {"k", size(m.k)},
      {"candidates", size(m.candidates)},
      {"d_max", size(m.d_max)},
      {"levels", size(m.levels)},
      {"iterations", size(m.iterations)},
      {"feature_channels", size(m.feature_channels)},
      {"hidden_channels", size(m.hidden_channels)},
      {"upsample_channels", size(m.upsample_channels)},
      {"normalize_features", [&m](const std::string& k, const std::string& v) { m.normalize_features = detail::parse_bool(k, v); }},
      {"alpha", real(t.alpha)},
      {"lr", real(t.lr)},
      {"clip", real(t.clip)},
      {"steps", size(t.steps)},
      {"batch_size", size(t.batch_size)},
      {"seed", [&t](const std::string& k, const std::string& v) { t.seed = detail::parse_number<std::uint64_t>(k, v); }},
      {"log_interval", size(t.log_interval)},
      {"checkpoint_interval", size(t.checkpoint_interval)},
      {"output_dir", path(t.output_dir)},
      {"left_dir", path(rc.left_dir)},
      {"right_dir", path(rc.right_dir)},
      {"gt_dir", path(rc.gt_dir)},
      {"synth_count", size(rc.synth_count)},
      {"synth_height", size(rc.synth.height)},
      {"synth_width", size(rc.synth.width)},
      {"synth_max_disparity", real(rc.synth.max_disparity)},
      {"synth_objects", size(rc.synth.objects)},
      {"synth_seed", [&rc](const std::string& k, const std::string& v) { rc.synth.seed = detail::parse_number<std::uint64_t>(k, v); }},
  };

  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    if (value.empty()) throw ConfigError(where + ": empty value for '" + key + "'");
    it->second(key, value);
  }
  return rc;
}

/// Checks cross-field invariants and that every named input path exists.
inline void validate(const RunConfig& rc) {
  rc.train.model.validate();
  if (rc.train.steps == 0) throw ConfigError("steps must be >= 1");
  if (rc.train.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(rc.train.lr > 0)) throw ConfigError("lr must be positive");
  if (!(rc.train.alpha > 0 && rc.train.alpha <= 1)) throw ConfigError("alpha must be in (0, 1]");
  if (!(rc.train.clip > 0)) throw ConfigError("clip must be positive");
  const int dirs = int(!rc.left_dir.empty()) + int(!rc.right_dir.empty()) + int(!rc.gt_dir.empty());
  if (dirs != 0 && dirs != 3) throw ConfigError("left_dir, right_dir and gt_dir must be given together");
  for (const auto* p : {&rc.left_dir, &rc.right_dir, &rc.gt_dir})
    if (!p->empty() && !std::filesystem::is_directory(*p))
      throw ConfigError("dataset directory does not exist: " + p->string());
  if (!rc.uses_directories() && rc.synth_count == 0) throw ConfigError("synth_count must be >= 1");
  if (!rc.train.output_dir.empty()) {
    const auto parent = std::filesystem::absolute(rc.train.output_dir).parent_path();
    if (!std::filesystem::is_directory(parent))
      throw ConfigError("parent of output_dir does not exist: " + parent.string());
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open config file: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  RunConfig rc = parse_run_config(ss.str(), path.string());
  validate(rc);
  return rc;
}

/// Sorted file names present in every directory; throws DataError listing
/// names missing from any of them.
inline std::vector<std::string> match_files(const std::vector<std::filesystem::path>& dirs) {
  std::vector<std::set<std::string>> names;
  for (const auto& d : dirs) {
    std::set<std::string> s;
    for (const auto& e : std::filesystem::directory_iterator(d))
      if (e.is_regular_file()) s.insert(e.path().filename().string());
    names.push_back(std::move(s));
  }
  std::set<std::string> all, common = names.front();
  for (const auto& s : names) {
    all.insert(s.begin(), s.end());
    std::set<std::string> keep;
    for (const auto& n : common)
      if (s.count(n)) keep.insert(n);
    common = std::move(keep);
  }
  std::string missing;
  for (const auto& n : all)
    if (!common.count(n)) missing += "\n  " + n;
  if (!missing.empty()) throw DataError("unmatched files:" + missing);
  if (common.empty()) throw DataError("no files to match");
  return {common.begin(), common.end()};
}

/// Loads the training pairs named by the config.
inline std::vector<SamplePair> load_training_data(const RunConfig& rc) {
  std::vector<SamplePair> out;
  if (!rc.uses_directories()) {
    for (std::size_t i = 0; i < rc.synth_count; ++i) {
      SynthSpec s = rc.synth;
      s.seed = rc.synth.seed + i;
      out.push_back(synth_pair(s));
    }
    return out;
  }
  const auto left_names = match_files({rc.left_dir, rc.right_dir});
  for (const auto& name : left_names) {
    SamplePair p;
    p.id = name;
    p.left = read_image(rc.left_dir / name);
    p.right = read_image(rc.right_dir / name);
    const auto stem = std::filesystem::path(name).stem().string();
    std::filesystem::path gt;
    for (const char* ext : {".png", ".pfm"})
      if (std::filesystem::exists(rc.gt_dir / (stem + ext))) gt = rc.gt_dir / (stem + ext);
    if (gt.empty()) throw DataError("no ground truth for " + name + " in " + rc.gt_dir.string());
    p.gt = read_disparity(gt);
    if (p.left.height != p.right.height || p.left.width != p.right.width)
      throw DataError("left/right extents differ for " + name);
    if (p.gt->disparity.height != p.left.height || p.gt->disparity.width != p.left.width)
      throw DataError("ground truth extents differ from image for " + name);
    if (p.left.height % 4 || p.left.width % 4)
      throw DataError("image extents of " + name + " are not divisible by 4");
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace scv
