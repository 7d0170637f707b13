// scv: train / infer / eval / bench front end.
//
// Exit codes: 0 ok, 1 config error, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "scv/config.hpp"

namespace fs = std::filesystem;
using namespace scv;

namespace {

enum Exit : int { kOk = 0, kConfig = 1, kData = 2, kNumeric = 3 };

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

// --- train -----------------------------------------------------------------

int cmd_train(const fs::path& config_path) {
  RunConfig rc = load_run_config(config_path);
  if (rc.train.output_dir.empty()) throw ConfigError("output_dir is required for train");
  const std::vector<SamplePair> data = load_training_data(rc);
  std::cout << "training on " << data.size() << " pairs, " << rc.train.steps << " steps\n";
  const TrainResult<float> res = train<float>(rc.train, data, [](const LogRow& r) {
    std::cout << "step " << r.step << " loss " << r.loss << " aepe " << r.aepe << " f1 " << r.f1 << "\n";
  });
  std::cout << "wrote " << (rc.train.output_dir / "checkpoint.scvw").string() << " and "
            << (rc.train.output_dir / "log.csv").string() << " (" << std::fixed << std::setprecision(1)
            << res.seconds << " s)\n";
  return kOk;
}

// --- infer -----------------------------------------------------------------

fs::path output_stem(const fs::path& out) {
  if (out.extension() == ".pfm" || out.extension() == ".png") return fs::path(out).replace_extension();
  return out;
}

void write_disparity_pair(const Field& f, const fs::path& stem) {
  write_pfm(f, fs::path(stem.string() + ".pfm"));
  Field clamped = f;
  // KITTI encoding cannot hold negatives; 0 marks invalid there anyway.
  for (auto& v : clamped.data) v = std::clamp(v, 0.f, 65535.f / 256.f);
  write_kitti_disparity(clamped, fs::path(stem.string() + ".png"));
}

int cmd_infer(const fs::path& left_path, const fs::path& right_path, const fs::path& params, const fs::path& out,
              std::optional<std::size_t> iters, bool dump_iters) {
  const LoadedModel<float> model = load_model<float>(params);
  if (iters && *iters == 0) throw ConfigError("--iters must be >= 1");
  const StereoImage left = read_image(left_path), right = read_image(right_path);
  if (left.height != right.height || left.width != right.width)
    throw DataError("left " + std::to_string(left.height) + "x" + std::to_string(left.width) + " and right " +
                    std::to_string(right.height) + "x" + std::to_string(right.width) + " extents differ");
  if (left.height % 4 || left.width % 4)
    throw DataError("image extents " + std::to_string(left.height) + "x" + std::to_string(left.width) +
                    " are not divisible by 4");
  const auto t0 = Clock::now();
  const std::vector<Field> seq = infer_sequence(model.params, model.config, left, right, iters);
  const fs::path stem = output_stem(out);
  if (dump_iters)
    for (std::size_t i = 0; i < seq.size(); ++i) {
      std::ostringstream name;
      name << stem.string() << "_iter" << std::setw(2) << std::setfill('0') << (i + 1);
      write_disparity_pair(seq[i], name.str());
    }
  write_disparity_pair(seq.back(), stem);
  std::cout << "wrote " << stem.string() << ".pfm and " << stem.string() << ".png after " << seq.size()
            << " iterations (" << std::fixed << std::setprecision(3) << seconds_since(t0) << " s)\n";
  return kOk;
}

// --- eval ------------------------------------------------------------------

std::map<std::string, fs::path> disparity_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    if (ext != ".pfm" && ext != ".png") continue;
    const std::string stem = e.path().stem().string();
    if (out.count(stem)) throw DataError("ambiguous sample " + stem + " in " + dir.string());
    out[stem] = e.path();
  }
  return out;
}

int cmd_eval(const fs::path& pred_dir, const fs::path& gt_dir, bool relative, const fs::path& csv_path) {
  const auto preds = disparity_files(pred_dir), gts = disparity_files(gt_dir);
  std::string missing;
  for (const auto& [k, _] : preds)
    if (!gts.count(k)) missing += "\n  " + k + " (no ground truth)";
  for (const auto& [k, _] : gts)
    if (!preds.count(k)) missing += "\n  " + k + " (no prediction)";
  if (!missing.empty()) throw DataError("unmatched files:" + missing);
  if (preds.empty()) throw DataError("no disparity files to compare");

  struct Row {
    std::string name;
    double aepe, f1;
    std::size_t valid;
  };
  std::vector<Row> rows;
  for (const auto& [name, pp] : preds) {
    const GroundTruth gt = read_disparity(gts.at(name));
    const Field pred = read_disparity(pp).disparity;
    rows.push_back({name, aepe(pred, gt), f1_bad3(pred, gt, relative), gt.n_valid()});
  }
  double ma = 0, mf = 0;
  std::size_t width = 6;
  for (const auto& r : rows) {
    ma += r.aepe;
    mf += r.f1;
    width = std::max(width, r.name.size());
  }
  ma /= double(rows.size());
  mf /= double(rows.size());

  const char* f1_label = relative ? "F1rel%" : "F1%";
  std::cout << std::left << std::setw(int(width)) << "sample" << std::right << std::setw(12) << "AEPE"
            << std::setw(10) << f1_label << std::setw(10) << "valid" << "\n";
  std::cout << std::fixed;
  for (const auto& r : rows)
    std::cout << std::left << std::setw(int(width)) << r.name << std::right << std::setw(12) << std::setprecision(4)
              << r.aepe << std::setw(10) << std::setprecision(2) << r.f1 << std::setw(10) << r.valid << "\n";
  std::cout << std::left << std::setw(int(width)) << "mean" << std::right << std::setw(12) << std::setprecision(4)
            << ma << std::setw(10) << std::setprecision(2) << mf << "\n";

  std::ostringstream csv;
  csv.precision(10);
  csv << "sample,aepe,f1,valid\n";
  for (const auto& r : rows) csv << r.name << ',' << r.aepe << ',' << r.f1 << ',' << r.valid << '\n';
  csv << "mean," << ma << ',' << mf << ",\n";
  write_file_atomic(csv_path, csv.str());
  return kOk;
}

// --- bench -----------------------------------------------------------------

struct BenchArgs {
  std::size_t height = 0, width = 0, k = 8, candidates = 48, iters = 8, channels = 32, hidden = 32;
  std::string mode = "sparse";
  double cap_mib = 1024;
  std::uint64_t seed = 0;
};

// Wraps a dense volume for the motion encoder without copying it: slot d of
// the view is candidate d. The index array is bookkeeping for the shared
// encoder code and is reported separately from the cost volume.
SparseCostVolume<float> dense_view(const DenseCostVolume<float>& dense) {
  const Tensor<float>& v = dense.costs.value();
  SparseCostVolume<float> s;
  s.n = v.dim(0);
  s.k = dense.candidates;
  s.h = v.dim(2);
  s.w = v.dim(3);
  s.candidates = dense.candidates;
  s.coords.assign(v.size(), -1);
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t d = 0; d < s.k; ++d)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = d; x < s.w; ++x) s.coords[s.index(b, d, y, x)] = std::int32_t(d);
  s.costs = dense.costs;
  return s;
}

int cmd_bench(const BenchArgs& a) {
  if (a.height == 0 || a.width == 0 || a.height % 4 || a.width % 4)
    throw DataError("bench extents must be positive multiples of 4");
  if (a.mode != "sparse" && a.mode != "dense") throw ConfigError("--mode must be sparse or dense");
  ModelConfig cfg;
  cfg.k = a.k;
  cfg.candidates = a.candidates;
  cfg.iterations = a.iters;
  cfg.feature_channels = a.channels;
  cfg.hidden_channels = a.hidden;
  cfg.validate();
  const std::size_t qh = a.height / 4, qw = a.width / 4;
  const std::size_t dense_bytes = qh * qw * a.candidates * sizeof(float);
  const auto cap = std::size_t(a.cap_mib * 1024 * 1024);
  if (a.mode == "dense" && dense_bytes > cap)
    throw NumericError("dense cost volume needs " + std::to_string(dense_bytes) + " bytes, over the cap of " +
                       std::to_string(cap) + " bytes");

  SynthSpec spec;
  spec.height = a.height;
  spec.width = a.width;
  spec.max_disparity = std::min(24.0, double(a.width) / 2 - 1);
  spec.seed = a.seed;
  const SamplePair pair = synth_pair(spec);
  const ParameterStore<float> p = init_model<float>(cfg, a.seed).detached();

  Tape<float> tape;
  const auto l = make_constant(images_to_tensor<float>({&pair.left}));
  const auto r = make_constant(images_to_tensor<float>({&pair.right}));
  const auto t0 = Clock::now();
  auto t = Clock::now();
  const auto [fl, fr] = extract_features(tape, l, r, p);
  const double t_feat = seconds_since(t);
  t = Clock::now();
  SparseCostVolume<float> scv;
  std::size_t cv_bytes = 0, index_bytes = 0;
  if (a.mode == "sparse") {
    scv = build_scv(tape, fl, fr, cfg.scv_options());
    cv_bytes = scv.bytes();
  } else {
    const DenseCostVolume<float> dense = dense_cost(tape, fl, fr, cfg.candidates);
    cv_bytes = dense.bytes();
    scv = dense_view(dense);
    index_bytes = scv.coords.capacity() * sizeof(std::int32_t);
  }
  const double t_cv = seconds_since(t);
  t = Clock::now();
  const Rollout<float> ro = iterate(tape, scv, fl, p, cfg.rollout_options());
  const double t_roll = seconds_since(t);
  const double total = seconds_since(t0);

  std::cout << std::fixed << std::setprecision(4);
  std::cout << "mode              " << a.mode << "\n"
            << "image             " << a.height << "x" << a.width << " (quarter " << qh << "x" << qw << ")\n"
            << "K / |D|           " << a.k << " / " << a.candidates << "\n"
            << "iterations        " << ro.full.size() << "\n"
            << "features_s        " << t_feat << "\n"
            << "cost_volume_s     " << t_cv << "\n"
            << "rollout_s         " << t_roll << "\n"
            << "total_s           " << total << "\n"
            << "cost_volume_bytes " << cv_bytes << "\n"
            << "dense_bytes       " << dense_bytes << "\n";
  if (a.mode == "dense") std::cout << "view_index_bytes  " << index_bytes << "\n";
  std::cout << "ratio_to_dense    " << double(cv_bytes) / double(dense_bytes) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse cost volume stereo matching"};
  app.require_subcommand(1);

  fs::path config;
  auto* train_cmd = app.add_subcommand("train", "train on synthetic or directory data");
  train_cmd->add_option("--config", config, "key=value config file")->required();

  fs::path left, right, params, out;
  std::optional<std::size_t> iters;
  bool dump_iters = false;
  auto* infer_cmd = app.add_subcommand("infer", "predict disparity for one pair");
  infer_cmd->add_option("--left", left)->required();
  infer_cmd->add_option("--right", right)->required();
  infer_cmd->add_option("--params", params, "checkpoint")->required();
  infer_cmd->add_option("--out", out, "output stem; .pfm and .png are written")->required();
  infer_cmd->add_option("--iters", iters, "update iterations (default: checkpoint value)");
  infer_cmd->add_flag("--dump-iters", dump_iters, "also write every intermediate estimate");

  fs::path pred_dir, gt_dir, csv_path = "eval.csv";
  bool relative = false;
  auto* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
  eval_cmd->add_option("--pred-dir", pred_dir)->required();
  eval_cmd->add_option("--gt-dir", gt_dir)->required();
  eval_cmd->add_flag("--relative-f1", relative, "bad pixel must also exceed 5% of the true disparity");
  eval_cmd->add_option("--csv", csv_path, "CSV output path")->capture_default_str();

  BenchArgs b;
  auto* bench_cmd = app.add_subcommand("bench", "time one rollout and report cost-volume memory");
  bench_cmd->add_option("--height", b.height, "image height")->required();
  bench_cmd->add_option("--width", b.width, "image width")->required();
  bench_cmd->add_option("--k", b.k)->capture_default_str();
  bench_cmd->add_option("--candidates", b.candidates, "quarter-resolution candidate count")->capture_default_str();
  bench_cmd->add_option("--mode", b.mode, "sparse or dense")->capture_default_str();
  bench_cmd->add_option("--iters", b.iters)->capture_default_str();
  bench_cmd->add_option("--channels", b.channels, "feature channels")->capture_default_str();
  bench_cmd->add_option("--hidden", b.hidden, "GRU hidden channels")->capture_default_str();
  bench_cmd->add_option("--memory-cap-mib", b.cap_mib, "dense mode refuses volumes above this")->capture_default_str();
  bench_cmd->add_option("--seed", b.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*train_cmd) return cmd_train(config);
    if (*infer_cmd) return cmd_infer(left, right, params, out, iters, dump_iters);
    if (*eval_cmd) return cmd_eval(pred_dir, gt_dir, relative, csv_path);
    if (*bench_cmd) return cmd_bench(b);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kConfig;
}
