// Acceptance suite: one PASS/FAIL line per criterion. Tolerances are fixed here.

#include <sys/wait.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <regex>
#include <sstream>

#include "scv/config.hpp"
#include "scv/grad_check.hpp"
#include "scv/oracle.hpp"

using namespace scv;
namespace fs = std::filesystem;
using TD = Tensor<double>;
using VD = Var<double>;

namespace {

// Pinned tolerances and limits.
constexpr double kTopkSeconds = 10;
constexpr double kDenseLimitTol = 1e-9;
constexpr double kDenseLimitSeconds = 10;
constexpr double kGradTol = 1e-3;
constexpr double kGradSeconds = 120;
constexpr double kGradEps = 1e-5;
constexpr double kUnselectedTol = 1e-10;
constexpr double kLossTol = 1e-12;
constexpr double kOverfitAepe = 0.5;
constexpr double kOverfitF1 = 2.0;
constexpr double kOverfitCpuSeconds = 15 * 60;
constexpr std::size_t kOverfitSteps = 2000;
constexpr double kMemoryRatio = 0.40;

// Overfit setup shared by criteria 6, 7, 8 and 10.
constexpr std::size_t kFeatureChannels = 32;
constexpr std::size_t kHiddenChannels = 32;
constexpr std::size_t kUpsampleChannels = 8;
constexpr double kLearningRate = 2e-4;

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  if (!pass) ++failures;
  std::printf("criterion %2d %s  %s | %s\n", id, pass ? "PASS" : "FAIL", what.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

TD random_tensor(const Shape& s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  TD t(s);
  for (auto& v : t.data()) v = u(g);
  return t;
}

// Every parameter redrawn so zero-initialized heads carry gradient too.
ParameterStore<double> randomized(ParameterStore<double> p, std::uint64_t seed, double scale) {
  for (auto& [name, v] : p) {
    TD& t = v.mutable_value();
    t = random_tensor(t.shape(), seed++, -scale, scale);
  }
  return p;
}

// --- 1 -----------------------------------------------------------------------

void criterion_topk() {
  const auto t0 = Clock::now();
  const std::size_t D = 12, H = 10, W = 111;  // pixels with x >= 11 have all 12 candidates in range
  std::size_t pixels = 0, mismatches = 0;
  for (std::size_t k : {1, 2, 4}) {
    Tape<double> tape;
    const TD fl = random_tensor(Shape{1, 6, H, W}, 100 + k), fr = random_tensor(Shape{1, 6, H, W}, 200 + k);
    const auto dense = dense_cost(tape, make_constant(fl), make_constant(fr), D);
    const auto scv = topk_select(tape, dense, k);
    const TD& c = dense.costs.value();
    std::mt19937_64 g(k);
    for (std::size_t i = 0; i < 1000; ++i) {
      const std::size_t y = g() % H, x = D - 1 + g() % (W - D + 1);
      std::vector<double> row(D);
      for (std::size_t d = 0; d < D; ++d) row[d] = c.at(0, d, y, x);
      const auto want = oracle::topk(row, k);
      std::vector<std::size_t> got;
      for (std::size_t s = 0; s < k; ++s) got.push_back(std::size_t(scv.coords[scv.index(0, s, y, x)]));
      std::sort(got.begin(), got.end());
      mismatches += got != want;
      ++pixels;
    }
  }
  const double secs = since(t0);
  report(1, mismatches == 0 && secs < kTopkSeconds, "top-K selection equals exhaustive subset argmax",
         std::to_string(pixels) + " pixels, " + std::to_string(mismatches) + " mismatches, " + fmt("%.2f s", secs));
}

// --- 2 -----------------------------------------------------------------------

void criterion_dense_limit() {
  const auto t0 = Clock::now();
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const TD fl = random_tensor(Shape{1, 8, 6, 6}, 300 + seed), fr = random_tensor(Shape{1, 8, 6, 6}, 400 + seed);
    const TD est = random_tensor(Shape{1, 1, 6, 6}, 500 + seed, 0, 8);
    Tape<double> tape;
    ScvOptions o;
    o.k = 8;
    o.candidates = 8;
    const auto scv = build_scv(tape, make_constant(fl), make_constant(fr), o);
    const TD sparse = encode_motion(tape, scv, est, 4).value();
    const TD dense = oracle::encoding(oracle::dense_costs(fl, fr, 8), est, 4, kPyramidLevels);
    worst = std::max(worst, max_abs_diff(sparse, dense));
  }
  const double secs = since(t0);
  report(2, worst <= kDenseLimitTol && secs < kDenseLimitSeconds, "K = |D| encoding equals dense oracle",
         "max abs diff " + fmt("%.3g", worst) + " over 10 instances, " + fmt("%.2f s", secs));
}

// --- 3 -----------------------------------------------------------------------

GradCheckReport<double> grad_cost_path() {
  const TD fl = random_tensor(Shape{1, 4, 4, 8}, 600), fr = random_tensor(Shape{1, 4, 4, 8}, 601);
  const TD w = random_tensor(Shape{1, 3, 4, 8}, 602);
  ScalarFn<double> f = [&](Tape<double>& t, const std::vector<VD>& in) {
    ScvOptions o;
    o.k = 3;
    o.candidates = 5;
    const auto scv = build_scv(t, in[0], in[1], o);
    return sum(t, mul(t, scv.costs, make_constant(w)));
  };
  return grad_check_report(f, {fl, fr}, kGradEps);
}

GradCheckReport<double> grad_gru_step() {
  UpdateWidths u;
  u.feature = 4;
  u.hidden = 6;
  u.upsample = 3;
  const auto base = randomized(init_update_params<double>(7, u), 700, 0.5);
  std::vector<std::string> names;
  std::vector<TD> inputs{random_tensor(Shape{1, u.hidden, 3, 3}, 710, -0.9, 0.9),
                         random_tensor(Shape{1, u.input_channels(), 3, 3}, 711)};
  for (const auto& [name, v] : base)
    if (name.rfind("upd.gru", 0) == 0 || name.rfind("upd.head", 0) == 0) {
      names.push_back(name);
      inputs.push_back(v.value());
    }
  const TD wd = random_tensor(Shape{1, 1, 3, 3}, 712), wh = random_tensor(Shape{1, u.hidden, 3, 3}, 713);
  ScalarFn<double> f = [&](Tape<double>& t, const std::vector<VD>& in) {
    ParameterStore<double> p = base.detached();
    for (std::size_t i = 0; i < names.size(); ++i) p.rebind(names[i], in[i + 2]);
    const auto out = gru_step(t, in[0], in[1], p);
    return add(t, sum(t, mul(t, out.delta, make_constant(wd))), sum(t, mul(t, out.hidden, make_constant(wh))));
  };
  return grad_check_report(f, inputs, kGradEps);
}

// Whole model on a 16x24 synthetic pair, differentiated with respect to both
// input images, so every backward rule on the path from pixels to loss is
// exercised. Shift positions come from one reference rollout and are held fixed.
GradCheckReport<double> grad_end_to_end() {
  ModelConfig cfg;
  cfg.feature_channels = 8;
  cfg.hidden_channels = 6;
  cfg.upsample_channels = 3;
  cfg.k = 3;
  cfg.candidates = 4;
  cfg.iterations = 2;
  SynthSpec s;
  s.height = 16;
  s.width = 24;
  s.max_disparity = 8;
  s.seed = 5;
  const SamplePair pair = synth_pair(s);
  const auto p = randomized(init_model<double>(cfg, 3), 800, 0.3);
  const TD left = images_to_tensor<double>({&pair.left}), right = images_to_tensor<double>({&pair.right});
  const std::vector<GroundTruth> gts{*pair.gt};

  RolloutOptions ro = cfg.rollout_options();
  {
    Tape<double> t;
    const auto pred = predict(t, p, cfg, make_constant(left), make_constant(right));
    ro.shift_estimates = pred.rollout.shifts;
  }
  ScalarFn<double> f = [&](Tape<double>& t, const std::vector<VD>& in) {
    const auto [fl, fr] = extract_features(t, in[0], in[1], p);
    const auto scv = build_scv(t, fl, fr, cfg.scv_options());
    const auto roll = iterate(t, scv, fl, p, ro);
    return sequence_loss(t, roll.full, std::span<const GroundTruth>(gts), 0.8);
  };
  return grad_check_report(f, {left, right}, kGradEps);
}

std::string describe(const char* name, const GradCheckReport<double>& r) {
  std::ostringstream os;
  os << name << ' ' << fmt("%.2e", r.max_relative_error) << " (" << r.coordinates << " coords)";
  return os.str();
}

void criterion_gradients() {
  const auto t0 = Clock::now();
  const auto a = grad_cost_path(), b = grad_gru_step(), c = grad_end_to_end();
  const double secs = since(t0);
  const double worst = std::max({a.max_relative_error, b.max_relative_error, c.max_relative_error});
  report(3, worst < kGradTol && secs < kGradSeconds, "gradient checks in 64-bit",
         describe("cost path", a) + ", " + describe("gru_step", b) + ", " + describe("end-to-end", c) + ", " +
             fmt("%.1f s", secs));
  if (c.max_relative_error >= kGradTol)
    std::printf("  end-to-end worst: input %zu index %zu analytic %.6e numeric %.6e\n", c.worst_input, c.worst_index,
                c.analytic, c.numeric);
}

// --- 4 -----------------------------------------------------------------------

// Quarter-resolution 1x3 instance with one feature channel. F_l = 1 so each
// cost is F_r(x - d); every pixel selects the match with F_r(0).
double toy_loss(const TD& fr) {
  UpdateWidths u;
  u.feature = 1;
  u.hidden = 4;
  u.upsample = 2;
  u.d_max = 2;
  const auto p = randomized(init_update_params<double>(9, u), 900, 0.5);
  const TD fl(Shape{1, 1, 1, 3}, 1.0);
  GroundTruth gt;
  gt.disparity = Field(4, 12, 2.0f);
  gt.valid.assign(48, 1);
  Tape<double> t;
  ScvOptions o;
  o.k = 1;
  o.candidates = 3;
  const auto flv = make_constant(fl);
  const auto scv = build_scv(t, flv, make_constant(fr), o);
  RolloutOptions ro;
  ro.iterations = 2;
  ro.d_max = u.d_max;
  const auto roll = iterate(t, scv, flv, p, ro);
  const std::vector<GroundTruth> gts{gt};
  return sequence_loss(t, roll.full, std::span<const GroundTruth>(gts), 0.8).value()[0];
}

void criterion_unselected() {
  TD fr(Shape{1, 1, 1, 3});
  fr[0] = 5;
  fr[1] = 1;
  fr[2] = -1;
  const double base = toy_loss(fr);
  double worst = 0;
  for (std::size_t x : {1, 2})
    for (double eps : {1e-3, -1e-3}) {
      TD q = fr;
      q[x] += eps;
      worst = std::max(worst, std::abs(toy_loss(q) - base));
    }
  TD q = fr;
  q[0] += 1e-3;
  const double used = std::abs(toy_loss(q) - base);
  report(4, worst < kUnselectedTol && used > 0, "unselected feature entries do not move the loss",
         "max change " + fmt("%.3g", worst) + " (selected entry moves it by " + fmt("%.3g", used) + ")");
}

// --- 5 -----------------------------------------------------------------------

double scalar_loss(const std::vector<TD>& preds, const std::vector<GroundTruth>& gts, double alpha) {
  const std::size_t n = preds.size();
  double wsum = 0;
  for (std::size_t i = 1; i <= n; ++i) wsum += std::pow(alpha, double(n - i));
  double total = 0;
  for (std::size_t b = 0; b < gts.size(); ++b) {
    const GroundTruth& g = gts[b];
    const std::size_t hw = g.valid.size();
    for (std::size_t i = 1; i <= n; ++i) {
      double s = 0;
      std::size_t count = 0;
      for (std::size_t p = 0; p < hw; ++p) {
        if (!g.valid[p]) continue;
        const double e = std::abs(double(g.disparity.data[p]) - preds[i - 1][b * hw + p]);
        s += e < 1 ? 0.5 * e * e : e - 0.5;
        ++count;
      }
      total += std::pow(alpha, double(n - i)) / wsum * s / double(count);
    }
  }
  return total / double(gts.size());
}

void criterion_sequence_loss() {
  double worst = 0;
  std::mt19937_64 g(5);
  for (std::size_t n : {1, 2, 8}) {
    std::vector<GroundTruth> gts(2);
    for (auto& gt : gts) {
      gt.disparity = Field(6, 10);
      gt.valid.resize(60);
      for (std::size_t p = 0; p < 60; ++p) {
        gt.disparity.data[p] = float(double(g() % 4000) / 100.0);
        gt.valid[p] = g() % 5 != 0;
      }
    }
    std::vector<TD> preds;
    std::vector<VD> vars;
    for (std::size_t i = 0; i < n; ++i) {
      preds.push_back(random_tensor(Shape{2, 1, 6, 10}, 1000 + 10 * n + i, -2, 42));
      vars.push_back(make_constant(preds.back()));
    }
    Tape<double> t;
    const double got = sequence_loss(t, vars, std::span<const GroundTruth>(gts), 0.8).value()[0];
    worst = std::max(worst, std::abs(got - scalar_loss(preds, gts, 0.8)));
  }
  report(5, worst <= kLossTol, "sequence loss equals scalar evaluation", "max abs diff " + fmt("%.3g", worst));
}

// --- 6, 7, 8 -------------------------------------------------------------------

std::vector<SamplePair> overfit_pairs() {
  std::vector<SamplePair> out;
  for (std::uint64_t i = 1; i <= 4; ++i) {
    SynthSpec s;
    s.height = 64;
    s.width = 96;
    s.max_disparity = 24;
    s.seed = i;
    out.push_back(synth_pair(s));
  }
  return out;
}

TrainConfig overfit_config(std::size_t k) {
  TrainConfig c;
  c.model.feature_channels = kFeatureChannels;
  c.model.hidden_channels = kHiddenChannels;
  c.model.upsample_channels = kUpsampleChannels;
  c.model.candidates = 16;
  c.model.k = k;
  c.model.iterations = 8;
  c.lr = kLearningRate;
  c.steps = kOverfitSteps;
  c.batch_size = 4;
  c.seed = 0;
  c.log_interval = 100;
  return c;
}

struct Evaluation {
  std::vector<double> aepe_per_step;  // mean over pairs, per iteration
  double f1 = 0;
};

Evaluation evaluate(const ParameterStore<float>& p, const ModelConfig& cfg, const std::vector<SamplePair>& data) {
  Evaluation e;
  e.aepe_per_step.assign(cfg.iterations, 0.0);
  for (const auto& pair : data) {
    const auto seq = infer_sequence(p, cfg, pair.left, pair.right);
    for (std::size_t i = 0; i < seq.size(); ++i) e.aepe_per_step[i] += aepe(seq[i], *pair.gt) / double(data.size());
    e.f1 += f1_bad3(seq.back(), *pair.gt) / double(data.size());
  }
  return e;
}

struct TrainedRun {
  Evaluation eval;
  double cpu_seconds;
};

TrainedRun train_and_evaluate(std::size_t k, const std::vector<SamplePair>& data) {
  const TrainConfig cfg = overfit_config(k);
  const std::clock_t c0 = std::clock();
  const auto res = train<float>(cfg, data, [k](const LogRow& r) {
    std::printf("  [K=%zu] step %5zu loss %.4f aepe %.4f f1 %.3f\n", k, r.step, r.loss, r.aepe, r.f1);
    std::fflush(stdout);
  });
  const double cpu = double(std::clock() - c0) / CLOCKS_PER_SEC;
  return {evaluate(res.params, cfg.model, data), cpu};
}

void criteria_training() {
  const auto data = overfit_pairs();
  const TrainedRun k8 = train_and_evaluate(8, data);
  const double a8 = k8.eval.aepe_per_step.back();
  report(6, a8 < kOverfitAepe && k8.eval.f1 < kOverfitF1 && k8.cpu_seconds < kOverfitCpuSeconds,
         "overfit 4 synthetic pairs in 2000 steps",
         "AEPE " + fmt("%.4f", a8) + " px (< 0.5), F1 " + fmt("%.3f", k8.eval.f1) + "% (< 2), CPU " +
             fmt("%.1f s", k8.cpu_seconds) + " (< 900)");

  const double a1 = k8.eval.aepe_per_step.front();
  report(8, a8 <= a1, "refinement improves over iterations",
         "AEPE D^1 " + fmt("%.4f", a1) + ", D^8 " + fmt("%.4f", a8));

  const TrainedRun k1 = train_and_evaluate(1, data);
  const double b8 = k1.eval.aepe_per_step.back();
  report(7, a8 <= b8, "K = 8 is no worse than K = 1", "AEPE K=8 " + fmt("%.4f", a8) + ", K=1 " + fmt("%.4f", b8));
}

// --- 9, 10 -------------------------------------------------------------------

struct CliRun {
  int code;
  std::string out;
};

CliRun run_cli(const std::string& args, const fs::path& dir) {
  const fs::path log = dir / "cli_stdout.txt";
  const std::string cmd = std::string(SCV_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(log)};
}

double field(const std::string& out, const std::string& key) {
  std::smatch m;
  if (!std::regex_search(out, m, std::regex(key + "\\s+([0-9.eE+-]+)"))) return NAN;
  return std::stod(m[1]);
}

void criterion_memory(const fs::path& dir) {
  const CliRun r = run_cli("bench --height 384 --width 1280 --candidates 48 --k 8 --mode sparse", dir);
  const double sparse = field(r.out, "cost_volume_bytes"), dense = field(r.out, "dense_bytes");
  const double ratio = sparse / dense;
  report(9, r.code == 0 && ratio <= kMemoryRatio, "sparse cost volume memory at 96x320 quarter resolution",
         "sparse " + fmt("%.0f", sparse) + " B, dense " + fmt("%.0f", dense) + " B, ratio " + fmt("%.4f", ratio) +
             " (<= 0.40)");
}

void criterion_determinism(const fs::path& dir) {
  const TrainConfig c = overfit_config(8);
  std::ostringstream cfg;
  cfg << "feature_channels=" << c.model.feature_channels << "\nhidden_channels=" << c.model.hidden_channels
      << "\nupsample_channels=" << c.model.upsample_channels << "\ncandidates=16\nk=8\niterations=8\nsteps=10\n"
      << "batch_size=4\nseed=0\nsynth_count=4\nsynth_seed=1\nsynth_height=64\nsynth_width=96\n"
      << "synth_max_disparity=24\n";
  std::string logs[2];
  bool ok = true;
  for (int i = 0; i < 2; ++i) {
    const fs::path out = dir / ("det" + std::to_string(i));
    const fs::path cfg_path = dir / ("det" + std::to_string(i) + ".cfg");
    write_file_atomic(cfg_path, cfg.str() + "output_dir=" + out.string() + "\n");
    ok = ok && run_cli("train --config " + cfg_path.string(), dir).code == 0;
    logs[i] = ok ? read_file(out / "log.csv") : "";
  }
  const auto rows = std::count(logs[0].begin(), logs[0].end(), '\n') - 1;
  report(10, ok && rows == 10 && logs[0] == logs[1], "identical seeds give bit-identical loss logs",
         std::to_string(rows) + " rows, logs " + (logs[0] == logs[1] ? "identical" : "differ"));
}

// --- 11 ----------------------------------------------------------------------

void criterion_io(const fs::path& dir) {
  std::mt19937_64 g(11);
  std::size_t pfm_bad = 0, png_bad = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = 1 + g() % 40, w = 1 + g() % 60;
    Field f(h, w), k(h, w);
    for (auto& v : f.data) v = std::bit_cast<float>(std::uint32_t(g()) & 0xbf7fffffu);  // finite, any sign
    for (auto& v : k.data) v = float(1 + g() % 65535) / 256.f;
    write_pfm(f, dir / "rt.pfm");
    const Field back = read_pfm(dir / "rt.pfm");
    pfm_bad += std::memcmp(back.data.data(), f.data.data(), f.data.size() * sizeof(float)) != 0 ||
               back.height != h || back.width != w;
    write_kitti_disparity(k, dir / "rt.png");
    const GroundTruth gk = read_kitti_disparity(dir / "rt.png");
    png_bad += !(gk.disparity == k) || gk.n_valid() != h * w;
  }
  report(11, pfm_bad == 0 && png_bad == 0, "PFM and KITTI PNG round trips are identities",
         "20 random fields each, " + std::to_string(pfm_bad) + " PFM and " + std::to_string(png_bad) +
             " PNG mismatches");
}

}  // namespace

int main() {
  const fs::path dir = fs::temp_directory_path() / "scv_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::vector<std::pair<const char*, std::function<void()>>> steps = {
      {"1", criterion_topk},
      {"2", criterion_dense_limit},
      {"3", criterion_gradients},
      {"4", criterion_unselected},
      {"5", criterion_sequence_loss},
      {"9", [&] { criterion_memory(dir); }},
      {"10", [&] { criterion_determinism(dir); }},
      {"11", [&] { criterion_io(dir); }},
      {"6-8", criteria_training},
  };
  for (const auto& [id, fn] : steps) {
    try {
      fn();
    } catch (const std::exception& e) {
      ++failures;
      std::printf("criterion %s FAIL  exception: %s\n", id, e.what());
    }
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
