#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "scv/data_io.hpp"
#include "scv/model.hpp"

namespace scv {

// ---------------------------------------------------------------------------
// Loss

/// x - 0.5 for x >= 1, x^2 / 2 below.
inline double smooth_l1(double x) { return x >= 1.0 ? x - 0.5 : 0.5 * x * x; }

/// Derivative of smooth_l1 at |e|, signed by e.
inline double smooth_l1_grad(double e) {
  const double a = std::abs(e);
  if (a >= 1.0) return e > 0 ? 1.0 : -1.0;
  return e;
}

/// Per-step weights alpha^(N-i) / sum_j alpha^(N-j), i = 1..N.
inline std::vector<double> sequence_weights(std::size_t steps, double alpha) {
  std::vector<double> w(steps);
  double total = 0;
  for (std::size_t i = 0; i < steps; ++i) total += w[i] = std::pow(alpha, double(steps - 1 - i));
  for (auto& v : w) v /= total;
  return w;
}

/// Exponentially weighted smooth-L1 over a prediction sequence, each step
/// averaged over valid pixels. Batched predictions average the per-sample
/// losses. preds[i] is (N,1,H,W); gts[b] matches sample b.
template <class T>
Var<T> sequence_loss(Tape<T>& tape, const std::vector<Var<T>>& preds, std::span<const GroundTruth> gts, double alpha) {
  if (preds.empty()) throw ConfigError("sequence_loss: empty prediction sequence");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("sequence_loss: alpha must be in (0, 1]");
  const Shape& s0 = preds[0].shape();
  require_rank("sequence_loss prediction", 4, s0);
  const std::size_t n = s0[0], h = s0[2], w = s0[3], hw = h * w;
  if (gts.size() != n) throw ShapeError("sequence_loss: ground truth count", Shape{n}, Shape{gts.size()});
  std::vector<double> inv_valid(n);
  for (std::size_t b = 0; b < n; ++b) {
    const GroundTruth& g = gts[b];
    if (g.disparity.height != h || g.disparity.width != w)
      throw ShapeError("sequence_loss: ground truth extents", Shape{h, w}, Shape{g.disparity.height, g.disparity.width});
    const std::size_t nv = g.n_valid();
    if (nv == 0) throw ConfigError("sequence_loss: ground truth has no valid pixels");
    inv_valid[b] = 1.0 / double(nv);
  }
  bool needs = false;
  for (const auto& p : preds) {
    require_shape("sequence_loss prediction", s0, p.shape());
    needs = needs || p.requires_grad();
  }
  const std::vector<double> weights = sequence_weights(preds.size(), alpha);
  double loss = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const Tensor<T>& v = preds[i].value();
    for (std::size_t b = 0; b < n; ++b) {
      const GroundTruth& g = gts[b];
      double s = 0;
      for (std::size_t p = 0; p < hw; ++p)
        if (g.valid[p]) s += smooth_l1(std::abs(double(g.disparity.data[p]) - double(v[b * hw + p])));
      loss += weights[i] * s * inv_valid[b] / double(n);
    }
  }
  if (!std::isfinite(loss)) throw NumericError("sequence_loss: non-finite loss");
  std::vector<GroundTruth> gt_copy(gts.begin(), gts.end());
  return tape.record_if(Tensor<T>::scalar(T(loss)), needs,
                        [preds, gt = std::move(gt_copy), weights, inv_valid, n, hw](const Node<T>& self) {
                          const double up = double(self.grad[0]);
                          for (std::size_t i = 0; i < preds.size(); ++i)
                            accumulate(preds[i], [&](Tensor<T>& g) {
                              const Tensor<T>& v = preds[i].value();
                              for (std::size_t b = 0; b < n; ++b) {
                                const double scale = up * weights[i] * inv_valid[b] / double(n);
                                for (std::size_t p = 0; p < hw; ++p)
                                  if (gt[b].valid[p])
                                    g[b * hw + p] += T(scale * smooth_l1_grad(double(v[b * hw + p]) -
                                                                              double(gt[b].disparity.data[p])));
                              }
                            });
                        });
}

// ---------------------------------------------------------------------------
// Metrics

inline void check_metric_inputs(const Field& pred, const GroundTruth& gt) {
  if (pred.height != gt.disparity.height || pred.width != gt.disparity.width)
    throw ShapeError("metric: prediction extents", Shape{gt.disparity.height, gt.disparity.width},
                     Shape{pred.height, pred.width});
  if (gt.n_valid() == 0) throw ConfigError("metric: ground truth has no valid pixels");
}

/// Mean |pred - gt| over valid pixels.
inline double aepe(const Field& pred, const GroundTruth& gt) {
  check_metric_inputs(pred, gt);
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i)
    if (gt.valid[i]) {
      s += std::abs(double(pred.data[i]) - double(gt.disparity.data[i]));
      ++n;
    }
  return s / double(n);
}

/// Percentage of valid pixels whose error is strictly above 3 px. With
/// `relative`, a pixel is bad only if its error also exceeds 5% of the gt.
inline double f1_bad3(const Field& pred, const GroundTruth& gt, bool relative = false) {
  check_metric_inputs(pred, gt);
  std::size_t bad = 0, n = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i)
    if (gt.valid[i]) {
      const double g = gt.disparity.data[i];
      const double e = std::abs(double(pred.data[i]) - g);
      if (e > 3.0 && (!relative || e > 0.05 * std::abs(g))) ++bad;
      ++n;
    }
  return 100.0 * double(bad) / double(n);
}

// ---------------------------------------------------------------------------
// Adam

template <class T>
struct OptimizerState {
  std::vector<Tensor<T>> m, v;
  std::size_t step = 0;
  double lr = 2e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

template <class T>
OptimizerState<T> make_adam(const ParameterStore<T>& p, double lr) {
  OptimizerState<T> s;
  s.lr = lr;
  for (const auto& [_, v] : p) {
    s.m.emplace_back(v.shape());
    s.v.emplace_back(v.shape());
  }
  return s;
}

/// Global gradient L2 norm over all parameters.
template <class T>
double grad_norm(const ParameterStore<T>& p) {
  double s = 0;
  for (const auto& [_, v] : p)
    if (v.has_grad())
      for (T g : v.node()->grad.data()) s += double(g) * double(g);
  return std::sqrt(s);
}

/// Clips the global gradient norm to `clip` (if > 0), then takes one Adam step.
template <class T>
void adam_step(ParameterStore<T>& p, OptimizerState<T>& s, double clip) {
  const double norm = grad_norm(p);
  const double factor = clip > 0 && norm > clip ? clip / norm : 1.0;
  ++s.step;
  const double bc1 = 1.0 - std::pow(s.beta1, double(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, double(s.step));
  std::size_t idx = 0;
  for (auto& [_, var] : p) {
    Tensor<T>& m = s.m[idx];
    Tensor<T>& v = s.v[idx];
    ++idx;
    if (!var.has_grad()) continue;
    const Tensor<T>& g = var.node()->grad;
    Tensor<T>& w = var.mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = double(g[i]) * factor;
      m[i] = T(s.beta1 * double(m[i]) + (1 - s.beta1) * gi);
      v[i] = T(s.beta2 * double(v[i]) + (1 - s.beta2) * gi * gi);
      const double mh = double(m[i]) / bc1, vh = double(v[i]) / bc2;
      w[i] = T(double(w[i]) - s.lr * mh / (std::sqrt(vh) + s.eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  ModelConfig model;
  double alpha = 0.8;
  double lr = 2e-4;
  double clip = 1.0;
  std::size_t steps = 100;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  std::size_t log_interval = 1;
  std::size_t checkpoint_interval = 0;  // 0: only at the end
  std::filesystem::path output_dir;     // empty: nothing written
};

struct LogRow {
  std::size_t step = 0;
  double loss = 0, aepe = 0, f1 = 0;
};

template <class T>
struct TrainResult {
  ParameterStore<T> params;
  std::vector<LogRow> log;
  double seconds = 0;
};

inline std::string log_csv(const std::vector<LogRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "step,loss,aepe,f1\n";
  for (const auto& r : rows) os << r.step << ',' << r.loss << ',' << r.aepe << ',' << r.f1 << '\n';
  return os.str();
}

/// Batch of samples [first, first+count) cycling through the dataset.
struct Batch {
  Tensor<float> left, right;
  std::vector<GroundTruth> gt;
};

inline Batch make_batch(const std::vector<SamplePair>& data, std::size_t first, std::size_t count) {
  std::vector<const StereoImage*> l, r;
  Batch b;
  for (std::size_t i = 0; i < count; ++i) {
    const SamplePair& s = data[(first + i) % data.size()];
    if (!s.gt) throw ConfigError("training sample " + s.id + " has no ground truth");
    l.push_back(&s.left);
    r.push_back(&s.right);
    b.gt.push_back(*s.gt);
  }
  b.left = images_to_tensor<float>(l);
  b.right = images_to_tensor<float>(r);
  return b;
}

/// Mean AEPE and F1 of the final prediction over a batch.
template <class T>
std::pair<double, double> batch_metrics(const Tensor<T>& pred, std::span<const GroundTruth> gts) {
  double a = 0, f = 0;
  for (std::size_t b = 0; b < gts.size(); ++b) {
    const Field fld = tensor_to_field(pred, b);
    a += aepe(fld, gts[b]);
    f += f1_bad3(fld, gts[b]);
  }
  return {a / double(gts.size()), f / double(gts.size())};
}

/// Thrown when a step produces a non-finite loss or activation. The last
/// good parameters have already been checkpointed (when an output dir is set).
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, std::size_t step) : NumericError(what), step_(step) {}
  [[nodiscard]] std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Adam on the sequence loss. `on_log` sees each log row as it is produced.
template <class T>
TrainResult<T> train(const TrainConfig& cfg, const std::vector<SamplePair>& data,
                     const std::function<void(const LogRow&)>& on_log = {}) {
  if (data.empty()) throw ConfigError("training dataset is empty");
  cfg.model.validate();
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult<T> res;
  res.params = init_model<T>(cfg.model, cfg.seed);
  OptimizerState<T> opt = make_adam(res.params, cfg.lr);
  const std::size_t bs = std::min(cfg.batch_size, data.size());
  const std::filesystem::path ckpt = cfg.output_dir.empty() ? "" : cfg.output_dir / "checkpoint.scvw";
  const std::filesystem::path logp = cfg.output_dir.empty() ? "" : cfg.output_dir / "log.csv";
  auto flush = [&]() {
    if (cfg.output_dir.empty()) return;
    save_model(res.params, cfg.model, ckpt);
    write_file_atomic(logp, log_csv(res.log));
  };

  std::size_t cursor = 0;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const Batch batch = make_batch(data, cursor, bs);
    cursor = (cursor + bs) % data.size();
    double loss_value = 0;
    Tensor<T> final_pred;
    try {
      Tape<T> tape;
      const Var<T> left = make_constant(batch.left.template cast<T>());
      const Var<T> right = make_constant(batch.right.template cast<T>());
      const Prediction<T> pred = predict(tape, res.params, cfg.model, left, right);
      const Var<T> loss = sequence_loss(tape, pred.rollout.full, std::span<const GroundTruth>(batch.gt), cfg.alpha);
      loss_value = double(loss.value()[0]);
      if (!std::isfinite(loss_value)) throw NumericError("non-finite loss");
      final_pred = pred.rollout.full.back().value();
      res.params.zero_grad();
      tape.backward(loss);
      if (!std::isfinite(grad_norm(res.params))) throw NumericError("non-finite gradient");
    } catch (const NumericError& e) {
      flush();
      throw TrainingDiverged(std::string("step ") + std::to_string(step) + ": " + e.what(), step);
    }
    adam_step(res.params, opt, cfg.clip);
    if (cfg.log_interval && (step % cfg.log_interval == 0 || step == cfg.steps)) {
      const auto [a, f] = batch_metrics(final_pred, std::span<const GroundTruth>(batch.gt));
      res.log.push_back({step, loss_value, a, f});
      if (on_log) on_log(res.log.back());
    }
    if (cfg.checkpoint_interval && step % cfg.checkpoint_interval == 0) flush();
  }
  res.params.zero_grad();
  flush();
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

/// Runs inference and returns the full-resolution sequence D^1..D^N for sample `n`.
template <class T>
std::vector<Field> infer_sequence(const ParameterStore<T>& p, const ModelConfig& cfg, const StereoImage& left,
                                  const StereoImage& right, std::optional<std::size_t> iterations = std::nullopt) {
  Tape<T> tape;
  const Var<T> l = make_constant(images_to_tensor<T>({&left}));
  const Var<T> r = make_constant(images_to_tensor<T>({&right}));
  const Prediction<T> pred = predict(tape, p.detached(), cfg, l, r, iterations);
  std::vector<Field> out;
  for (const auto& v : pred.rollout.full) out.push_back(tensor_to_field(v.value()));
  return out;
}

}  // namespace scv
