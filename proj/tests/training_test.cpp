#include <gtest/gtest.h>

#include <filesystem>

#include "scv/grad_check.hpp"
#include "scv/training.hpp"
#include "test_util.hpp"

using namespace scv;
using V = Var<double>;
using T = Tensor<double>;
namespace fs = std::filesystem;

namespace {

GroundTruth gt_of(std::vector<float> d, std::vector<std::uint8_t> valid, std::size_t h = 1) {
  GroundTruth g;
  g.disparity = Field(h, d.size() / h);
  g.disparity.data = std::move(d);
  g.valid = std::move(valid);
  return g;
}

Field field_of(std::vector<float> d, std::size_t h = 1) {
  Field f(h, d.size() / h);
  f.data = std::move(d);
  return f;
}

V pred_of(const std::vector<double>& v) { return make_constant(T(Shape{1, 1, 1, v.size()}, v)); }

double loss_value(const std::vector<V>& preds, const GroundTruth& g, double alpha = 0.8) {
  Tape<double> t;
  return sequence_loss(t, preds, std::span<const GroundTruth>(&g, 1), alpha).value()[0];
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.model.feature_channels = 8;
  c.model.hidden_channels = 8;
  c.model.upsample_channels = 4;
  c.model.k = 4;
  c.model.candidates = 6;
  c.model.iterations = 2;
  c.steps = 3;
  c.batch_size = 2;
  c.seed = 11;
  return c;
}

std::vector<SamplePair> tiny_data() {
  std::vector<SamplePair> d;
  for (std::uint64_t s = 0; s < 2; ++s) {
    SynthSpec sp;
    sp.height = 16;
    sp.width = 32;
    sp.max_disparity = 6;
    sp.seed = s;
    d.push_back(synth_pair(sp));
  }
  return d;
}

}  // namespace

TEST(SmoothL1, Values) {
  EXPECT_DOUBLE_EQ(smooth_l1(0.5), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(2.0), 1.5);
  EXPECT_DOUBLE_EQ(smooth_l1(1.0), 0.5);
  EXPECT_DOUBLE_EQ(0.5 * 1.0 * 1.0, 1.0 - 0.5);
}

TEST(SequenceLoss, SingleStep) {
  const GroundTruth g = gt_of({1, 2, 3}, {1, 1, 1});
  EXPECT_DOUBLE_EQ(loss_value({pred_of({1.5, 2.5, 2.5})}, g), 0.125);
}

TEST(SequenceLoss, WeightsSumToOne) {
  const GroundTruth g = gt_of({0, 0}, {1, 1});
  EXPECT_DOUBLE_EQ(loss_value({pred_of({0.5, -0.5}), pred_of({-0.5, 0.5})}, g), 0.125);
  for (std::size_t n : {1u, 2u, 5u, 8u}) {
    double s = 0;
    for (double w : sequence_weights(n, 0.8)) s += w;
    EXPECT_NEAR(s, 1.0, 1e-15);
  }
}

TEST(SequenceLoss, TwoStepWeighting) {
  // Step means 0.2 and 0.1: errors sqrt(0.4) and sqrt(0.2) on a single pixel.
  const GroundTruth g = gt_of({0}, {1});
  const double l = loss_value({pred_of({std::sqrt(0.4)}), pred_of({std::sqrt(0.2)})}, g);
  EXPECT_NEAR(l, (0.8 * 0.2 + 1.0 * 0.1) / 1.8, 1e-15);
}

TEST(SequenceLoss, InvalidPixelsIgnored) {
  const GroundTruth g = gt_of({1, 2, 3}, {1, 0, 1});
  EXPECT_EQ(loss_value({pred_of({1.5, 100, 2.5})}, g), loss_value({pred_of({1.5, -7, 2.5})}, g));
  EXPECT_DOUBLE_EQ(loss_value({pred_of({1.5, 100, 2.5})}, g), 0.125);
}

TEST(SequenceLoss, RejectsBadInputs) {
  const GroundTruth g = gt_of({1, 2}, {0, 0});
  EXPECT_THROW(loss_value({pred_of({1, 2})}, g), ConfigError);
  EXPECT_THROW(loss_value({pred_of({1, 2, 3})}, gt_of({1, 2}, {1, 1})), ShapeError);
  EXPECT_THROW(loss_value({}, gt_of({1}, {1})), ConfigError);
}

TEST(SequenceLoss, GradCheck) {
  const GroundTruth g = gt_of({0.5f, 2.0f, -1.0f, 4.0f, 3.0f, 0.0f}, {1, 1, 0, 1, 1, 1}, 2);
  ScalarFn<double> f = [&](Tape<double>& t, const std::vector<V>& in) {
    return sequence_loss(t, in, std::span<const GroundTruth>(&g, 1), 0.8);
  };
  EXPECT_LT(grad_check(f,
                       {test::random_tensor(Shape{1, 1, 2, 3}, 1, -2, 5), test::random_tensor(Shape{1, 1, 2, 3}, 2, -2, 5),
                        test::random_tensor(Shape{1, 1, 2, 3}, 3, -2, 5)},
                       1e-6),
            1e-6);
}

TEST(Metrics, Aepe) {
  EXPECT_DOUBLE_EQ(aepe(field_of({1, 2}), gt_of({1, 4}, {1, 1})), 1.0);
  EXPECT_DOUBLE_EQ(aepe(field_of({1, 4}), gt_of({1, 4}, {1, 1})), 0.0);
  EXPECT_DOUBLE_EQ(aepe(field_of({1, 2}), gt_of({1, 4}, {1, 0})), 0.0);
}

TEST(Metrics, F1Bad3) {
  EXPECT_DOUBLE_EQ(f1_bad3(field_of({0.5f, 3.5f, 2.9f, 4.0f}), gt_of({0, 0, 0, 0}, {1, 1, 1, 1})), 50.0);
  EXPECT_DOUBLE_EQ(f1_bad3(field_of({1, 2}), gt_of({1, 2}, {1, 1})), 0.0);
  EXPECT_DOUBLE_EQ(f1_bad3(field_of({3.0f}), gt_of({0}, {1})), 0.0);
}

TEST(Metrics, RelativeF1) {
  // Error 4 px: bad in absolute mode; under the 5% rule only if gt < 80.
  EXPECT_DOUBLE_EQ(f1_bad3(field_of({104, 14}), gt_of({100, 10}, {1, 1}), true), 50.0);
  EXPECT_DOUBLE_EQ(f1_bad3(field_of({104, 14}), gt_of({100, 10}, {1, 1}), false), 100.0);
}

TEST(Metrics, MatchScalarReference) {
  std::mt19937 g(5);
  std::uniform_real_distribution<float> u(0, 20);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> p(50), d(50);
    std::vector<std::uint8_t> v(50);
    for (int i = 0; i < 50; ++i) {
      p[i] = u(g);
      d[i] = u(g);
      v[i] = g() % 4 != 0;
    }
    v[0] = 1;
    double s = 0, n = 0, bad = 0;
    for (int i = 0; i < 50; ++i)
      if (v[i]) s += std::abs(double(p[i]) - d[i]), n += 1, bad += std::abs(double(p[i]) - d[i]) > 3;
    EXPECT_NEAR(aepe(field_of(p), gt_of(d, v)), s / n, 1e-12);
    EXPECT_NEAR(f1_bad3(field_of(p), gt_of(d, v)), 100 * bad / n, 1e-12);
  }
}

TEST(Metrics, ShapeMismatchRejected) {
  EXPECT_THROW(aepe(field_of({1, 2, 3}), gt_of({1, 2}, {1, 1})), ShapeError);
}

TEST(Adam, ClipsGlobalNorm) {
  ParameterStore<double> p;
  p.add("w", T(Shape{2}, {0, 0}));
  p["w"].node()->grad_buffer() = T(Shape{2}, {30, 40});
  auto s = make_adam(p, 0.1);
  adam_step(p, s, 1.0);
  // First Adam step moves each coordinate by lr in the gradient's sign.
  EXPECT_NEAR(p["w"].value()[0], -0.1, 1e-6);
  EXPECT_NEAR(p["w"].value()[1], -0.1, 1e-6);
  EXPECT_NEAR(s.m[0][1], 0.1 * 0.8, 1e-12);  // (1 - beta1) * clipped grad 40/50
}

TEST(Train, ZeroLearningRateKeepsParameters) {
  TrainConfig c = tiny_config();
  c.lr = 0;
  c.steps = 2;
  const auto res = train<double>(c, tiny_data());
  const auto init = init_model<double>(c.model, c.seed);
  for (const auto& [name, v] : init) EXPECT_TRUE(res.params[name].value() == v.value()) << name;
}

TEST(Train, DeterministicLossCurve) {
  const auto a = train<float>(tiny_config(), tiny_data());
  const auto b = train<float>(tiny_config(), tiny_data());
  ASSERT_EQ(a.log.size(), 3u);
  EXPECT_EQ(log_csv(a.log), log_csv(b.log));
}

TEST(Train, WritesCheckpointAndLog) {
  TrainConfig c = tiny_config();
  c.output_dir = fs::temp_directory_path() / "scv_train_test";
  fs::remove_all(c.output_dir);
  const auto res = train<float>(c, tiny_data());
  EXPECT_TRUE(fs::exists(c.output_dir / "checkpoint.scvw"));
  const std::string log = read_file(c.output_dir / "log.csv");
  EXPECT_EQ(log, log_csv(res.log));
  EXPECT_EQ(log.substr(0, 18), "step,loss,aepe,f1\n");
  const auto m = load_model<float>(c.output_dir / "checkpoint.scvw");
  for (const auto& [name, v] : res.params) EXPECT_TRUE(m.params[name].value() == v.value()) << name;
  fs::remove_all(c.output_dir);
}

TEST(Train, DivergenceIsNumericErrorWithCheckpoint) {
  TrainConfig c = tiny_config();
  c.lr = 1e36;  // parameters reach ~1e36, so conv products overflow float
  c.clip = 0;
  c.steps = 5;
  c.output_dir = fs::temp_directory_path() / "scv_diverge_test";
  fs::remove_all(c.output_dir);
  EXPECT_THROW(train<float>(c, tiny_data()), NumericError);
  EXPECT_TRUE(fs::exists(c.output_dir / "checkpoint.scvw"));
  fs::remove_all(c.output_dir);
}

TEST(Train, LossDecreasesOnTinyProblem) {
  TrainConfig c = tiny_config();
  c.steps = 40;
  c.lr = 1e-3;
  const auto res = train<float>(c, tiny_data());
  EXPECT_LT(res.log.back().loss, res.log.front().loss);
}
