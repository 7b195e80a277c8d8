#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "kani/checkpoint.hpp"
#include "kani/eval.hpp"
#include "kani/optim.hpp"
#include "kani/trainer.hpp"

using namespace kani;

namespace {

QueryBatch layout(std::size_t grid, std::size_t station) {
  QueryBatch b;
  b.n_grid = grid;
  b.n_station = station;
  return b;
}

}  // namespace

TEST(Loss, HandExamples) {
  const auto b = layout(2, 1);
  const Var pred = constant(Tensor({3}, {1.0, -1.0, 2.0}));
  const std::vector<double> zeros2{0.0, 0.0}, zeros1{0.0};
  const auto parts = loss(pred, b, zeros2, zeros1);
  EXPECT_DOUBLE_EQ(parts.total.value().item(), 5.0);
  EXPECT_DOUBLE_EQ(parts.grid, 1.0);
  EXPECT_DOUBLE_EQ(parts.station, 4.0);

  const std::vector<double> g{1.0, -1.0}, s{2.0};
  EXPECT_EQ(loss(pred, b, g, s).total.value().item(), 0.0);

  const Var shifted = constant(Tensor({3}, {2.0, 0.0, 2.0}));
  EXPECT_DOUBLE_EQ(loss(shifted, b, g, s).total.value().item(), 1.0);
}

TEST(Loss, WeightedDecomposition) {
  const auto b = layout(3, 2);
  const Var pred = constant(Tensor({5}, {0.3, -0.2, 1.1, 0.7, -0.4}));
  const std::vector<double> g{0.1, 0.1, 0.9}, s{0.2, 0.5};
  const auto parts = loss(pred, b, g, s, 0.25, 3.0);
  EXPECT_EQ(parts.total.value().item(), 0.25 * parts.grid + 3.0 * parts.station);
}

TEST(Loss, NonFiniteAborts) {
  const auto b = layout(1, 1);
  const Var pred = constant(Tensor({2}, {std::nan(""), 0.0}));
  const std::vector<double> g{0.0}, s{0.0};
  EXPECT_THROW(loss(pred, b, g, s), NumericalError);
  EXPECT_THROW(loss(constant(Tensor({3})), b, g, s), ShapeError);
}

TEST(TrainConfig, PresetsAndValidation) {
  const TrainConfig defaults;
  EXPECT_EQ(defaults.epochs, 120);
  EXPECT_EQ(defaults.milestones, (std::vector<int>{60, 96, 108, 114}));
  EXPECT_EQ(defaults.base_lr, 1e-4);
  EXPECT_EQ(defaults.beta1, 0.9);
  EXPECT_EQ(defaults.beta2, 0.999);
  const auto desk = TrainConfig::desk();
  EXPECT_EQ(desk.epochs, 60);
  EXPECT_EQ(desk.milestones, (std::vector<int>{30, 48, 54, 57}));
  auto bad = desk;
  bad.milestones = {30, 60};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = desk;
  bad.lambda_station = -1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);

  std::istringstream in("epochs = 4\nmilestones = 1, 3\ndisable_topo = true\n");
  const auto kv = KeyValueConfig::parse(in);
  const auto c = train_config_from(kv);
  EXPECT_EQ(c.epochs, 4);
  EXPECT_TRUE(c.ablation.disable_topo);
}

TEST(Train, StepZeroSelfSupervisionIdentity) {
  const auto& data = tiny_dataset();
  Model m(tiny_model_config(), 16, 16, 1);
  const auto& s = data.split(Split::kTrain).front();
  const auto p = prepare_training_sample(s, data, {});
  const auto parts = loss(m.predict(p.batch, p.field), p.batch, p.grid_targets, p.station_targets);
  EXPECT_EQ(parts.grid, 0.0);
  const auto interp = bilinear_interp(s.input, s.obs.points()).values;
  double gap = 0.0;
  for (std::size_t i = 0; i < interp.size(); ++i) {
    const double d = (interp[i] - s.obs[i].value) / data.normalizer.variable.std;
    gap += d * d;
  }
  EXPECT_NEAR(parts.station, gap / static_cast<double>(interp.size()), 1e-12);
}

TEST(Train, DeterministicReplay) {
  ScratchDir a("train_a"), b("train_b");
  const auto& data = tiny_dataset();
  Model ma(tiny_model_config(), 16, 16, 7), mb(tiny_model_config(), 16, 16, 7);
  const auto ra = train(ma, data, tiny_train_config(), a.path());
  const auto rb = train(mb, data, tiny_train_config(), b.path());
  EXPECT_EQ(slurp(a / "final.ckpt"), slurp(b / "final.ckpt"));
  EXPECT_EQ(slurp(a / "best.ckpt"), slurp(b / "best.ckpt"));
  EXPECT_EQ(slurp(a / "report.csv"), slurp(b / "report.csv"));
  EXPECT_EQ(slurp(a / "report.json"), slurp(b / "report.json"));
  ASSERT_EQ(ra.epochs.size(), 3u);

  const LrSchedule schedule(1e-3, {2});
  for (const auto& e : ra.epochs) {
    EXPECT_EQ(e.lr, schedule.lr_at(e.epoch - 1));
    EXPECT_NEAR(e.loss_total, e.loss_grid + e.loss_station, 1e-12 * e.loss_total);
  }
  // The final checkpoint holds the model's final parameters.
  const auto ckpt = read_checkpoint(a / "final.ckpt");
  const auto sd = ma.state_dict();
  ASSERT_EQ(ckpt.size(), sd.size());
  for (std::size_t i = 0; i < sd.size(); ++i) EXPECT_EQ(ckpt[i].tensor, sd[i].tensor);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  ScratchDir dir("train_lr0");
  auto cfg = tiny_train_config();
  cfg.base_lr = 0.0;
  cfg.epochs = 2;
  cfg.milestones = {};
  Model m(tiny_model_config(), 16, 16, 9);
  const auto before = m.state_dict();
  const auto report = train(m, tiny_dataset(), cfg, dir.path());
  const auto after = m.state_dict();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].tensor, after[i].tensor) << before[i].name;
  EXPECT_EQ(report.epochs[0].loss_total, report.epochs[1].loss_total);
  EXPECT_EQ(report.epochs[0].val_mse, report.epochs[1].val_mse);
}

TEST(Train, AblationMismatchRejected) {
  ScratchDir dir("train_ablate");
  auto cfg = tiny_train_config();
  cfg.ablation.disable_topo = true;
  Model m(tiny_model_config(), 16, 16, 9);
  EXPECT_THROW(train(m, tiny_dataset(), cfg, dir.path()), std::invalid_argument);
}

TEST(Train, HoldoutStationsNeverReachTheLoss) {
  auto cfg = tiny_train_config();
  cfg.holdout_frac = 0.25;
  const auto& data = tiny_dataset();
  const auto held = training_holdout(data, cfg);
  ASSERT_EQ(held.size(), 2u);
  const auto p = prepare_training_sample(data.samples.front(), data, held);
  EXPECT_EQ(p.batch.n_station, 6u);
  EXPECT_EQ(p.station_targets.size(), 6u);
}

TEST(Train, ValidationImprovesOnTinyProblem) {
  ScratchDir dir("train_progress");
  auto cfg = tiny_train_config();
  cfg.epochs = 8;
  cfg.milestones = {6};
  cfg.batch_size = 2;
  cfg.base_lr = 3e-3;
  Model m(tiny_model_config(ModelVariant::kPureMlp), 16, 16, 2);
  const auto report = train(m, tiny_dataset(), cfg, dir.path());
  EXPECT_LT(report.epochs.back().val_mse, report.epochs.front().val_mse);
}
