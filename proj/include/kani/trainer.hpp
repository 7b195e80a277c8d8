#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "kani/config.hpp"
#include "kani/dataset.hpp"
#include "kani/model.hpp"

namespace kani {

struct TrainConfig {
  int epochs = 120;
  double base_lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::vector<int> milestones{60, 96, 108, 114};
  std::size_t batch_size = 4;  // samples per optimizer step
  std::uint64_t seed = 0;
  double lambda_grid = 1.0;
  double lambda_station = 1.0;
  AblationFlags ablation;
  // Fraction of stations withheld from training and used alone for scoring.
  double holdout_frac = 0.0;

  // 60 epochs with the milestones scaled by the same ratio.
  static TrainConfig desk();
  void validate() const;
};

TrainConfig train_config_from(const KeyValueConfig& kv);

struct LossParts {
  Var total;
  double grid = 0.0;
  double station = 0.0;
};

// lambda_grid * mean((pred_grid - y_grid)^2) + lambda_station * mean((pred_st - y_st)^2)
// over the grid-then-station layout of `batch`. Normalized units.
LossParts loss(const Var& pred, const QueryBatch& batch, std::span<const double> grid_targets,
               std::span<const double> station_targets, double lambda_grid = 1.0, double lambda_station = 1.0);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_grid = 0.0;
  double loss_station = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0.0;
  int best_epoch = -1;
  double best_val_mse = 0.0;
  std::filesystem::path final_checkpoint;
  std::filesystem::path best_checkpoint;
};

// Training graph inputs for one sample, reused across epochs.
struct PreparedSample {
  QueryBatch batch;
  Var field;
  std::vector<double> grid_targets;
  std::vector<double> station_targets;
};

PreparedSample prepare_training_sample(const Sample& sample, const Dataset& data, const std::set<std::string>& holdout);

// Station ids withheld under `config.holdout_frac`, drawn from the first sample.
std::set<std::string> training_holdout(const Dataset& data, const TrainConfig& config);

// Writes final.ckpt, best.ckpt, report.csv and report.json into out_dir and
// leaves `model` at its final-epoch parameters.
TrainReport train(Model& model, const Dataset& data, const TrainConfig& config, const std::filesystem::path& out_dir,
                  std::ostream* log = nullptr);

void write_train_report(const TrainReport& report, const std::filesystem::path& csv_path);

}  // namespace kani
