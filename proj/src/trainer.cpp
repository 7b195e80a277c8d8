#include "kani/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "kani/checkpoint.hpp"
#include "kani/eval.hpp"
#include "kani/gridio.hpp"
#include "kani/optim.hpp"

namespace kani {

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.epochs = 60;
  c.milestones = {30, 48, 54, 57};
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) throw std::invalid_argument("TrainConfig: base_lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("TrainConfig: betas must be in [0, 1)");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] >= epochs) throw std::invalid_argument("TrainConfig: milestone " + std::to_string(milestones[i]) + " is not below epochs");
    if (i > 0 && milestones[i] <= milestones[i - 1]) throw std::invalid_argument("TrainConfig: milestones must increase");
  }
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (!(lambda_grid >= 0.0) || !(lambda_station >= 0.0)) throw std::invalid_argument("TrainConfig: loss weights must be >= 0");
  if (!(holdout_frac >= 0.0 && holdout_frac < 1.0)) throw std::invalid_argument("TrainConfig: holdout_frac must be in [0, 1)");
}

TrainConfig train_config_from(const KeyValueConfig& kv) {
  TrainConfig c = TrainConfig::desk();
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.base_lr = kv.get_double("base_lr", c.base_lr);
  c.beta1 = kv.get_double("beta1", c.beta1);
  c.beta2 = kv.get_double("beta2", c.beta2);
  if (kv.has("milestones")) {
    c.milestones.clear();
    for (auto m : kv.get_ints("milestones", {})) c.milestones.push_back(static_cast<int>(m));
  }
  const auto bs = kv.get_int("batch_size", static_cast<std::int64_t>(c.batch_size));
  if (bs < 1) throw std::invalid_argument("config key 'batch_size' must be >= 1");
  c.batch_size = static_cast<std::size_t>(bs);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(c.seed)));
  c.lambda_grid = kv.get_double("lambda_grid", c.lambda_grid);
  c.lambda_station = kv.get_double("lambda_station", c.lambda_station);
  c.ablation = ablation_flags_from(kv);
  c.holdout_frac = kv.get_double("holdout_frac", c.holdout_frac);
  c.validate();
  return c;
}

LossParts loss(const Var& pred, const QueryBatch& batch, std::span<const double> grid_targets,
               std::span<const double> station_targets, double lambda_grid, double lambda_station) {
  if (pred.shape() != Shape{batch.size()}) throw ShapeError("loss", Shape{batch.size()}, pred.shape());
  if (grid_targets.size() != batch.n_grid || station_targets.size() != batch.n_station) {
    throw ShapeError("loss: " + std::to_string(grid_targets.size()) + " grid and " + std::to_string(station_targets.size()) +
                     " station targets for a batch of " + std::to_string(batch.n_grid) + " + " + std::to_string(batch.n_station));
  }
  LossParts parts;
  std::vector<Var> terms;
  if (batch.n_grid > 0) {
    const Var g = ops::mse(ops::slice_rows(pred, 0, batch.n_grid),
                           constant(Tensor({batch.n_grid}, std::vector<double>(grid_targets.begin(), grid_targets.end()))));
    parts.grid = g.value().item();
    terms.push_back(ops::scale(g, lambda_grid));
  }
  if (batch.n_station > 0) {
    const Var s = ops::mse(ops::slice_rows(pred, batch.n_grid, batch.size()),
                           constant(Tensor({batch.n_station}, std::vector<double>(station_targets.begin(), station_targets.end()))));
    parts.station = s.value().item();
    terms.push_back(ops::scale(s, lambda_station));
  }
  if (terms.empty()) throw ShapeError("loss: empty batch");
  parts.total = terms.size() == 1 ? terms[0] : ops::add(terms[0], terms[1]);
  const double t = parts.total.value().item();
  if (!std::isfinite(t)) {
    std::ostringstream msg;
    msg << "non-finite loss (grid " << parts.grid << ", station " << parts.station << ")";
    throw NumericalError(msg.str());
  }
  return parts;
}

std::set<std::string> training_holdout(const Dataset& data, const TrainConfig& config) {
  if (config.holdout_frac <= 0.0) return {};
  return holdout_station_ids(data.samples.front().obs, config.holdout_frac, config.seed);
}

PreparedSample prepare_training_sample(const Sample& sample, const Dataset& data, const std::set<std::string>& holdout) {
  PreparedSample p;
  const StationSet obs = holdout.empty() ? sample.obs : filter_stations(sample.obs, holdout, false);
  p.batch = build_query_batch(sample.input, &obs, data.topo, sample.time, QueryRequest{QueryMode::kTraining}, data.normalizer);
  p.field = field_input(sample.input, data.normalizer);
  p.grid_targets = normalize(sample.input.values(), data.normalizer.variable);
  p.station_targets = normalize(obs.values(), data.normalizer.variable);
  return p;
}

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
  return order;
}

}  // namespace

void write_train_report(const TrainReport& report, const std::filesystem::path& csv_path) {
  std::ofstream out(csv_path);
  if (!out) throw IoError(IoErrc::kWrite, "cannot write " + csv_path.string());
  out << "epoch,lr,loss_total,loss_grid,loss_station,val_mse,val_mae\n";
  for (const auto& e : report.epochs) {
    out << e.epoch << ',' << format_double(e.lr) << ',' << format_double(e.loss_total) << ',' << format_double(e.loss_grid)
        << ',' << format_double(e.loss_station) << ',' << format_double(e.val_mse) << ',' << format_double(e.val_mae) << '\n';
  }
  if (!out) throw IoError(IoErrc::kWrite, "failed writing " + csv_path.string());
}

TrainReport train(Model& model, const Dataset& data, const TrainConfig& config, const std::filesystem::path& out_dir,
                  std::ostream* log) {
  config.validate();
  if (!(model.ablation() == config.ablation)) throw std::invalid_argument("train: model ablation flags differ from the training config");
  const auto t0 = std::chrono::steady_clock::now();
  std::filesystem::create_directories(out_dir);

  const auto holdout = training_holdout(data, config);
  const auto train_split = data.split(Split::kTrain);
  if (train_split.empty()) throw std::invalid_argument("train: empty training split");
  std::vector<PreparedSample> prepared;
  prepared.reserve(train_split.size());
  for (const auto& s : train_split) prepared.push_back(prepare_training_sample(s, data, holdout));

  Adam adam(model.parameters(), AdamOptions{config.base_lr, config.beta1, config.beta2, 1e-8});
  const LrSchedule schedule(config.base_lr, config.milestones);
  const StationFilter val_filter{holdout, !holdout.empty()};

  TrainReport report;
  report.final_checkpoint = out_dir / "final.ckpt";
  report.best_checkpoint = out_dir / "best.ckpt";
  const double inv_batch_default = 1.0 / static_cast<double>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = schedule.lr_at(epoch);
    const auto order = epoch_order(prepared.size(), config.seed, epoch);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double inv_batch = end - start == config.batch_size ? inv_batch_default : 1.0 / static_cast<double>(end - start);
      adam.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const auto& p = prepared[order[k]];
        const Var pred = model.predict(p.batch, p.field);
        LossParts parts;
        try {
          parts = loss(pred, p.batch, p.grid_targets, p.station_targets, config.lambda_grid, config.lambda_station);
        } catch (const NumericalError& e) {
          throw NumericalError("epoch " + std::to_string(epoch + 1) + ", sample t=" +
                               std::to_string(train_split[order[k]].time) + ": " + e.what());
        }
        rec.loss_total += parts.total.value().item();
        rec.loss_grid += parts.grid;
        rec.loss_station += parts.station;
        backward(ops::scale(parts.total, inv_batch));
      }
      adam.step(lr);
    }
    const double n = static_cast<double>(prepared.size());
    rec.loss_total /= n;
    rec.loss_grid /= n;
    rec.loss_station /= n;

    const auto val = data.split(Split::kVal).empty() ? data.split(Split::kTrain) : data.split(Split::kVal);
    const Metrics m = model_station_metrics(model, data, val, val_filter);
    rec.val_mse = m.mse;
    rec.val_mae = m.mae;
    report.epochs.push_back(rec);
    if (report.best_epoch < 0 || rec.val_mse < report.best_val_mse) {
      report.best_epoch = rec.epoch;
      report.best_val_mse = rec.val_mse;
      write_checkpoint(report.best_checkpoint, model.state_dict());
    }
    if (log) {
      *log << "epoch " << rec.epoch << "/" << config.epochs << " lr " << lr << " loss " << rec.loss_total << " (grid "
           << rec.loss_grid << ", station " << rec.loss_station << ") val_mse " << rec.val_mse << " val_mae " << rec.val_mae
           << '\n';
    }
  }
  write_checkpoint(report.final_checkpoint, model.state_dict());
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_train_report(report, out_dir / "report.csv");

  nlohmann::json j;
  j["epochs"] = config.epochs;
  j["best_epoch"] = report.best_epoch;
  j["best_val_mse"] = report.best_val_mse;
  j["final_val_mse"] = report.epochs.back().val_mse;
  j["final_val_mae"] = report.epochs.back().val_mae;
  j["final_checkpoint"] = report.final_checkpoint.filename().string();
  j["best_checkpoint"] = report.best_checkpoint.filename().string();
  j["variant"] = to_string(model.config().variant);
  j["param_count"] = model.param_count().total;
  std::ofstream out(out_dir / "report.json");
  if (!out) throw IoError(IoErrc::kWrite, "cannot write " + (out_dir / "report.json").string());
  out << j.dump(2) << '\n';
  return report;
}

}  // namespace kani
