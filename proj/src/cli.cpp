#include "kani/cli.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "kani/checkpoint.hpp"
#include "kani/config.hpp"
#include "kani/dataset.hpp"
#include "kani/eval.hpp"
#include "kani/gridio.hpp"
#include "kani/synth.hpp"
#include "kani/trainer.hpp"

namespace kani {
namespace {

namespace fs = std::filesystem;

KeyValueConfig load_config(const std::string& path) {
  if (path.empty()) return KeyValueConfig{};
  return KeyValueConfig::load(path);
}

void reject_unused(const KeyValueConfig& kv, const std::string& what) {
  const auto unused = kv.unused_keys();
  if (unused.empty()) return;
  std::string keys;
  for (const auto& k : unused) keys += (keys.empty() ? "" : ", ") + k;
  throw std::invalid_argument(what + ": unknown config key(s): " + keys);
}

std::string canonical(const KeyValueConfig& kv) {
  std::string s;
  for (const auto& [k, v] : kv.entries()) s += k + "=" + v + "\n";
  return s;
}

double parse_resolution(const std::string& text, double base) {
  if (text.empty() || text == "full") return base;
  if (text == "half") return base / 2.0;
  if (text == "quarter") return base / 4.0;
  const double v = parse_double(text, "--resolution");
  if (!(v > 0.0)) throw std::invalid_argument("--resolution must be positive");
  return v;
}

ResolutionChannel parse_channel(const std::string& text) {
  if (text == "point") return ResolutionChannel::kPoint;
  if (text == "grid") return ResolutionChannel::kGridSpacing;
  throw std::invalid_argument("--res-channel must be 'point' or 'grid'");
}

struct LoadedModel {
  std::string name;
  std::unique_ptr<Model> model;
  std::string digest_text;
};

LoadedModel load_model(const std::string& config_path, const std::string& checkpoint, const Dataset& data) {
  auto kv = load_config(config_path);
  const auto mc = model_config_from(kv);
  const auto tc = train_config_from(kv);
  reject_unused(kv, config_path);
  LoadedModel lm;
  lm.name = to_string(mc.variant);
  lm.model = std::make_unique<Model>(mc, data.field_height(), data.field_width(), tc.seed, tc.ablation);
  lm.model->load_state_dict(read_checkpoint(checkpoint));
  lm.digest_text = canonical(kv);
  return lm;
}

// "name=config,checkpoint"
LoadedModel load_model_spec(const std::string& spec, const Dataset& data) {
  const auto eq = spec.find('=');
  const auto comma = spec.find(',', eq == std::string::npos ? 0 : eq);
  if (eq == std::string::npos || comma == std::string::npos) {
    throw std::invalid_argument("--model expects NAME=CONFIG,CHECKPOINT, got '" + spec + "'");
  }
  auto lm = load_model(spec.substr(eq + 1, comma - eq - 1), spec.substr(comma + 1), data);
  lm.name = spec.substr(0, eq);
  return lm;
}

std::vector<LoadedModel> load_models(const std::string& config, const std::string& checkpoint,
                                     const std::vector<std::string>& specs, const Dataset& data) {
  std::vector<LoadedModel> models;
  if (!checkpoint.empty()) models.push_back(load_model(config, checkpoint, data));
  for (const auto& s : specs) models.push_back(load_model_spec(s, data));
  if (models.empty()) throw std::invalid_argument("no model given: pass --checkpoint or --model");
  return models;
}

StationFilter eval_filter(const Dataset& data, double holdout_frac, std::uint64_t seed) {
  if (holdout_frac <= 0.0) return {};
  return StationFilter{holdout_station_ids(data.samples.front().obs, holdout_frac, seed), true};
}

int cmd_gen(const std::string& scenario_path, const std::string& out_dir, std::optional<std::int64_t> seed,
            std::ostream& out) {
  auto kv = load_config(scenario_path);
  if (seed) kv.set("seed", std::to_string(*seed));
  const auto scenario = scenario_from_config(kv);
  const auto n_train = kv.get_int("n_train", 1024);
  const auto n_val = kv.get_int("n_val", 128);
  const auto n_test = kv.get_int("n_test", 256);
  reject_unused(kv, scenario_path.empty() ? "scenario" : scenario_path);
  if (n_train < 1 || n_val < 0 || n_test < 0) throw std::invalid_argument("scenario: sample counts must be non-negative, n_train >= 1");
  const auto n = static_cast<std::size_t>(n_train + n_val + n_test);
  const double dn = static_cast<double>(n);
  const SplitFractions fr{static_cast<double>(n_train) / dn, static_cast<double>(n_val) / dn, static_cast<double>(n_test) / dn};
  const auto m = generate_dataset(scenario, n, fr, out_dir);
  out << "wrote " << m.samples.size() << " samples (" << m.train.size() << " train, " << m.val.size() << " val, "
      << m.test.size() << " test) to " << out_dir << '\n';
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path, const std::string& out_dir,
              std::optional<std::int64_t> seed, std::ostream& out, std::ostream& err) {
  auto kv = load_config(config_path);
  if (seed) kv.set("seed", std::to_string(*seed));
  const auto mc = model_config_from(kv);
  const auto tc = train_config_from(kv);
  reject_unused(kv, config_path.empty() ? "config" : config_path);
  const auto data = load_dataset(data_dir);
  Model model(mc, data.field_height(), data.field_width(), tc.seed, tc.ablation);
  const auto report = train(model, data, tc, out_dir, &err);
  out << "trained " << to_string(mc.variant) << " (" << model.param_count().total << " parameters) for " << tc.epochs
      << " epochs in " << report.wall_seconds << " s; best val MSE " << report.best_val_mse << " at epoch "
      << report.best_epoch << "; checkpoint " << report.final_checkpoint.string() << '\n';
  return 0;
}

struct InferArgs {
  std::string data, config, checkpoint, out, mode = "correct", resolution = "full", channel = "point", input, stations;
  std::int64_t sample = -1;
};

int cmd_infer(const InferArgs& a, std::ostream& out) {
  const auto data = load_dataset(a.data);
  const auto lm = load_model(a.config, a.checkpoint, data);
  const Sample* sample = nullptr;
  if (a.sample >= 0) {
    if (static_cast<std::size_t>(a.sample) >= data.samples.size()) throw std::invalid_argument("--sample out of range");
    sample = &data.samples[static_cast<std::size_t>(a.sample)];
  } else {
    const auto test = data.split(Split::kTest);
    sample = test.empty() ? &data.samples.back() : &test.front();
  }
  const GriddedField field = a.input.empty() ? sample->input : read_field(a.input);
  const StationSet stations = a.stations.empty() ? sample->obs : read_stations(a.stations, data.normalizer.bbox);

  QueryRequest req;
  req.mode = query_mode_from_string(a.mode);
  if (req.mode == QueryMode::kTraining) throw std::invalid_argument("--mode must be correct, downscale or stations");
  req.channel = parse_channel(a.channel);
  req.resolution = parse_resolution(a.resolution, field.resolution());
  if (req.mode == QueryMode::kCorrect && std::abs(req.resolution - field.resolution()) > 1e-12) {
    throw std::invalid_argument("--mode correct works at the input resolution; use --mode downscale");
  }
  fs::create_directories(a.out);
  const auto pred = forward(*lm.model, field, &stations, data.topo, req, data.normalizer);
  if (req.mode == QueryMode::kStations) {
    std::vector<Station> res = stations.stations();
    for (std::size_t i = 0; i < res.size(); ++i) res[i].value = pred[i];
    const auto path = fs::path(a.out) / "prediction.csv";
    write_stations(StationSet(std::move(res)), path);
    out << "wrote " << pred.size() << " station predictions to " << path.string() << '\n';
  } else {
    const double r = req.mode == QueryMode::kCorrect ? field.resolution() : req.resolution;
    const GriddedField result(field.bbox(), r, field.variable(), field.time(), pred);
    const auto path = fs::path(a.out) / "prediction.nfg";
    write_field(result, path);
    out << "wrote " << result.height() << "x" << result.width() << " field to " << path.string() << '\n';
  }
  return 0;
}

struct EvalArgs {
  std::string data, config, checkpoint, out, split = "test";
  std::vector<std::string> models;
  double holdout_frac = 0.0;
  std::int64_t seed = 0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto data = load_dataset(a.data);
  const auto models = load_models(a.config, a.checkpoint, a.models, data);
  std::vector<NamedModel> named;
  std::string digest;
  for (const auto& m : models) {
    named.push_back({m.name, m.model.get()});
    digest += m.name + "\n" + m.digest_text;
  }
  const auto filter = eval_filter(data, a.holdout_frac, static_cast<std::uint64_t>(a.seed));
  auto report = compare_baselines(data, split_from_string(a.split), named, filter);
  report.seed = static_cast<std::uint64_t>(a.seed);
  report.config_digest = config_digest(digest);
  fs::create_directories(a.out);
  write_metrics_csv(report, fs::path(a.out) / "metrics.csv");
  write_summary_json(report, fs::path(a.out) / "summary.json");
  for (const auto& r : report.rows) {
    out << r.method << ": mse " << r.metrics.mse << " mae " << r.metrics.mae << " (n=" << r.metrics.n << ")\n";
  }
  return 0;
}

int cmd_sweep(const EvalArgs& a, const std::vector<double>& resolutions_arg, std::ostream& out) {
  const auto data = load_dataset(a.data);
  const auto models = load_models(a.config, a.checkpoint, a.models, data);
  const double r = data.normalizer.train_resolution;
  const auto resolutions = resolutions_arg.empty() ? std::vector<double>{r, r / 2.0, r / 4.0} : resolutions_arg;
  const auto samples = data.split(split_from_string(a.split));
  const auto filter = eval_filter(data, a.holdout_frac, static_cast<std::uint64_t>(a.seed));
  std::vector<SweepCurve> curves{input_field_sweep(data, samples, resolutions, filter)};
  for (const auto& m : models) curves.push_back(resolution_sweep(*m.model, m.name, data, samples, resolutions, filter));
  fs::create_directories(a.out);
  write_sweep_csv(curves, fs::path(a.out) / "sweep.csv");
  for (const auto& c : curves) {
    out << c.method << ':';
    for (const auto& p : c.points) out << ' ' << p.resolution << "->" << p.mse;
    out << '\n';
  }
  return 0;
}

int cmd_ablate(const std::string& data_dir, const std::string& config_path, const std::string& out_dir,
               std::optional<std::int64_t> seed, std::ostream& out, std::ostream& err) {
  auto kv = load_config(config_path);
  if (seed) kv.set("seed", std::to_string(*seed));
  const auto mc = model_config_from(kv);
  const auto tc = train_config_from(kv);
  reject_unused(kv, config_path.empty() ? "config" : config_path);
  if (tc.ablation.any()) throw std::invalid_argument("ablate: the base config must not disable channels itself");
  const auto data = load_dataset(data_dir);
  auto report = ablation_suite(data, mc, tc, default_ablation_runs(), out_dir, &err);
  report.config_digest = config_digest(canonical(kv));
  write_metrics_csv(report, fs::path(out_dir) / "ablation.csv");
  write_summary_json(report, fs::path(out_dir) / "summary.json");
  for (const auto& r : report.rows) out << r.method << ": mse " << r.metrics.mse << " mae " << r.metrics.mae << '\n';
  return 0;
}

int cmd_gradcheck(std::int64_t seed, std::ostream& out) {
  const auto audit = run_grad_audit(static_cast<std::uint64_t>(seed));
  for (const auto& item : audit.items) {
    out << (item.report.passed() ? "PASS " : "FAIL ") << item.name << " max_rel " << item.report.max_rel_error() << '\n';
    if (!item.report.passed()) {
      for (const auto& e : item.report.entries) {
        if (!e.passed) {
          out << "  " << e.name << ": rel " << e.max_rel_error << " analytic " << e.analytic_at_max << " numeric "
              << e.numeric_at_max << '\n';
        }
      }
    }
  }
  out << (audit.passed() ? "gradient audit passed" : "gradient audit FAILED") << " (max rel error " << audit.max_rel_error()
      << ")\n";
  return audit.passed() ? 0 : 2;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Continuous field correction and downscaling from gridded inputs and station observations", "kani"};
  app.require_subcommand(1);

  std::string scenario, data, config, checkpoint, out_dir;
  std::optional<std::int64_t> seed;
  InferArgs infer;
  EvalArgs eval;
  std::vector<double> sweep_resolutions;
  std::int64_t audit_seed = 0;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--scenario", scenario, "scenario config file");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--seed", seed, "override the scenario seed");

  auto* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--data", data, "dataset directory")->required();
  tr->add_option("--config", config, "model and training config file");
  tr->add_option("--out", out_dir, "output directory")->required();
  tr->add_option("--seed", seed, "override the training seed");

  auto* inf = app.add_subcommand("infer", "run a trained model");
  inf->add_option("--data", infer.data, "dataset directory (topography, normalization)")->required();
  inf->add_option("--config", infer.config, "model config file");
  inf->add_option("--checkpoint", infer.checkpoint, "checkpoint file")->required();
  inf->add_option("--out", infer.out, "output directory")->required();
  inf->add_option("--mode", infer.mode, "correct | downscale | stations");
  inf->add_option("--resolution", infer.resolution, "full | half | quarter | <degrees>");
  inf->add_option("--res-channel", infer.channel, "point (0) or grid (spacing) resolution channel");
  inf->add_option("--sample", infer.sample, "dataset sample index (default: first test sample)");
  inf->add_option("--input", infer.input, "input field file instead of a dataset sample");
  inf->add_option("--stations", infer.stations, "station file for --mode stations");

  auto add_eval_opts = [&eval](CLI::App* c) {
    c->add_option("--data", eval.data, "dataset directory")->required();
    c->add_option("--config", eval.config, "model config file for --checkpoint");
    c->add_option("--checkpoint", eval.checkpoint, "checkpoint file");
    c->add_option("--model", eval.models, "additional model NAME=CONFIG,CHECKPOINT");
    c->add_option("--out", eval.out, "output directory")->required();
    c->add_option("--split", eval.split, "train | val | test");
    c->add_option("--holdout-frac", eval.holdout_frac, "score only a seeded fraction of held-out stations");
    c->add_option("--seed", eval.seed, "seed of the station holdout");
  };
  auto* ev = app.add_subcommand("eval", "station metrics for interpolation baselines and models");
  add_eval_opts(ev);
  auto* sw = app.add_subcommand("sweep", "station error against reconstruction resolution");
  add_eval_opts(sw);
  sw->add_option("--resolutions", sweep_resolutions, "decreasing resolutions in degrees (default r, r/2, r/4)");

  auto* ab = app.add_subcommand("ablate", "train and score the channel ablations");
  ab->add_option("--data", data, "dataset directory")->required();
  ab->add_option("--config", config, "model and training config file");
  ab->add_option("--out", out_dir, "output directory")->required();
  ab->add_option("--seed", seed, "override the training seed");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference audit of all gradients");
  gc->add_option("--seed", audit_seed, "seed of the random test inputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*gen) return cmd_gen(scenario, out_dir, seed, out);
    if (*tr) return cmd_train(data, config, out_dir, seed, out, err);
    if (*inf) return cmd_infer(infer, out);
    if (*ev) return cmd_eval(eval, out);
    if (*sw) return cmd_sweep(eval, sweep_resolutions, out);
    if (*ab) return cmd_ablate(data, config, out_dir, seed, out, err);
    if (*gc) return cmd_gradcheck(audit_seed, out);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace kani
