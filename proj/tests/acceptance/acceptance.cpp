// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "kani/checkpoint.hpp"
#include "kani/cli.hpp"
#include "kani/config.hpp"
#include "kani/dataset.hpp"
#include "kani/eval.hpp"
#include "kani/gridio.hpp"
#include "kani/kan.hpp"
#include "kani/model.hpp"
#include "kani/trainer.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace kani;

namespace {

int g_failures = 0;

void report(int id, bool ok, const std::string& what, const std::string& detail) {
  if (!ok) ++g_failures;
  std::cout << (ok ? "PASS" : "FAIL") << " [" << id << "] " << what << ": " << detail << std::endl;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int cli(std::vector<std::string> args, std::ostream& log) {
  args.insert(args.begin(), "kani");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  log << out.str() << err.str();
  if (code != 0) std::cerr << "kani " << args[1] << " failed (" << code << "):\n" << err.str();
  return code;
}

// Copy of a config with some keys replaced or added.
fs::path derived_config(const fs::path& base, const fs::path& out, std::map<std::string, std::string> overrides) {
  std::istringstream in(slurp(base));
  std::ofstream os(out);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (line.rfind('#', 0) != 0 && eq != std::string::npos) {
      auto key = line.substr(0, eq);
      key.erase(key.find_last_not_of(" \t") + 1);
      if (auto it = overrides.find(key); it != overrides.end()) {
        line = key + " = " + it->second;
        overrides.erase(it);
      }
    }
    os << line << '\n';
  }
  for (const auto& [k, v] : overrides) os << k << " = " << v << '\n';
  return out;
}

std::unique_ptr<Model> load_trained(const fs::path& cfg, const fs::path& ckpt, const Dataset& data) {
  const auto kv = KeyValueConfig::load(cfg);
  const auto mc = model_config_from(kv);
  const auto tc = train_config_from(kv);
  auto m = std::make_unique<Model>(mc, data.field_height(), data.field_width(), tc.seed, tc.ablation);
  m->load_state_dict(read_checkpoint(ckpt));
  return m;
}

struct Setup {
  fs::path configs, work;
  int seeds = 3;
  bool reuse = false;
  std::ofstream log;
};

// Trains (or reuses) one run and returns the directory holding final.ckpt.
fs::path train_run(Setup& s, const std::string& name, const fs::path& data, const fs::path& cfg, int seed) {
  const fs::path dir = s.work / "runs" / (name + "_s" + std::to_string(seed));
  if (s.reuse && fs::exists(dir / "report.json")) return dir;
  const auto t0 = std::chrono::steady_clock::now();
  if (cli({"train", "--data", data.string(), "--config", cfg.string(), "--out", dir.string(), "--seed",
           std::to_string(seed)}, s.log) != 0) {
    throw std::runtime_error("training " + name + " failed");
  }
  std::cerr << "  trained " << name << " seed " << seed << " in " << fmt(seconds_since(t0), 3) << " s\n";
  return dir;
}

void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto audit = run_grad_audit(0);
  const double secs = seconds_since(t0);
  std::string worst;
  double worst_err = -1.0;
  for (const auto& item : audit.items) {
    if (item.report.max_rel_error() > worst_err) {
      worst_err = item.report.max_rel_error();
      worst = item.name;
    }
  }
  report(1, audit.passed() && audit.max_rel_error() <= 1e-4 && secs <= 120.0, "gradient audit",
         std::to_string(audit.items.size()) + " checks, max rel error " + fmt(audit.max_rel_error()) + " (" + worst +
             ") <= 1e-4, " + fmt(secs, 3) + " s <= 120 s");
}

void criterion_splines() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  const SplineConfig cfg;
  double pou = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const auto b = bspline_basis(ud(rng), cfg);
    double sum = 0.0;
    for (double v : b) sum += v;
    pou = std::max(pou, std::abs(sum - 1.0));
  }
  const auto knots = cfg.knots();
  double knot_err = 0.0;
  for (int i = cfg.degree + 1; i < cfg.degree + cfg.grid_size; ++i) {
    const double u = knots[static_cast<std::size_t>(i)];
    const auto b = bspline_basis(u, cfg);
    const auto o = oracle::oracle_basis(cfg, u);
    for (std::size_t j = 0; j < b.size(); ++j) knot_err = std::max(knot_err, std::abs(b[j] - o[j]));
    // at knot t_i the non-zero cubics are B_{i-3}, B_{i-2}, B_{i-1} = 1/6, 2/3, 1/6
    const auto j = static_cast<std::size_t>(i - cfg.degree + 1);
    knot_err = std::max({knot_err, std::abs(b[j - 1] - 1.0 / 6.0), std::abs(b[j] - 2.0 / 3.0), std::abs(b[j + 1] - 1.0 / 6.0)});
  }
  report(2, pou <= 1e-12 && knot_err <= 1e-12, "spline identities",
         "partition of unity " + fmt(pou) + " <= 1e-12 over 1e4 u, interior knot values vs oracle " + fmt(knot_err) + " <= 1e-12");
}

void criterion_interpolation() {
  std::mt19937_64 rng(3);
  const BBox bbox{10, 12, 20, 22};
  std::uniform_real_distribution<double> lat(10.0, 12.0), lon(20.0, 22.0), coef(-5.0, 5.0);
  double wb = 0.0, wn = 0.0, wa = 0.0;
  for (int k = 0; k < 100; ++k) {
    const auto f = oracle::random_field(rng, bbox, 0.25);
    std::vector<LatLon> pts(100);
    for (auto& p : pts) p = {lat(rng), lon(rng)};
    const auto b = bilinear_interp(f, pts).values;
    const auto n = nearest_interp(f, pts).values;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      wb = std::max(wb, std::abs(b[i] - oracle::hat_bilinear(f, pts[i].lat, pts[i].lon)));
      wn = std::max(wn, std::abs(n[i] - oracle::brute_nearest(f, pts[i].lat, pts[i].lon)));
    }
    // affine fields inside the hull of cell centres
    const double a = coef(rng), c = coef(rng), d = coef(rng);
    const auto& g = f.geometry();
    std::vector<double> v(g.cells());
    for (std::size_t r = 0; r < g.height; ++r)
      for (std::size_t q = 0; q < g.width; ++q) v[r * g.width + q] = a * g.cell_lat(r) + c * g.cell_lon(q) + d;
    const GriddedField aff(g, "x", 0, v);
    std::vector<LatLon> inner(100);
    std::uniform_real_distribution<double> ilat(g.cell_lat(g.height - 1), g.cell_lat(0)), ilon(g.cell_lon(0), g.cell_lon(g.width - 1));
    for (auto& p : inner) p = {ilat(rng), ilon(rng)};
    const auto av = bilinear_interp(aff, inner).values;
    for (std::size_t i = 0; i < inner.size(); ++i) wa = std::max(wa, std::abs(av[i] - (a * inner[i].lat + c * inner[i].lon + d)));
  }
  report(3, wb <= 1e-12 && wn <= 1e-12 && wa <= 1e-10, "interpolation oracle",
         "bilinear " + fmt(wb) + ", nearest " + fmt(wn) + " <= 1e-12 on 100 fields x 100 points; affine " + fmt(wa) + " <= 1e-10");
}

void criterion_identity(Setup& s, const fs::path& data_dir) {
  const auto data = load_dataset(data_dir);
  const auto kv = KeyValueConfig::load(s.configs / "kani.cfg");
  const auto mc = model_config_from(kv);
  const auto tc = train_config_from(kv);
  const Model model(mc, data.field_height(), data.field_width(), tc.seed);
  const fs::path ckpt = s.work / "init.ckpt";
  write_checkpoint(ckpt, model.state_dict());

  const auto& sample = data.split(Split::kTest).front();
  const fs::path out = s.work / "identity";
  double field_err = INFINITY;
  if (cli({"infer", "--data", data_dir.string(), "--config", (s.configs / "kani.cfg").string(), "--checkpoint",
           ckpt.string(), "--out", out.string(), "--mode", "correct"}, s.log) == 0) {
    const auto pred = read_field(out / "prediction.nfg");
    field_err = 0.0;
    for (std::size_t i = 0; i < pred.values().size(); ++i) {
      field_err = std::max(field_err, std::abs(pred.values()[i] - sample.input.values()[i]));
    }
  }
  const auto p = prepare_training_sample(data.split(Split::kTrain).front(), data, {});
  const auto parts = loss(model.predict(p.batch, p.field), p.batch, p.grid_targets, p.station_targets);
  report(4, field_err <= 1e-9 && parts.grid == 0.0, "identity at init",
         "infer --mode correct max |pred - input| " + fmt(field_err) + " <= 1e-9, step-0 grid loss " + fmt(parts.grid) + " == 0");
}

void criterion_determinism(Setup& s) {
  const fs::path base = s.work / "determinism";
  // Small sample counts keep this quick; the pipeline is the same.
  const auto scenario = derived_config(s.configs / "terrain.scenario", base.string() + ".scenario",
                                       {{"n_train", "8"}, {"n_val", "2"}, {"n_test", "4"}});
  const auto cfg = derived_config(s.configs / "kani.cfg", base.string() + ".cfg", {{"epochs", "2"}, {"milestones", "1"}});
  std::vector<std::string> files[2];
  bool ok = true;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = base / ("rep" + std::to_string(rep));
    fs::remove_all(dir);
    ok = ok && cli({"gen", "--scenario", scenario.string(), "--out", (dir / "data").string()}, s.log) == 0;
    ok = ok && cli({"train", "--data", (dir / "data").string(), "--config", cfg.string(), "--out", (dir / "run").string()}, s.log) == 0;
    ok = ok && cli({"eval", "--data", (dir / "data").string(), "--config", cfg.string(), "--checkpoint",
                    (dir / "run" / "final.ckpt").string(), "--out", (dir / "eval").string()}, s.log) == 0;
    if (!ok) break;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
      if (e.is_regular_file()) files[rep].push_back(fs::relative(e.path(), dir).string());
    }
    std::sort(files[rep].begin(), files[rep].end());
  }
  std::size_t compared = 0, differing = 0;
  if (ok && files[0] == files[1]) {
    for (const auto& f : files[0]) {
      ++compared;
      if (slurp(base / "rep0" / f) != slurp(base / "rep1" / f)) ++differing;
    }
  } else {
    ok = false;
  }
  report(11, ok && differing == 0, "determinism",
         std::to_string(compared) + " files from two gen+train+eval runs compared, " + std::to_string(differing) + " differ");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kani acceptance suite"};
  Setup s;
  std::string configs, work;
  app.add_option("--configs", configs, "directory with the acceptance scenarios and model configs")->required();
  app.add_option("--work", work, "scratch directory")->required();
  app.add_option("--seeds", s.seeds, "training seeds per method")->check(CLI::Range(1, 10));
  app.add_flag("--reuse", s.reuse, "reuse finished training runs found in --work");
  CLI11_PARSE(app, argc, argv);
  s.configs = configs;
  s.work = work;
  fs::create_directories(s.work);
  s.log.open(s.work / "acceptance.log");
  const auto t_start = std::chrono::steady_clock::now();

  try {
    criterion_gradients();
    criterion_splines();
    criterion_interpolation();

    const fs::path terrain = s.work / "data" / "terrain", gust = s.work / "data" / "gust";
    for (const auto& [dir, scen] : {std::pair{terrain, "terrain.scenario"}, std::pair{gust, "gust.scenario"}}) {
      if (s.reuse && fs::exists(dir / "manifest.json")) continue;
      fs::remove_all(dir);
      if (cli({"gen", "--scenario", (s.configs / scen).string(), "--out", dir.string()}, s.log) != 0) {
        throw std::runtime_error("gen failed for " + std::string(scen));
      }
    }
    criterion_identity(s, terrain);

    const auto notopo = derived_config(s.configs / "kani.cfg", s.work / "kani_notopo.cfg", {{"disable_topo", "true"}});
    const auto nores = derived_config(s.configs / "kani.cfg", s.work / "kani_nores.cfg", {{"disable_resolution", "true"}});
    struct RunSpec {
      std::string name;
      fs::path data, cfg;
    };
    const std::vector<RunSpec> runs{
        {"kani", terrain, s.configs / "kani.cfg"},
        {"hyper_mlp", terrain, s.configs / "hyper_mlp.cfg"},
        {"pure_mlp", terrain, s.configs / "pure_mlp.cfg"},
        {"kani_notopo", terrain, notopo},
        {"gust_kani", gust, s.configs / "kani.cfg"},
        {"gust_kani_nores", gust, nores},
    };

    const auto td = load_dataset(terrain);
    const auto gd = load_dataset(gust);
    const auto t_test = td.split(Split::kTest);
    const auto g_test = gd.split(Split::kTest);
    const double bilinear = interp_station_metrics(InterpMethod::kBilinear, t_test).mse;
    const double r = td.normalizer.train_resolution;
    const Oracle oracle(td.manifest.scenario);

    std::map<std::string, std::vector<double>> mse;
    std::vector<double> downscale_ratio, model_rmse, upsample_rmse;
    std::vector<std::vector<double>> sweeps;
    double input_sweep_flat = 0.0;
    bool input_flat = true;
    for (int seed = 0; seed < s.seeds; ++seed) {
      for (const auto& run : runs) {
        const auto dir = train_run(s, run.name, run.data, run.cfg, seed);
        const auto& data = run.data == terrain ? td : gd;
        const auto model = load_trained(run.cfg, dir / "final.ckpt", data);
        const auto test = run.data == terrain ? t_test : g_test;
        mse[run.name].push_back(model_station_metrics(*model, data, test).mse);
        if (run.name == "kani") {
          const auto curve = resolution_sweep(*model, "kani", td, t_test, {r, r / 2, r / 4});
          std::vector<double> pts;
          for (const auto& p : curve.points) pts.push_back(p.mse);
          sweeps.push_back(pts);
          const auto ds = oracle_downscale_score(*model, td, t_test, r / 2, oracle);
          downscale_ratio.push_back(ds.model_rmse / ds.upsample_rmse);
          model_rmse.push_back(ds.model_rmse);
          upsample_rmse.push_back(ds.upsample_rmse);
        }
      }
    }
    const auto in_curve = input_field_sweep(td, t_test, {r, r / 2, r / 4});
    input_sweep_flat = in_curve.points.front().mse;
    for (const auto& p : in_curve.points) input_flat = input_flat && p.mse == input_sweep_flat;

    std::ostringstream seeds_note;
    seeds_note << "median of " << s.seeds << " seeds";
    const double kani = median(mse["kani"]), hyper = median(mse["hyper_mlp"]), pure = median(mse["pure_mlp"]);
    report(5, kani <= 0.6 * bilinear, "bias-correction benchmark",
           "kani station MSE " + fmt(kani) + " <= 0.6 x bilinear " + fmt(bilinear) + " (ratio " + fmt(kani / bilinear) + ", " +
               seeds_note.str() + ")");
    report(6, kani <= hyper && hyper <= pure && pure <= bilinear && kani <= 0.95 * pure, "method ordering",
           "kani " + fmt(kani) + ", hyper_mlp " + fmt(hyper) + ", pure_mlp " + fmt(pure) + ", bilinear " + fmt(bilinear) +
               "; need kani <= hyper <= pure <= bilinear and kani/pure " + fmt(kani / pure) + " <= 0.95");

    // pointwise median curve over seeds: r, r/2, r/4, direct
    std::vector<double> curve(sweeps.front().size());
    for (std::size_t i = 0; i < curve.size(); ++i) {
      std::vector<double> col;
      for (const auto& sw : sweeps) col.push_back(sw[i]);
      curve[i] = median(col);
    }
    bool mono = true;
    for (std::size_t i = 1; i < curve.size(); ++i) mono = mono && curve[i] <= 1.05 * curve[i - 1];
    const bool direct_min = *std::min_element(curve.begin(), curve.end()) == curve.back();
    std::string curve_text;
    for (double v : curve) curve_text += (curve_text.empty() ? "" : " -> ") + fmt(v);
    report(7, mono && direct_min && input_flat && input_sweep_flat > curve.back(), "resolution sweep",
           "kani r, r/2, r/4, direct: " + curve_text + " (5% per-step tolerance, direct minimal); input curve flat at " +
               fmt(input_sweep_flat) + " > direct");

    const double ratio = median(downscale_ratio);
    report(8, ratio <= 0.9, "zero-shot downscaling vs oracle",
           "r/2 RMSE vs truth " + fmt(median(model_rmse)) + ", bilinear upsampling of corrected r field " +
               fmt(median(upsample_rmse)) + "; median ratio " + fmt(ratio) + " <= 0.9");

    const double full_t = kani, notopo_t = median(mse["kani_notopo"]);
    const double full_g = median(mse["gust_kani"]), nores_g = median(mse["gust_kani_nores"]);
    report(9, notopo_t > 1.03 * full_t && nores_g > 1.03 * full_g, "ablation direction",
           "terrain w/o topo " + fmt(notopo_t) + " vs full " + fmt(full_t) + " (x" + fmt(notopo_t / full_t) + "); gust w/o res " +
               fmt(nores_g) + " vs full " + fmt(full_g) + " (x" + fmt(nores_g / full_g) + "); need > x1.03 each");

    std::map<std::string, std::size_t> params;
    for (const char* v : {"kani", "hyper_mlp", "pure_mlp"}) {
      const auto kv = KeyValueConfig::load(s.configs / (std::string(v) + ".cfg"));
      params[v] = Model(model_config_from(kv), td.field_height(), td.field_width(), 0).param_count().total;
    }
    const bool order_of_magnitude = 10 * params["pure_mlp"] <= params["kani"] && 10 * params["pure_mlp"] <= params["hyper_mlp"];
    report(10, order_of_magnitude && params["kani"] <= params["hyper_mlp"], "parameter accounting",
           "kani " + std::to_string(params["kani"]) + ", hyper_mlp " + std::to_string(params["hyper_mlp"]) + ", pure_mlp " +
               std::to_string(params["pure_mlp"]) + "; need 10 x pure <= both and kani <= hyper_mlp");

    criterion_determinism(s);

    std::ofstream per_seed(s.work / "per_seed.csv");
    per_seed << "method,seed,station_mse\n";
    for (const auto& [name, v] : mse)
      for (std::size_t i = 0; i < v.size(); ++i) per_seed << name << ',' << i << ',' << format_double(v[i]) << '\n';
  } catch (const std::exception& e) {
    std::cout << "FAIL acceptance run aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (g_failures == 0 ? "all criteria passed" : std::to_string(g_failures) + " criteria failed") << " in "
            << fmt(seconds_since(t_start), 4) << " s" << std::endl;
  return g_failures == 0 ? 0 : 1;
}
