#include "kani/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <stdexcept>

#include "json.hpp"
#include "kani/checkpoint.hpp"
#include "kani/gridio.hpp"
#include "kani/kan.hpp"

namespace kani {

Metrics evaluate_stations(std::span<const double> predictions, std::span<const double> observations) {
  MetricsAccumulator acc;
  acc.add(predictions, observations);
  return acc.result();
}

void MetricsAccumulator::add(std::span<const double> predictions, std::span<const double> observations) {
  if (predictions.size() != observations.size()) {
    throw std::invalid_argument("evaluate_stations: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(observations.size()) + " observations");
  }
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double e = predictions[i] - observations[i];
    sq_ += e * e;
    abs_ += std::abs(e);
  }
  n_ += predictions.size();
}

Metrics MetricsAccumulator::result() const {
  if (n_ == 0) throw std::invalid_argument("evaluate_stations: no points to score");
  const double n = static_cast<double>(n_);
  return Metrics{sq_ / n, abs_ / n, n_};
}

StationSet StationFilter::apply(const StationSet& stations) const {
  return only_listed ? filter_stations(stations, ids, true) : stations;
}

std::vector<double> predict_stations(const Model& model, const Dataset& data, const Sample& sample, const StationSet& stations) {
  return forward(model, sample.input, &stations, data.topo, QueryRequest{QueryMode::kStations}, data.normalizer);
}

Metrics model_station_metrics(const Model& model, const Dataset& data, std::span<const Sample> samples,
                              const StationFilter& filter) {
  MetricsAccumulator acc;
  for (const auto& s : samples) {
    const auto obs = filter.apply(s.obs);
    acc.add(predict_stations(model, data, s, obs), obs.values());
  }
  return acc.result();
}

Metrics interp_station_metrics(InterpMethod method, std::span<const Sample> samples, const StationFilter& filter) {
  MetricsAccumulator acc;
  for (const auto& s : samples) {
    const auto obs = filter.apply(s.obs);
    const auto pts = obs.points();
    const auto pred = method == InterpMethod::kBilinear ? bilinear_interp(s.input, pts) : nearest_interp(s.input, pts);
    acc.add(pred.values, obs.values());
  }
  return acc.result();
}

const MetricsRow& MetricsReport::row(const std::string& method) const {
  for (const auto& r : rows) {
    if (r.method == method) return r;
  }
  throw std::invalid_argument("metrics report has no row for '" + method + "'");
}

MetricsReport compare_baselines(const Dataset& data, Split split, const std::vector<NamedModel>& models,
                                const StationFilter& filter) {
  const auto samples = data.split(split);
  const std::string var = data.manifest.scenario.variable;
  const std::string sp = to_string(split);
  MetricsReport report;
  report.rows.push_back({"linear", var, sp, interp_station_metrics(InterpMethod::kBilinear, samples, filter)});
  report.rows.push_back({"nearest", var, sp, interp_station_metrics(InterpMethod::kNearest, samples, filter)});
  for (const auto& m : models) {
    if (!m.model) throw std::invalid_argument("compare_baselines: no model for '" + m.name + "'");
    report.rows.push_back({m.name, var, sp, model_station_metrics(*m.model, data, samples, filter)});
  }
  return report;
}

void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(IoErrc::kWrite, "cannot write " + path.string());
  out << "method,variable,split,mse,mae,n\n";
  for (const auto& r : report.rows) {
    out << r.method << ',' << r.variable << ',' << r.split << ',' << format_double(r.metrics.mse) << ','
        << format_double(r.metrics.mae) << ',' << r.metrics.n << '\n';
  }
  if (!out) throw IoError(IoErrc::kWrite, "failed writing " + path.string());
}

void write_summary_json(const MetricsReport& report, const std::filesystem::path& path) {
  nlohmann::json j;
  j["seed"] = report.seed;
  j["config_digest"] = report.config_digest;
  auto rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"method", r.method},
                    {"variable", r.variable},
                    {"split", r.split},
                    {"mse", r.metrics.mse},
                    {"mae", r.metrics.mae},
                    {"n", r.metrics.n}});
  }
  j["rows"] = rows;
  std::ofstream out(path);
  if (!out) throw IoError(IoErrc::kWrite, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

namespace {

void check_sweep_resolutions(const std::vector<double>& resolutions, const BBox& bbox) {
  if (resolutions.empty()) throw std::invalid_argument("resolution_sweep: no resolutions");
  for (std::size_t i = 0; i < resolutions.size(); ++i) {
    GridGeometry::from_bbox(bbox, resolutions[i]);
    if (i > 0 && !(resolutions[i] < resolutions[i - 1])) throw std::invalid_argument("resolution_sweep: resolutions must decrease");
  }
}

}  // namespace

SweepCurve resolution_sweep(const Model& model, const std::string& name, const Dataset& data,
                            std::span<const Sample> samples, const std::vector<double>& resolutions,
                            const StationFilter& filter, ResolutionChannel channel) {
  check_sweep_resolutions(resolutions, data.normalizer.bbox);
  SweepCurve curve{name, {}};
  for (double r : resolutions) {
    MetricsAccumulator acc;
    for (const auto& s : samples) {
      const auto obs = filter.apply(s.obs);
      const auto fine = forward(model, s.input, nullptr, data.topo, QueryRequest{QueryMode::kDownscale, r, channel}, data.normalizer);
      const GriddedField field(s.input.bbox(), r, s.input.variable(), s.time, fine);
      acc.add(bilinear_interp(field, obs.points()).values, obs.values());
    }
    curve.points.push_back({r, acc.result().mse});
  }
  curve.points.push_back({0.0, model_station_metrics(model, data, samples, filter).mse});
  return curve;
}

SweepCurve input_field_sweep(const Dataset& data, std::span<const Sample> samples, const std::vector<double>& resolutions,
                             const StationFilter& filter) {
  check_sweep_resolutions(resolutions, data.normalizer.bbox);
  const double mse = interp_station_metrics(InterpMethod::kBilinear, samples, filter).mse;
  SweepCurve curve{"input", {}};
  for (double r : resolutions) curve.points.push_back({r, mse});
  curve.points.push_back({0.0, mse});
  return curve;
}

void write_sweep_csv(const std::vector<SweepCurve>& curves, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(IoErrc::kWrite, "cannot write " + path.string());
  out << "method,resolution_deg,mse\n";
  for (const auto& c : curves) {
    for (const auto& p : c.points) out << c.method << ',' << format_double(p.resolution) << ',' << format_double(p.mse) << '\n';
  }
  if (!out) throw IoError(IoErrc::kWrite, "failed writing " + path.string());
}

DownscaleScore oracle_downscale_score(const Model& model, const Dataset& data, std::span<const Sample> samples,
                                      double resolution, const Oracle& oracle, ResolutionChannel channel) {
  if (samples.empty()) throw std::invalid_argument("oracle_downscale_score: no samples");
  const auto grid = make_coordinate_grid(data.normalizer.bbox, resolution);
  const auto pts = grid.points();
  double sq_model = 0.0, sq_up = 0.0;
  std::size_t n = 0;
  for (const auto& s : samples) {
    const auto fine = forward(model, s.input, nullptr, data.topo, QueryRequest{QueryMode::kDownscale, resolution, channel}, data.normalizer);
    const auto corrected = forward(model, s.input, nullptr, data.topo, QueryRequest{QueryMode::kCorrect, 0.0, channel}, data.normalizer);
    const GriddedField coarse(s.input.geometry(), s.input.variable(), s.time, corrected);
    const auto up = bilinear_interp(coarse, pts).values;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double truth = oracle.y_true(pts[i].lat, pts[i].lon, static_cast<double>(s.time));
      sq_model += (fine[i] - truth) * (fine[i] - truth);
      sq_up += (up[i] - truth) * (up[i] - truth);
    }
    n += pts.size();
  }
  return DownscaleScore{std::sqrt(sq_model / static_cast<double>(n)), std::sqrt(sq_up / static_cast<double>(n)), n};
}

std::vector<AblationRun> default_ablation_runs() {
  AblationFlags date, topo, res;
  date.disable_date = true;
  topo.disable_topo = true;
  res.disable_resolution = true;
  return {{"full", {}}, {"w/o date", date}, {"w/o topo", topo}, {"w/o res", res}};
}

MetricsReport ablation_suite(const Dataset& data, const ModelConfig& model_config, const TrainConfig& base,
                             const std::vector<AblationRun>& runs, const std::filesystem::path& out_dir, std::ostream* log) {
  MetricsReport report;
  report.seed = base.seed;
  const auto holdout = training_holdout(data, base);
  const StationFilter filter{holdout, !holdout.empty()};
  for (std::size_t i = 0; i < runs.size(); ++i) {
    TrainConfig cfg = base;
    cfg.ablation = runs[i].flags;
    Model model(model_config, data.field_height(), data.field_width(), cfg.seed, cfg.ablation);
    if (log) *log << "ablation run '" << runs[i].name << "'\n";
    train(model, data, cfg, out_dir / ("run" + std::to_string(i)), log);
    report.rows.push_back({runs[i].name, data.manifest.scenario.variable, to_string(Split::kTest),
                           model_station_metrics(model, data, data.split(Split::kTest), filter)});
  }
  return report;
}

std::string config_digest(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool GradAudit::passed() const {
  return std::all_of(items.begin(), items.end(), [](const GradAuditItem& i) { return i.report.passed(); });
}

double GradAudit::max_rel_error() const {
  double m = 0.0;
  for (const auto& i : items) m = std::max(m, i.report.max_rel_error());
  return m;
}

namespace {

class AuditBuilder {
 public:
  AuditBuilder(std::uint64_t seed, double tol) : rng_(seed), tol_(tol) {}

  // Uniform values in [lo, hi], optionally kept at least `gap` away from zero.
  Var leaf(Shape shape, double lo = -1.0, double hi = 1.0, double gap = 0.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.values()) {
      do {
        v = u(rng_);
      } while (std::abs(v) < gap);
    }
    return parameter(std::move(t));
  }

  // Contracts the op output with fixed random weights so every output
  // element contributes to the checked scalar.
  void check(const std::string& name, const std::function<Var()>& op, std::vector<NamedVar> inputs,
             std::size_t max_elements = 0) {
    const Shape out_shape = op().shape();
    const Var weights = constant(leaf(out_shape).value());
    GradCheckOptions opts;
    opts.tol = tol_;
    opts.max_elements = max_elements;
    opts.seed = rng_();
    auto fn = [&op, &weights]() { return ops::sum(ops::mul(op(), weights)); };
    items.push_back({name, grad_check(fn, std::move(inputs), opts)});
  }

  void check_scalar(const std::string& name, const std::function<Var()>& fn, std::vector<NamedVar> inputs,
                    std::size_t max_elements = 0) {
    GradCheckOptions opts;
    opts.tol = tol_;
    opts.max_elements = max_elements;
    opts.seed = rng_();
    items.push_back({name, grad_check(fn, std::move(inputs), opts)});
  }

  std::mt19937_64& rng() { return rng_; }
  std::vector<GradAuditItem> items;

 private:
  std::mt19937_64 rng_;
  double tol_;
};

void audit_primitives(AuditBuilder& a) {
  using namespace ops;
  {
    Var x = a.leaf({5, 4}), w = a.leaf({3, 4}), b = a.leaf({3});
    a.check("linear", [&] { return linear(x, w, b); }, {{"x", x}, {"w", w}, {"b", b}});
  }
  {
    Var x = a.leaf({3, 4}), y = a.leaf({4, 2});
    a.check("matmul", [&] { return matmul(x, y); }, {{"a", x}, {"b", y}});
  }
  for (int stride : {1, 2}) {
    Var x = a.leaf({2, 5, 6}), w = a.leaf({3, 2, 3, 3}), b = a.leaf({3});
    a.check("conv2d/stride" + std::to_string(stride), [&, stride] { return conv2d(x, w, b, stride); },
            {{"x", x}, {"w", w}, {"b", b}});
  }
  {
    Var x = a.leaf({3, 7}), w = a.leaf({2, 3, 3}), b = a.leaf({2});
    a.check("conv1d", [&] { return conv1d(x, w, b); }, {{"x", x}, {"w", w}, {"b", b}});
  }
  {
    Var x = a.leaf({4, 5}, -1.0, 1.0, 0.05);
    a.check("relu", [&] { return relu(x); }, {{"x", x}});
  }
  {
    Var x = a.leaf({4, 5}, -3.0, 3.0);
    a.check("silu", [&] { return silu(x); }, {{"x", x}});
  }
  {
    Var x = a.leaf({4, 6}, -2.0, 2.0), g = a.leaf({6}), b = a.leaf({6});
    a.check("layer_norm", [&] { return layer_norm(x, g, b); }, {{"x", x}, {"gamma", g}, {"beta", b}});
  }
  {
    Var x = a.leaf({3, 4}), y = a.leaf({3, 4});
    a.check("add", [&] { return add(x, y); }, {{"a", x}, {"b", y}});
    a.check("sub", [&] { return sub(x, y); }, {{"a", x}, {"b", y}});
    a.check("mul", [&] { return mul(x, y); }, {{"a", x}, {"b", y}});
    a.check("scale", [&] { return scale(x, -1.7); }, {{"x", x}});
    a.check("transpose", [&] { return transpose(x); }, {{"x", x}});
    a.check("reshape", [&] { return reshape(x, {2, 6}); }, {{"x", x}});
    a.check("slice_rows", [&] { return slice_rows(x, 1, 3); }, {{"x", x}});
    a.check_scalar("sum", [&] { return sum(x); }, {{"x", x}});
    a.check_scalar("mean", [&] { return mean(x); }, {{"x", x}});
    a.check_scalar("mse", [&] { return mse(x, y); }, {{"a", x}, {"b", y}});
  }
  {
    Var x = a.leaf({2, 3}), y = a.leaf({4, 3}), z = a.leaf({2, 5});
    a.check("concat/rows", [&] { return concat({x, y}, 0); }, {{"a", x}, {"b", y}});
    a.check("concat/cols", [&] { return concat({x, z}, 1); }, {{"a", x}, {"b", z}});
  }
  {
    Var x = a.leaf({4, 4});
    const auto geom = GridGeometry::from_bbox({0.0, 1.0, 0.0, 1.0}, 0.25);
    std::vector<LatLon> pts{{0.31, 0.52}, {0.66, 0.21}, {0.5, 0.5}, {0.9, 0.1}};
    const auto st = bilinear_stencil(geom, pts);
    a.check("gather", [&] { return gather(x, st); }, {{"x", x}});
  }
}

void audit_kan(AuditBuilder& a) {
  SplineConfig cfg;
  auto layer = init_kan_layer(4, 3, cfg, a.rng());
  // Inputs inside (-1, 1) exercise the splines; the last column leaves the
  // spline range where only the base term remains.
  Var x = a.leaf({6, 4}, -0.97, 0.97);
  for (std::size_t r = 0; r < 6; ++r) x.mutable_value()[r * 4 + 3] = (r % 2 ? 1.0 : -1.0) * (1.3 + 0.1 * static_cast<double>(r));
  a.check("kan_layer", [&] { return kan_layer_forward(x, layer); },
          {{"x", x}, {"spline_coeffs", layer.spline_coeffs}, {"base_weights", layer.base_weights}});
}

void audit_model(AuditBuilder& a, const ModelConfig& config, const std::string& name, std::size_t max_elements) {
  const BBox bbox{30.0, 34.0, -110.0, -106.0};
  const double res = 0.25;
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto& rng = a.rng();

  std::vector<double> dem(256), values(256);
  for (auto& v : dem) v = 500.0 + 300.0 * nd(rng);
  for (auto& v : values) v = nd(rng);
  TopographySet topo({TopographyGrid(GriddedField(bbox, res, "elevation", 0, dem))});
  const GriddedField field(bbox, res, "x", 5, values);
  std::vector<Station> st;
  for (int i = 0; i < 5; ++i) {
    st.push_back({"S" + std::to_string(i), 30.2 + 3.6 * u01(rng), -109.8 + 3.6 * u01(rng), 400.0 + 200.0 * u01(rng), nd(rng), 5});
  }
  const StationSet stations(st);
  const Normalizer norm{{"x", 0.0, 1.0}, {"elevation", 500.0, 300.0}, bbox, res};
  const auto batch = build_query_batch(field, &stations, topo, field.time(), QueryRequest{QueryMode::kTraining}, norm);

  Model model(config, 16, 16, rng());
  // A non-zero head so gradients reach everything upstream of it.
  for (const char* head : {"head.weight", "head.bias"}) {
    Var p = model.parameter(head);
    for (double& v : p.mutable_value().values()) v = 0.5 * nd(rng);
  }
  Var x = parameter(Tensor({1, 16, 16}, values));
  std::vector<double> grid_targets(256), station_targets(5);
  for (auto& v : grid_targets) v = nd(rng);
  for (auto& v : station_targets) v = nd(rng);

  std::vector<NamedVar> inputs{{"field", x}};
  for (const auto& p : model.parameters()) inputs.push_back(p);
  a.check_scalar(
      name, [&] { return loss(model.predict(batch, x), batch, grid_targets, station_targets).total; }, inputs, max_elements);
}

}  // namespace

GradAudit run_grad_audit(std::uint64_t seed, double tol) {
  AuditBuilder a(seed, tol);
  audit_primitives(a);
  audit_kan(a);

  ModelConfig small;
  small.embed_dim = 6;
  small.hidden_dim = 8;
  small.reduce_dim = 5;
  small.encoder_channels = {3, 4, 4, 5};
  small.feature_channels = 4;
  small.generator_channels = 3;
  for (auto variant : {ModelVariant::kKani, ModelVariant::kHyperMlp, ModelVariant::kPureMlp}) {
    small.variant = variant;
    audit_model(a, small, std::string("model/") + to_string(variant) + "/small", 24);
  }
  audit_model(a, ModelConfig{}, "model/kani/default", 6);

  GradAudit audit;
  audit.items = std::move(a.items);
  return audit;
}

}  // namespace kani
