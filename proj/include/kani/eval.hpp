#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "kani/dataset.hpp"
#include "kani/gradcheck.hpp"
#include "kani/model.hpp"
#include "kani/synth.hpp"
#include "kani/trainer.hpp"

namespace kani {

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t n = 0;
};

// Physical-unit MSE and MAE; throws on empty or mismatched inputs.
Metrics evaluate_stations(std::span<const double> predictions, std::span<const double> observations);

// Pools squared and absolute errors over several evaluation sets.
class MetricsAccumulator {
 public:
  void add(std::span<const double> predictions, std::span<const double> observations);
  Metrics result() const;

 private:
  double sq_ = 0.0, abs_ = 0.0;
  std::size_t n_ = 0;
};

// With only_listed set, scoring uses just the stations named in `ids`.
struct StationFilter {
  std::set<std::string> ids;
  bool only_listed = false;

  StationSet apply(const StationSet& stations) const;
};

std::vector<double> predict_stations(const Model& model, const Dataset& data, const Sample& sample, const StationSet& stations);
Metrics model_station_metrics(const Model& model, const Dataset& data, std::span<const Sample> samples,
                              const StationFilter& filter = {});

enum class InterpMethod { kBilinear, kNearest };
Metrics interp_station_metrics(InterpMethod method, std::span<const Sample> samples, const StationFilter& filter = {});

struct MetricsRow {
  std::string method;
  std::string variable;
  std::string split;
  Metrics metrics;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  std::uint64_t seed = 0;
  std::string config_digest;

  const MetricsRow& row(const std::string& method) const;
};

struct NamedModel {
  std::string name;
  const Model* model = nullptr;
};

// Rows "linear" and "nearest" from the input fields, then one per model.
MetricsReport compare_baselines(const Dataset& data, Split split, const std::vector<NamedModel>& models,
                                const StationFilter& filter = {});

void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path);
void write_summary_json(const MetricsReport& report, const std::filesystem::path& path);

struct SweepPoint {
  double resolution = 0.0;  // 0 marks direct station queries
  double mse = 0.0;
};

struct SweepCurve {
  std::string method;
  std::vector<SweepPoint> points;
};

// For each resolution: reconstruct the field there, bilinear-interpolate it
// to the stations and score; the final entry scores direct station queries.
SweepCurve resolution_sweep(const Model& model, const std::string& name, const Dataset& data,
                            std::span<const Sample> samples, const std::vector<double>& resolutions,
                            const StationFilter& filter = {}, ResolutionChannel channel = ResolutionChannel::kPoint);
// The same protocol applied to the raw input field.
SweepCurve input_field_sweep(const Dataset& data, std::span<const Sample> samples, const std::vector<double>& resolutions,
                             const StationFilter& filter = {});
void write_sweep_csv(const std::vector<SweepCurve>& curves, const std::filesystem::path& path);

struct DownscaleScore {
  double model_rmse = 0.0;     // downscaled prediction vs the analytic truth
  double upsample_rmse = 0.0;  // bilinear upsampling of the corrected field at r
  std::size_t n = 0;
};

DownscaleScore oracle_downscale_score(const Model& model, const Dataset& data, std::span<const Sample> samples,
                                      double resolution, const Oracle& oracle,
                                      ResolutionChannel channel = ResolutionChannel::kPoint);

struct AblationRun {
  std::string name;
  AblationFlags flags;
};

// full, w/o date, w/o topo, w/o res
std::vector<AblationRun> default_ablation_runs();

MetricsReport ablation_suite(const Dataset& data, const ModelConfig& model_config, const TrainConfig& base,
                             const std::vector<AblationRun>& runs, const std::filesystem::path& out_dir,
                             std::ostream* log = nullptr);

// 64-bit FNV-1a of the text, as 16 hex digits.
std::string config_digest(const std::string& text);

struct GradAuditItem {
  std::string name;
  GradCheckReport report;
};

struct GradAudit {
  std::vector<GradAuditItem> items;
  bool passed() const;
  double max_rel_error() const;
};

// Finite-difference audit of every primitive, the KAN layer and end-to-end
// losses of all three model variants on a 16x16 toy field.
GradAudit run_grad_audit(std::uint64_t seed, double tol = 1e-4);

}  // namespace kani
