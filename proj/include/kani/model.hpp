#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "kani/autodiff.hpp"
#include "kani/checkpoint.hpp"
#include "kani/config.hpp"
#include "kani/grid.hpp"
#include "kani/kan.hpp"
#include "kani/ops.hpp"

namespace kani {

enum class ModelVariant { kKani, kHyperMlp, kPureMlp };

const char* to_string(ModelVariant variant);
ModelVariant model_variant_from_string(const std::string& text);

struct ModelConfig {
  ModelVariant variant = ModelVariant::kKani;
  std::size_t embed_dim = 64;    // C
  std::size_t hidden_dim = 128;  // H, also C'
  std::size_t reduce_dim = 64;   // C''
  std::size_t kan_layers = 2;    // L
  std::vector<std::size_t> encoder_channels{16, 32, 64, 128};
  std::size_t feature_channels = 128;  // c
  std::size_t generator_channels = 16;
  SplineConfig spline;

  void validate() const;
};

ModelConfig model_config_from(const KeyValueConfig& kv);

// Channels zeroed before the reconstructor, both in training and inference.
struct AblationFlags {
  bool disable_date = false;
  bool disable_topo = false;
  bool disable_resolution = false;

  bool any() const { return disable_date || disable_topo || disable_resolution; }
  bool operator==(const AblationFlags&) const = default;
};

AblationFlags ablation_flags_from(const KeyValueConfig& kv);

// Per-point inputs of the reconstructor, stored column-wise.
struct QueryBatch {
  std::size_t n_grid = 0;
  std::size_t n_station = 0;
  std::vector<double> coords;      // [N x 2] lat, lon scaled to [-1, 1] over the bbox
  std::vector<double> date;        // [N x 4] sin/cos hour of day, sin/cos day of year
  std::vector<double> topo;        // [N] normalized elevation
  std::vector<double> resolution;  // [N] spacing / training spacing; 0 for point queries
  std::vector<double> state;       // [N] normalized field value at the point
  std::vector<std::uint8_t> is_station;
  // state == stencil applied to the normalized input field
  ops::GatherStencil state_stencil;

  std::size_t size() const { return n_grid + n_station; }
  bool operator==(const QueryBatch& other) const;
};

QueryBatch apply_ablation(const AblationFlags& flags, QueryBatch batch);

// Elevation models at one or more resolutions over a common bbox.
class TopographySet {
 public:
  TopographySet() = default;
  explicit TopographySet(std::vector<TopographyGrid> grids);

  bool empty() const { return grids_.empty(); }
  const std::vector<TopographyGrid>& grids() const { return grids_; }
  // Uses the DEM whose resolution matches `resolution`, otherwise bilinear
  // sampling of the finest DEM. Throws if a point lies outside its bbox.
  std::vector<double> sample(std::span<const LatLon> points, double resolution) const;

 private:
  std::vector<TopographyGrid> grids_;
};

struct Normalizer {
  NormStats variable;
  NormStats elevation;
  BBox bbox;
  double train_resolution = 0.0;
};

enum class QueryMode { kTraining, kCorrect, kDownscale, kStations };
// kGridSpacing: grid queries carry their spacing / training spacing.
// kPoint: every query carries 0, the point-query value.
enum class ResolutionChannel { kGridSpacing, kPoint };

const char* to_string(QueryMode mode);
QueryMode query_mode_from_string(const std::string& text);

struct QueryRequest {
  QueryMode mode = QueryMode::kCorrect;
  double resolution = 0.0;  // target spacing for kDownscale
  ResolutionChannel channel = ResolutionChannel::kPoint;
};

// Training: all grid cells (state = cell value, resolution = r) followed by
// all stations (state = bilinear at the station, resolution 0). `stations`
// is required for kTraining and kStations and ignored otherwise.
QueryBatch build_query_batch(const GriddedField& field, const StationSet* stations, const TopographySet& topo,
                             std::int64_t time, const QueryRequest& request, const Normalizer& norm);

// 4 features shared by every point of a sample taken at `time` (hours).
std::array<double, 4> date_features(std::int64_t time_hours);

struct GeneratedWeights {
  Var w1;  // [H x C]
  Var w2;  // [C' x H]
};

struct ParamCount {
  std::size_t total = 0;
  std::vector<std::pair<std::string, std::size_t>> components;
};

class Model {
 public:
  Model(ModelConfig config, std::size_t field_height, std::size_t field_width, std::uint64_t seed,
        AblationFlags ablation = {});

  const ModelConfig& config() const { return config_; }
  const AblationFlags& ablation() const { return ablation_; }
  std::size_t field_height() const { return height_; }
  std::size_t field_width() const { return width_; }
  const std::vector<NamedVar>& parameters() const { return params_; }
  const Var& parameter(const std::string& name) const;

  // field [1 x h x w] normalized -> [c x d], d = (h/16)(w/16).
  Var encode_field(const Var& field) const;
  GeneratedWeights generate_weights(const Var& features) const;
  // Normalized predictions [N]; `state` is [N]. gw is unused by pure_mlp.
  Var reconstruct(const QueryBatch& batch, const Var& state, const GeneratedWeights* gw) const;
  // Full normalized pass: ablation, encoder, generator, reconstructor.
  // `field` is the normalized input [1 x h x w]; state is gathered from it.
  Var predict(const QueryBatch& batch, const Var& field) const;

  ParamCount param_count() const;
  std::vector<NamedTensor> state_dict() const;
  void load_state_dict(const std::vector<NamedTensor>& records);
  void zero_output_head();
  Model clone() const;

 private:
  struct Dense {
    Var w, b;
  };
  struct Conv {
    Var w, b;
  };
  struct Norm {
    Var gamma, beta;
  };

  void build(std::uint64_t seed);
  Dense add_dense(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);
  Conv add_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::mt19937_64& rng);
  Norm add_norm(const std::string& name, std::size_t dim);
  Var add_param(const std::string& name, Tensor value);
  Var embed(const QueryBatch& batch, const Var& state) const;
  static Var apply_dense(const Var& x, const Dense& d) { return ops::linear(x, d.w, d.b); }

  ModelConfig config_;
  AblationFlags ablation_;
  std::size_t height_ = 0, width_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<NamedVar> params_;

  std::vector<Conv> enc_a_, enc_b_;  // per stage: stride-2 conv, then stride-1 conv
  Conv dec_conv_;                    // bottleneck + /16 skip -> c
  Conv gen_conv_[2];
  Dense gen_dense_[2];
  Dense emb_coords_, emb_date_, emb_topo_, emb_res_, emb_state_;
  Norm norm1_, norm2_;
  Dense reduce_;
  std::vector<KanLayerParams> kan_;
  std::vector<Dense> mlp_;
  Dense neck_;
  Dense head_;
};

// Composes normalization, batch building, the network and denormalization.
std::vector<double> forward(const Model& model, const GriddedField& field, const StationSet* stations,
                            const TopographySet& topo, const QueryRequest& request, const Normalizer& norm);

// Normalized field as a [1 x h x w] constant.
Var field_input(const GriddedField& field, const Normalizer& norm);

}  // namespace kani
