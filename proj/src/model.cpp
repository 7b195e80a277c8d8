#include "kani/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace kani {
namespace {

Var constant_matrix(const std::vector<double>& values, std::size_t rows, std::size_t cols) {
  return constant(Tensor({rows, cols}, values));
}

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

double floor_mod(std::int64_t a, std::int64_t m) {
  const std::int64_t r = a % m;
  return static_cast<double>(r < 0 ? r + m : r);
}

}  // namespace

const char* to_string(ModelVariant variant) {
  switch (variant) {
    case ModelVariant::kKani: return "kani";
    case ModelVariant::kHyperMlp: return "hyper_mlp";
    case ModelVariant::kPureMlp: return "pure_mlp";
  }
  return "?";
}

ModelVariant model_variant_from_string(const std::string& text) {
  if (text == "kani") return ModelVariant::kKani;
  if (text == "hyper_mlp") return ModelVariant::kHyperMlp;
  if (text == "pure_mlp") return ModelVariant::kPureMlp;
  throw std::invalid_argument("unknown model variant '" + text + "' (expected kani, hyper_mlp or pure_mlp)");
}

void ModelConfig::validate() const {
  if (embed_dim < 1 || hidden_dim < 1 || reduce_dim < 1 || feature_channels < 1 || generator_channels < 1) {
    throw std::invalid_argument("ModelConfig: all dimensions must be >= 1");
  }
  if (encoder_channels.size() != 4) throw std::invalid_argument("ModelConfig: encoder_channels needs 4 entries");
  for (auto c : encoder_channels) {
    if (c < 1) throw std::invalid_argument("ModelConfig: encoder channels must be >= 1");
  }
  if (variant == ModelVariant::kKani && kan_layers < 1) throw std::invalid_argument("ModelConfig: kan_layers must be >= 1");
  spline.validate();
}

ModelConfig model_config_from(const KeyValueConfig& kv) {
  ModelConfig c;
  c.variant = model_variant_from_string(kv.get_string("variant", to_string(c.variant)));
  auto dim = [&kv](const char* key, std::size_t fallback) {
    const auto v = kv.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 1) throw std::invalid_argument(std::string("config key '") + key + "' must be >= 1");
    return static_cast<std::size_t>(v);
  };
  c.embed_dim = dim("embed_dim", c.embed_dim);
  c.hidden_dim = dim("hidden_dim", c.hidden_dim);
  c.reduce_dim = dim("reduce_dim", c.reduce_dim);
  c.kan_layers = dim("kan_layers", c.kan_layers);
  c.feature_channels = dim("feature_channels", c.feature_channels);
  c.generator_channels = dim("generator_channels", c.generator_channels);
  if (kv.has("encoder_channels")) {
    c.encoder_channels.clear();
    for (auto v : kv.get_ints("encoder_channels", {})) {
      if (v < 1) throw std::invalid_argument("config key 'encoder_channels' entries must be >= 1");
      c.encoder_channels.push_back(static_cast<std::size_t>(v));
    }
  }
  c.spline.degree = static_cast<int>(kv.get_int("spline_degree", c.spline.degree));
  c.spline.grid_size = static_cast<int>(kv.get_int("spline_grid_size", c.spline.grid_size));
  c.spline.lo = kv.get_double("spline_lo", c.spline.lo);
  c.spline.hi = kv.get_double("spline_hi", c.spline.hi);
  c.validate();
  return c;
}

AblationFlags ablation_flags_from(const KeyValueConfig& kv) {
  AblationFlags f;
  f.disable_date = kv.get_bool("disable_date", false);
  f.disable_topo = kv.get_bool("disable_topo", false);
  f.disable_resolution = kv.get_bool("disable_resolution", false);
  return f;
}

bool QueryBatch::operator==(const QueryBatch& o) const {
  return n_grid == o.n_grid && n_station == o.n_station && coords == o.coords && date == o.date && topo == o.topo &&
         resolution == o.resolution && state == o.state && is_station == o.is_station &&
         state_stencil.index == o.state_stencil.index && state_stencil.weight == o.state_stencil.weight;
}

QueryBatch apply_ablation(const AblationFlags& flags, QueryBatch batch) {
  if (flags.disable_date) std::fill(batch.date.begin(), batch.date.end(), 0.0);
  if (flags.disable_topo) std::fill(batch.topo.begin(), batch.topo.end(), 0.0);
  if (flags.disable_resolution) std::fill(batch.resolution.begin(), batch.resolution.end(), 0.0);
  return batch;
}

TopographySet::TopographySet(std::vector<TopographyGrid> grids) : grids_(std::move(grids)) {
  std::sort(grids_.begin(), grids_.end(),
            [](const TopographyGrid& a, const TopographyGrid& b) { return a.resolution() > b.resolution(); });
}

std::vector<double> TopographySet::sample(std::span<const LatLon> points, double resolution) const {
  if (grids_.empty()) throw std::invalid_argument("topography: no elevation grids loaded");
  const TopographyGrid* grid = &grids_.back();
  for (const auto& g : grids_) {
    if (std::abs(g.resolution() - resolution) <= 1e-9 * resolution) grid = &g;
  }
  const BBox& bb = grid->geometry().bbox;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!(p.lat >= bb.lat_min && p.lat <= bb.lat_max && p.lon >= bb.lon_min && p.lon <= bb.lon_max)) {
      throw std::invalid_argument("topography: point " + std::to_string(i) + " (" + std::to_string(p.lat) + ", " +
                                  std::to_string(p.lon) + ") not covered by the elevation model");
    }
  }
  return bilinear_interp(grid->field(), points).values;
}

const char* to_string(QueryMode mode) {
  switch (mode) {
    case QueryMode::kTraining: return "training";
    case QueryMode::kCorrect: return "correct";
    case QueryMode::kDownscale: return "downscale";
    case QueryMode::kStations: return "stations";
  }
  return "?";
}

QueryMode query_mode_from_string(const std::string& text) {
  if (text == "training") return QueryMode::kTraining;
  if (text == "correct") return QueryMode::kCorrect;
  if (text == "downscale") return QueryMode::kDownscale;
  if (text == "stations") return QueryMode::kStations;
  throw std::invalid_argument("unknown query mode '" + text + "' (expected correct, downscale or stations)");
}

std::array<double, 4> date_features(std::int64_t time_hours) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  const double hour = floor_mod(time_hours, 24);
  const double day = floor_mod(time_hours >= 0 ? time_hours / 24 : (time_hours - 23) / 24, 365);
  return {std::sin(kTwoPi * hour / 24.0), std::cos(kTwoPi * hour / 24.0), std::sin(kTwoPi * day / 365.0),
          std::cos(kTwoPi * day / 365.0)};
}

namespace {

void append_points(QueryBatch& b, std::span<const LatLon> pts, const BBox& bbox, const std::array<double, 4>& date,
                   std::span<const double> elevation, const NormStats& elev_stats, double res_value, bool station) {
  const auto topo = normalize(elevation, elev_stats);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    b.coords.push_back(2.0 * (pts[i].lat - bbox.lat_min) / bbox.lat_span() - 1.0);
    b.coords.push_back(2.0 * (pts[i].lon - bbox.lon_min) / bbox.lon_span() - 1.0);
    b.date.insert(b.date.end(), date.begin(), date.end());
    b.topo.push_back(topo[i]);
    b.resolution.push_back(res_value);
    b.is_station.push_back(station ? 1 : 0);
  }
}

bool same_bbox(const BBox& a, const BBox& b) {
  return std::abs(a.lat_min - b.lat_min) <= 1e-9 && std::abs(a.lat_max - b.lat_max) <= 1e-9 &&
         std::abs(a.lon_min - b.lon_min) <= 1e-9 && std::abs(a.lon_max - b.lon_max) <= 1e-9;
}

}  // namespace

QueryBatch build_query_batch(const GriddedField& field, const StationSet* stations, const TopographySet& topo,
                             std::int64_t time, const QueryRequest& request, const Normalizer& norm) {
  if (!same_bbox(field.bbox(), norm.bbox)) throw std::invalid_argument("build_query_batch: field bbox differs from the model bbox");
  if (!(norm.train_resolution > 0.0)) throw std::invalid_argument("build_query_batch: training resolution must be positive");
  const auto date = date_features(time);
  const auto& geom = field.geometry();
  const double r = field.resolution();
  const bool point_channel = request.channel == ResolutionChannel::kPoint;
  QueryBatch b;

  auto add_grid = [&](const CoordinateGrid& grid, ops::GatherStencil stencil, double res_value) {
    const auto pts = grid.points();
    const auto elev = topo.sample(pts, grid.resolution());
    append_points(b, pts, field.bbox(), date, elev, norm.elevation, res_value, false);
    b.n_grid += pts.size();
    b.state_stencil.append(stencil);
  };
  auto add_stations = [&]() {
    if (!stations) throw std::invalid_argument(std::string("build_query_batch: mode '") + to_string(request.mode) + "' needs stations");
    const auto pts = stations->points();
    std::vector<double> elev;
    for (const auto& s : stations->stations()) elev.push_back(s.elevation);
    append_points(b, pts, field.bbox(), date, elev, norm.elevation, 0.0, true);
    b.n_station += pts.size();
    b.state_stencil.append(bilinear_stencil(geom, pts));
  };

  switch (request.mode) {
    case QueryMode::kTraining:
      add_grid(make_coordinate_grid(field.bbox(), r), identity_stencil(geom), r / norm.train_resolution);
      add_stations();
      break;
    case QueryMode::kCorrect:
      add_grid(make_coordinate_grid(field.bbox(), r), identity_stencil(geom), point_channel ? 0.0 : r / norm.train_resolution);
      break;
    case QueryMode::kDownscale: {
      if (!(request.resolution > 0.0)) throw std::invalid_argument("build_query_batch: downscale needs a positive resolution");
      const auto fine = make_coordinate_grid(field.bbox(), request.resolution);
      const auto pts = fine.points();
      add_grid(fine, bilinear_stencil(geom, pts), point_channel ? 0.0 : request.resolution / norm.train_resolution);
      break;
    }
    case QueryMode::kStations:
      add_stations();
      break;
  }
  const auto xn = normalize(field.values(), norm.variable);
  b.state = ops::apply_stencil(xn, b.state_stencil);
  return b;
}

Model::Model(ModelConfig config, std::size_t field_height, std::size_t field_width, std::uint64_t seed,
             AblationFlags ablation)
    : config_(std::move(config)), ablation_(ablation), height_(field_height), width_(field_width), seed_(seed) {
  config_.validate();
  if (config_.variant != ModelVariant::kPureMlp &&
      (height_ == 0 || width_ == 0 || height_ % 16 != 0 || width_ % 16 != 0)) {
    throw ShapeError("Model: field size " + std::to_string(height_) + "x" + std::to_string(width_) +
                     " is not divisible by 16");
  }
  build(seed);
}

Var Model::add_param(const std::string& name, Tensor value) {
  Var v = kani::parameter(std::move(value));
  params_.push_back({name, v});
  return v;
}

Model::Dense Model::add_dense(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Dense d;
  d.w = add_param(name + ".weight", uniform({out, in}, bound, rng));
  d.b = add_param(name + ".bias", uniform({out}, bound, rng));
  return d;
}

// He-uniform weights keep activations O(1) through the relu stack; the bias
// follows the usual 1/sqrt(fan_in) uniform rule.
Model::Conv Model::add_conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k,
                            std::mt19937_64& rng) {
  const bool two_d = name.rfind("encoder", 0) == 0;
  const std::size_t fan_in = in * k * (two_d ? k : 1);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Conv c;
  c.w = add_param(name + ".weight", uniform(two_d ? Shape{out, in, k, k} : Shape{out, in, k}, bound, rng));
  c.b = add_param(name + ".bias", uniform({out}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng));
  return c;
}

Model::Norm Model::add_norm(const std::string& name, std::size_t dim) {
  Norm n;
  n.gamma = add_param(name + ".gamma", Tensor({dim}, 1.0));
  n.beta = add_param(name + ".beta", Tensor({dim}, 0.0));
  return n;
}

void Model::build(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& c = config_;
  const bool hyper = c.variant != ModelVariant::kPureMlp;
  if (hyper) {
    std::size_t in = 1;
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string stage = "encoder.down" + std::to_string(i);
      enc_a_.push_back(add_conv(stage + ".conv1", in, c.encoder_channels[i], 3, rng));
      enc_b_.push_back(add_conv(stage + ".conv2", c.encoder_channels[i], c.encoder_channels[i], 3, rng));
      in = c.encoder_channels[i];
    }
    enc_a_.push_back(add_conv("encoder.bottleneck", in, in, 3, rng));
    dec_conv_ = add_conv("encoder.decoder", 2 * in, c.feature_channels, 3, rng);
    const std::size_t d = (height_ / 16) * (width_ / 16);
    const std::size_t sizes[2] = {c.hidden_dim * c.embed_dim, c.hidden_dim * c.hidden_dim};
    for (int i = 0; i < 2; ++i) {
      const std::string name = "generator.w" + std::to_string(i + 1);
      gen_conv_[i] = add_conv(name + ".conv", c.feature_channels, c.generator_channels, 3, rng);
      gen_dense_[i] = add_dense(name + ".dense", c.generator_channels * d, sizes[i], rng);
    }
  }
  emb_coords_ = add_dense("embed.coords", 2, c.embed_dim, rng);
  emb_date_ = add_dense("embed.date", 4, c.embed_dim, rng);
  emb_topo_ = add_dense("embed.topo", 1, c.embed_dim, rng);
  emb_res_ = add_dense("embed.resolution", 1, c.embed_dim, rng);
  emb_state_ = add_dense("embed.state", 1, c.embed_dim, rng);
  std::size_t head_in = 0;
  if (hyper) {
    norm1_ = add_norm("norm1", c.hidden_dim);
    norm2_ = add_norm("norm2", c.hidden_dim);
    reduce_ = add_dense("reduce", c.hidden_dim, c.reduce_dim, rng);
    if (c.variant == ModelVariant::kKani) {
      for (std::size_t l = 0; l < c.kan_layers; ++l) {
        auto layer = init_kan_layer(c.reduce_dim, c.reduce_dim, c.spline, rng);
        const std::string name = "kan." + std::to_string(l);
        params_.push_back({name + ".spline_coeffs", layer.spline_coeffs});
        params_.push_back({name + ".base_weights", layer.base_weights});
        kan_.push_back(layer);
      }
    } else {
      for (int l = 0; l < 2; ++l) mlp_.push_back(add_dense("mlp." + std::to_string(l), c.reduce_dim, c.reduce_dim, rng));
    }
    head_in = c.reduce_dim;
  } else {
    neck_ = add_dense("neck", c.embed_dim, c.hidden_dim, rng);
    for (int l = 0; l < 2; ++l) mlp_.push_back(add_dense("mlp." + std::to_string(l), c.hidden_dim, c.hidden_dim, rng));
    head_in = c.hidden_dim;
  }
  head_.w = add_param("head.weight", Tensor({1, head_in}, 0.0));
  head_.b = add_param("head.bias", Tensor({1}, 0.0));
}

const Var& Model::parameter(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.var;
  }
  throw std::invalid_argument("Model: no parameter named '" + name + "'");
}

Var Model::encode_field(const Var& field) const {
  if (config_.variant == ModelVariant::kPureMlp) throw std::invalid_argument("encode_field: pure_mlp has no encoder");
  if (field.shape() != Shape{1, height_, width_}) {
    throw ShapeError("encode_field", Shape{1, height_, width_}, field.shape());
  }
  Var x = field;
  for (std::size_t i = 0; i < 4; ++i) {
    x = ops::relu(ops::conv2d(x, enc_a_[i].w, enc_a_[i].b, 2));
    x = ops::relu(ops::conv2d(x, enc_b_[i].w, enc_b_[i].b, 1));
  }
  const Var skip = x;
  const Var bottleneck = ops::relu(ops::conv2d(x, enc_a_[4].w, enc_a_[4].b, 1));
  Var a = ops::relu(ops::conv2d(ops::concat({bottleneck, skip}, 0), dec_conv_.w, dec_conv_.b, 1));
  const std::size_t d = (height_ / 16) * (width_ / 16);
  return ops::reshape(a, {config_.feature_channels, d});
}

GeneratedWeights Model::generate_weights(const Var& features) const {
  if (config_.variant == ModelVariant::kPureMlp) throw std::invalid_argument("generate_weights: pure_mlp has no generator");
  const std::size_t d = (height_ / 16) * (width_ / 16);
  if (features.shape() != Shape{config_.feature_channels, d}) {
    throw ShapeError("generate_weights", Shape{config_.feature_channels, d}, features.shape());
  }
  const Shape shapes[2] = {{config_.hidden_dim, config_.embed_dim}, {config_.hidden_dim, config_.hidden_dim}};
  Var out[2];
  for (int i = 0; i < 2; ++i) {
    Var h = ops::relu(ops::conv1d(features, gen_conv_[i].w, gen_conv_[i].b));
    h = ops::reshape(h, {1, config_.generator_channels * d});
    out[i] = ops::reshape(apply_dense(h, gen_dense_[i]), shapes[i]);
  }
  return {out[0], out[1]};
}

Var Model::embed(const QueryBatch& batch, const Var& state) const {
  const std::size_t n = batch.size();
  if (batch.coords.size() != 2 * n || batch.date.size() != 4 * n || batch.topo.size() != n ||
      batch.resolution.size() != n || state.shape() != Shape{n}) {
    throw ShapeError("reconstruct: inconsistent query batch of " + std::to_string(n) + " points");
  }
  Var z = apply_dense(constant_matrix(batch.coords, n, 2), emb_coords_);
  z = ops::add(z, apply_dense(constant_matrix(batch.date, n, 4), emb_date_));
  z = ops::add(z, apply_dense(constant_matrix(batch.topo, n, 1), emb_topo_));
  z = ops::add(z, apply_dense(constant_matrix(batch.resolution, n, 1), emb_res_));
  return ops::add(z, apply_dense(ops::reshape(state, {n, 1}), emb_state_));
}

Var Model::reconstruct(const QueryBatch& batch, const Var& state, const GeneratedWeights* gw) const {
  const std::size_t n = batch.size();
  Var u = embed(batch, state);
  Var h;
  if (config_.variant == ModelVariant::kPureMlp) {
    h = apply_dense(u, neck_);
    for (const auto& layer : mlp_) h = ops::relu(apply_dense(h, layer));
  } else {
    if (!gw) throw std::invalid_argument("reconstruct: generated weights required for " + std::string(to_string(config_.variant)));
    h = ops::relu(ops::layer_norm(ops::linear(u, gw->w1), norm1_.gamma, norm1_.beta));
    h = ops::relu(ops::layer_norm(ops::linear(h, gw->w2), norm2_.gamma, norm2_.beta));
    h = apply_dense(h, reduce_);
    if (config_.variant == ModelVariant::kKani) {
      for (const auto& layer : kan_) h = kan_layer_forward(h, layer);
    } else {
      for (const auto& layer : mlp_) h = ops::relu(apply_dense(h, layer));
    }
  }
  Var y = ops::reshape(apply_dense(h, head_), {n});
  return ops::add(y, state);
}

Var Model::predict(const QueryBatch& batch, const Var& field) const {
  const QueryBatch* b = &batch;
  QueryBatch ablated;
  if (ablation_.any()) {
    ablated = apply_ablation(ablation_, batch);
    b = &ablated;
  }
  const Var state = ops::gather(field, b->state_stencil);
  if (config_.variant == ModelVariant::kPureMlp) return reconstruct(*b, state, nullptr);
  const auto gw = generate_weights(encode_field(field));
  return reconstruct(*b, state, &gw);
}

ParamCount Model::param_count() const {
  ParamCount pc;
  for (const auto& p : params_) {
    const std::string comp = p.name.substr(0, p.name.find('.'));
    const std::size_t n = p.var.size();
    pc.total += n;
    auto it = std::find_if(pc.components.begin(), pc.components.end(), [&](const auto& e) { return e.first == comp; });
    if (it == pc.components.end()) {
      pc.components.emplace_back(comp, n);
    } else {
      it->second += n;
    }
  }
  return pc;
}

std::vector<NamedTensor> Model::state_dict() const {
  std::vector<NamedTensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back({p.name, p.var.value()});
  return out;
}

void Model::load_state_dict(const std::vector<NamedTensor>& records) {
  if (records.size() != params_.size()) {
    throw std::invalid_argument("checkpoint has " + std::to_string(records.size()) + " tensors, model expects " +
                                std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& p = params_[i];
    if (records[i].name != p.name) {
      throw std::invalid_argument("checkpoint tensor " + std::to_string(i) + " is '" + records[i].name + "', expected '" + p.name + "'");
    }
    if (records[i].tensor.shape() != p.var.shape()) {
      throw ShapeError("checkpoint tensor '" + p.name + "' has shape " + shape_str(records[i].tensor.shape()) +
                       ", expected " + shape_str(p.var.shape()));
    }
  }
  for (std::size_t i = 0; i < records.size(); ++i) params_[i].var.mutable_value() = records[i].tensor;
}

void Model::zero_output_head() {
  head_.w.mutable_value().fill(0.0);
  head_.b.mutable_value().fill(0.0);
}

Model Model::clone() const {
  Model m(config_, height_, width_, seed_, ablation_);
  m.load_state_dict(state_dict());
  return m;
}

Var field_input(const GriddedField& field, const Normalizer& norm) {
  return constant(Tensor({1, field.height(), field.width()}, normalize(field.values(), norm.variable)));
}

std::vector<double> forward(const Model& model, const GriddedField& field, const StationSet* stations,
                            const TopographySet& topo, const QueryRequest& request, const Normalizer& norm) {
  const auto batch = build_query_batch(field, stations, topo, field.time(), request, norm);
  const Var y = model.predict(batch, field_input(field, norm));
  return denormalize(y.value().values(), norm.variable);
}

}  // namespace kani
