#pragma once

#include "kani/dataset.hpp"
#include "kani/model.hpp"
#include "kani/synth.hpp"
#include "kani/trainer.hpp"
#include "test_util.hpp"

// 16x16 terrain scenario with 8 stations and 14/2/4 samples, generated once
// per test process.
inline const ScratchDir& tiny_dataset_dir() {
  static const ScratchDir dir("tiny");
  static const bool generated = [] {
    kani::SyntheticScenario s;
    s.bbox = {30.0, 34.0, -110.0, -106.0};
    s.n_stations = 8;
    kani::generate_dataset(s, 20, {0.7, 0.1, 0.2}, dir.path());
    return true;
  }();
  (void)generated;
  return dir;
}

inline const kani::Dataset& tiny_dataset() {
  static const kani::Dataset d = kani::load_dataset(tiny_dataset_dir().path());
  return d;
}

inline kani::ModelConfig tiny_model_config(kani::ModelVariant v = kani::ModelVariant::kKani) {
  kani::ModelConfig c;
  c.variant = v;
  c.embed_dim = 8;
  c.hidden_dim = 8;
  c.reduce_dim = 6;
  c.encoder_channels = {4, 4, 4, 4};
  c.feature_channels = 4;
  c.generator_channels = 2;
  return c;
}

inline kani::TrainConfig tiny_train_config() {
  kani::TrainConfig c;
  c.epochs = 3;
  c.milestones = {2};
  c.base_lr = 1e-3;
  c.batch_size = 4;
  c.seed = 3;
  return c;
}
