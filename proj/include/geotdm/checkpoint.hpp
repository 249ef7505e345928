#pragma once

#include <string>

#include "geotdm/egtn.hpp"
#include "geotdm/train.hpp"

namespace geotdm {

struct CheckpointMeta {
  EgtnConfig cfg;
  int64_t step = 0;
  int sched_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  bool has_optimizer = false;
};

struct LoadedCheckpoint {
  EgtnModel<float> model;
  CheckpointMeta meta;
  std::vector<TensorF> adam_m, adam_v;
  int64_t adam_t = 0;
};

// Versioned binary container: config echo, named f32 tensors, training step,
// optional optimizer moments, trailing CRC-32. Writes are atomic
// (tmp file + rename).
void save_checkpoint(const std::string& path, EgtnModel<float>& model, const CheckpointMeta& meta,
                     Adam<float>* opt = nullptr);

// Rebuilds the model from the config echo.
LoadedCheckpoint load_checkpoint(const std::string& path);

// Loads tensors into an existing model; throws listing every tensor whose
// name or shape does not match.
void load_checkpoint_into(const std::string& path, EgtnModel<float>& model);

}  // namespace geotdm
