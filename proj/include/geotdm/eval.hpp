#pragma once

#include <string>
#include <utility>
#include <vector>

#include "geotdm/egtn.hpp"
#include "geotdm/geom.hpp"

namespace geotdm {

struct AdeFde {
  double ade = 0;  // mean over frames and nodes of point displacement
  double fde = 0;  // mean over nodes of final-frame displacement
};

// Both tensors are [T, N, D] and must agree in shape.
AdeFde ade_fde(const TensorD& pred, const TensorD& ref);

// Aggregates displacement errors over K candidate predictions of one
// reference: the mean of the per-candidate metrics, or the best (minimum)
// value of each metric across candidates.
AdeFde ade_fde_over_k(const std::vector<TensorD>& preds, const TensorD& ref, bool min_over_k);

// Distribution distance between two trajectory sets. For each frame index,
// all coordinate components of a set are pooled into one sample; both pools
// are histogrammed over their shared range and compared by mean absolute
// difference of the bin probabilities. The per-frame values are averaged.
// Two disjoint singleton distributions under two bins score exactly 1.
double marginal_score(const std::vector<GeoTrajectory>& gen,
                      const std::vector<GeoTrajectory>& ref, int bins = 50);

struct SurrogateConfig {
  int hidden_dim = 32;
  int time_emb_dim = 8;
  int steps = 200;
  int batch_size = 16;
  double lr = 1e-3;
  double train_frac = 0.8;
  uint64_t seed = 0;
};

// Test cross-entropy (nats) of a small graph classifier trained to tell
// generated trajectories (label 1) from reference ones (label 0). Values
// near ln 2 mean the sets are indistinguishable to the classifier; values
// near 0 mean they are trivially separable.
double classification_score(const std::vector<GeoTrajectory>& gen,
                            const std::vector<GeoTrajectory>& ref, const SurrogateConfig& cfg);

// Mean squared error of a small forecaster trained to map the first half of
// each generated trajectory to its second half, evaluated on the reference
// set. Lower values mean the generated dynamics transfer to real data.
double prediction_score(const std::vector<GeoTrajectory>& gen,
                        const std::vector<GeoTrajectory>& ref, const SurrogateConfig& cfg);

struct SurrogateScores {
  double classification_ce = 0;
  double prediction_mse = 0;
};

SurrogateScores surrogate_scores(const std::vector<GeoTrajectory>& gen,
                                 const std::vector<GeoTrajectory>& ref,
                                 const SurrogateConfig& cfg);

struct MetricReport {
  std::vector<std::pair<std::string, double>> items;
  void add(std::string name, double value) { items.emplace_back(std::move(name), value); }
  std::string table() const;
  std::string kv() const;
};

}  // namespace geotdm
