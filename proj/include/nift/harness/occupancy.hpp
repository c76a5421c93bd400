#pragma once

#include "nift/training.hpp"

#include <map>

namespace nift {

// Every undirected edge is shared by exactly two triangles.
inline bool is_watertight(const Geometry& g) {
  if (!g.is_mesh() || g.triangles.empty()) return false;
  std::map<std::pair<int, int>, int> edges;
  for (const auto& t : g.triangles)
    for (int k = 0; k < 3; ++k) {
      int a = t[k], b = t[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      ++edges[{a, b}];
    }
  for (const auto& [e, n] : edges)
    if (n != 2) return false;
  return true;
}

// Occupancy network stand-in for the NDF rows: same encoder/decoder as the
// SCF regressor, trained with BCE on inside/outside labels.
inline RegressorWeights train_occupancy_weights(std::size_t objects = 100, std::size_t queries = 256,
                                                std::uint64_t seed = 2, TrainConfig cfg = desk_scale_train_config()) {
  TrainingSetConfig sc;
  sc.task = FieldTask::occupancy;
  return train_field(generate_training_set(desk_scale_sampler(), objects, queries, seed, sc), cfg);
}

inline std::unique_ptr<LearnedField> occupancy_stub_field(std::shared_ptr<const RegressorWeights> weights,
                                                          const Geometry& geom, std::uint64_t cloud_seed = 0) {
  if (!weights) throw Error("occupancy field needs weights");
  if (weights->task != FieldTask::occupancy) throw Error("weights were not trained for occupancy");
  if (!is_watertight(geom)) throw Error("occupancy needs a watertight mesh");
  return learned_field(weights, object_cloud(geom, weights->encoder, cloud_seed));
}

}  // namespace nift
