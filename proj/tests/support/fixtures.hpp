#pragma once
// Small models and datasets shared by the training tests and the acceptance run.

#include "xraft/dataset.hpp"
#include "xraft/model.hpp"

namespace fixtures {

// Narrow network with a single refinement step, cheap enough for finite
// differences in 64-bit mode.
inline xraft::ModelConfig tiny_model() {
  xraft::ModelConfig c;
  c.feature_dim = 8;
  c.hidden_dim = 4;
  c.context_dim = 4;
  c.corr_radius = 1;
  c.iterations = 1;
  return c;
}

inline xraft::SynthConfig tiny_data(int size, int triplets, int pairs, std::uint64_t seed) {
  xraft::SynthConfig c;
  c.width = c.height = size;
  c.train_triplets = triplets;
  c.val_pairs = c.test_pairs = pairs;
  c.annotated_pairs = 1;
  c.keypoints_per_pair = 6;
  c.motion_amplitude = 2.0;
  c.motion_sigma = 4.0;
  c.seed = seed;
  return c;
}

}  // namespace fixtures
