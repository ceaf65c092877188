#pragma once

#include <cstdint>
#include <vector>

#include "xraft/tensor.hpp"

namespace xraft {

struct AdamConfig {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  explicit AdamState(const std::vector<Tensor>& params, AdamConfig config = {});

  AdamConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::int64_t step = 0;
};

// One bias-corrected Adam update over params, in the order the state was
// built with. Parameters without a gradient are left untouched.
void adam_step(std::vector<Tensor>& params, AdamState& state);

}  // namespace xraft
