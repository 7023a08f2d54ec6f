#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "chimle/tensor.hpp"

namespace chimle {

struct AdamOptions {
  float learning_rate = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

/// First/second moment buffers, one per parameter, in the order the
/// parameters are passed to adam_step.
struct AdamState {
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update using each parameter's `grad` buffer.
/// Parameters with an empty gradient are skipped (moments untouched).
void adam_step(std::span<Tensor* const> params, AdamState& state, const AdamOptions& options);

}  // namespace chimle
