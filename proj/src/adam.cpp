#include "chimle/adam.hpp"

#include <cmath>
#include <string>

namespace chimle {

void adam_step(std::span<Tensor* const> params, AdamState& state, const AdamOptions& options) {
  if (state.first_moment.empty()) {
    for (const Tensor* p : params) {
      state.first_moment.emplace_back(p->numel(), 0.0f);
      state.second_moment.emplace_back(p->numel(), 0.0f);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(static_cast<double>(options.beta1), static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(options.beta2), static_cast<double>(state.step));
  const float step_size = static_cast<float>(options.learning_rate / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));

  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != p.numel()) {
      throw DimensionError("adam_step: moment buffer size mismatch for parameter of shape " + shape_str(p.shape));
    }
    if (p.grad.empty()) continue;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const float g = p.grad[i];
      m[i] = options.beta1 * m[i] + (1.0f - options.beta1) * g;
      v[i] = options.beta2 * v[i] + (1.0f - options.beta2) * g * g;
      p.data[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + options.epsilon);
    }
  }
}

}  // namespace chimle
