#pragma once

#include <cstdint>
#include <iosfwd>

#include "duppo/policy.hpp"

namespace duppo {

/// Adam moments. `step` counts applied updates (bias-correction exponent).
struct OptimizerState {
  ParameterGradient first_moment;
  ParameterGradient second_moment;
  std::uint64_t step = 0;

  OptimizerState() = default;
  explicit OptimizerState(PolicyDims dims) : first_moment(dims), second_moment(dims) {}

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

enum class StepDirection { Ascent, Descent };

/**
 * One bias-corrected Adam step:
 *   m = b1 m + (1-b1) g,  v = b2 v + (1-b2) g^2
 *   theta +-= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
 * An all-zero gradient leaves the parameters and moments untouched.
 */
void optimizer_update(PolicyParameters& params, const ParameterGradient& gradient,
                      OptimizerState& state, double learning_rate,
                      StepDirection direction = StepDirection::Ascent, const AdamHyper& hyper = {});

void write_optimizer_state(std::ostream& out, const OptimizerState& state);
OptimizerState read_optimizer_state(std::istream& in, PolicyDims dims);

}  // namespace duppo
