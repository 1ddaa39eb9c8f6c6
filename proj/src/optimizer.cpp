#include "duppo/optimizer.hpp"

#include <cmath>
#include <ostream>

#include "duppo/binary_io.hpp"

namespace duppo {

void optimizer_update(PolicyParameters& params, const ParameterGradient& gradient,
                      OptimizerState& state, double learning_rate, StepDirection direction,
                      const AdamHyper& hyper) {
  if (state.first_moment.dims != params.dims) state = OptimizerState(params.dims);
  bool any_nonzero = false;
  for (auto b : gradient.blocks()) {
    for (double g : b) {
      if (g != 0.0) {
        any_nonzero = true;
        break;
      }
    }
    if (any_nonzero) break;
  }
  if (!any_nonzero) return;

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  const double sign = direction == StepDirection::Ascent ? 1.0 : -1.0;

  auto pb = params.blocks();
  auto gb = gradient.blocks();
  auto mb = state.first_moment.blocks();
  auto vb = state.second_moment.blocks();
  for (std::size_t b = 0; b < pb.size(); ++b) {
    for (std::size_t i = 0; i < pb[b].size(); ++i) {
      const double g = gb[b][i];
      double& m = mb[b][i];
      double& v = vb[b][i];
      m = hyper.beta1 * m + (1.0 - hyper.beta1) * g;
      v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g;
      pb[b][i] += sign * learning_rate * (m / c1) / (std::sqrt(v / c2) + hyper.eps);
    }
  }
}

void write_optimizer_state(std::ostream& out, const OptimizerState& state) {
  io::put_le<std::uint64_t>(out, state.step);
  write_tensor_blocks(out, state.first_moment);
  write_tensor_blocks(out, state.second_moment);
}

OptimizerState read_optimizer_state(std::istream& in, PolicyDims dims) {
  OptimizerState s(dims);
  s.step = io::get_le<std::uint64_t>(in);
  read_tensor_blocks(in, s.first_moment);
  read_tensor_blocks(in, s.second_moment);
  return s;
}

}  // namespace duppo
