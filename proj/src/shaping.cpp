#include "duppo/shaping.hpp"

#include <cmath>

#include "duppo/error.hpp"

namespace duppo {

void ShapingConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must be in (0, 1)");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must be in (0, 1)");
  if (gamma / (1.0 - epsilon) > 1.0) throw ConfigError("gamma / (1 - epsilon) must be <= 1");
}

double calibrated_old_prob(bool token_in_think_set, double old_prob, const ShapingConfig& cfg) {
  return token_in_think_set ? cfg.gamma / (1.0 - cfg.epsilon) : old_prob;
}

double plain_ratio_log(double new_logprob, double old_logprob) {
  return std::exp(new_logprob - old_logprob);
}

double importance_ratio_log(double new_logprob, bool token_in_think_set, double old_logprob,
                            const ShapingConfig& cfg) {
  if (token_in_think_set) return std::exp(new_logprob - std::log(cfg.gamma)) * (1.0 - cfg.epsilon);
  return plain_ratio_log(new_logprob, old_logprob);
}

double importance_ratio(double new_prob, bool token_in_think_set, double old_prob,
                        const ShapingConfig& cfg) {
  return importance_ratio_log(std::log(new_prob), token_in_think_set, std::log(old_prob), cfg);
}

}  // namespace duppo
