#pragma once

namespace duppo {

/// gamma / (1 - epsilon) must not exceed 1.
struct ShapingConfig {
  double gamma = 0.1;
  double epsilon = 0.2;

  void validate() const;
};

/// gamma / (1 - epsilon) for thinking tokens, old_prob otherwise.
double calibrated_old_prob(bool token_in_think_set, double old_prob, const ShapingConfig& cfg);

/**
 * Calibrated importance ratio from log-probabilities.
 *   thinking: exp(new_lp - log gamma) * (1 - epsilon)
 *   other:    exp(new_lp - old_lp)
 */
double importance_ratio_log(double new_logprob, bool token_in_think_set, double old_logprob,
                            const ShapingConfig& cfg);

double importance_ratio(double new_prob, bool token_in_think_set, double old_prob,
                        const ShapingConfig& cfg);

/// Plain ratio exp(new_lp - old_lp); the unshaped path.
double plain_ratio_log(double new_logprob, double old_logprob);

}  // namespace duppo
