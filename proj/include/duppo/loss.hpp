#pragma once

#include <span>
#include <vector>

#include "duppo/advantage.hpp"
#include "duppo/policy.hpp"
#include "duppo/shaping.hpp"

namespace duppo {

enum class Algorithm { GRPO, DuPPO };

const char* to_string(Algorithm algo) noexcept;

struct LossConfig {
  double epsilon = 0.2;
  double kl_coef = 0.0;
  double entropy_coef = 0.01;
  Algorithm algorithm = Algorithm::DuPPO;
  double gamma = 0.1;
  /// Calibrated old probabilities for thinking tokens (DuPPO only).
  bool shaping = true;
  /// Use the rectified (renormalized) old log-prob as the ratio denominator
  /// for rectified trajectories instead of the normal-policy one.
  bool rectified_old_renormalized = false;
  /// Must match the rollout temperature so ratios compare like with like.
  double temperature = 1.0;

  ShapingConfig shaping_config() const { return {gamma, epsilon}; }
  void validate() const;
};

/// min(r * A, clip(r, 1 - eps, 1 + eps) * A)
double surrogate_term(double ratio, double scaled_advantage, double epsilon);

enum class GateState { ActivePositive, ActiveNegative, Gated };

const char* to_string(GateState g) noexcept;

/**
 * ActivePositive iff A > 0 and r < 1 + eps; ActiveNegative iff A < 0 and
 * r > 1 - eps; Gated otherwise. The boundaries are strict, so a ratio sitting
 * exactly on a clip bound is gated and its subgradient is taken from the
 * clipped branch.
 */
GateState gate_state(double advantage, double ratio, double epsilon);

struct ScoredGroup {
  RolloutGroup group;
  ScaledAdvantageTable table;
};

struct ObjectiveResult {
  double objective = 0.0;
  ParameterGradient gradient;
  std::size_t tokens = 0;
  std::size_t clipped_tokens = 0;  // gated with non-zero scaled advantage
  double surrogate = 0.0;          // token-normalized surrogate part
  double entropy = 0.0;            // mean token entropy
  double kl = 0.0;                 // mean token KL to the reference
};

/// Per-token quantities of the surrogate, exposed for tests and metrics.
struct TokenTerm {
  double new_logprob;
  double ratio;
  double scaled_advantage;
  GateState gate;
};

TokenTerm token_term(double new_logprob, double old_logprob, bool in_think, double scaled_advantage,
                     PolicyMode source, const LossConfig& cfg);

/**
 * Objective to be MAXIMIZED:
 *   J = (1/T) sum_tokens min(r A, clip(r) A) + c_ent * mean_t H_t - c_kl * mean_t KL_t
 * with T the total token count of the batch. Entropy and KL are exact
 * full-vocabulary sums at each visited context. The returned gradient is
 * dJ/dtheta; gated tokens contribute exactly zero surrogate gradient.
 * `reference` may be null when kl_coef == 0.
 */
ObjectiveResult batch_objective_and_gradient(std::span<const ScoredGroup> groups,
                                             const PolicyParameters& params,
                                             const PolicyParameters* reference,
                                             const ThinkingTokenSet& think, const LossConfig& cfg);

/// Objective value only (used by finite-difference checks).
double batch_objective(std::span<const ScoredGroup> groups, const PolicyParameters& params,
                       const PolicyParameters* reference, const ThinkingTokenSet& think,
                       const LossConfig& cfg);

/// Mean over contexts of sum_v p(v) (log p(v) - log q(v)).
double kl_divergence(const PolicyParameters& params, const PolicyParameters& reference,
                     const std::vector<TokenSequence>& contexts, double temperature = 1.0);

}  // namespace duppo
