#include "duppo/reward.hpp"

namespace duppo {

double binary_reward(const Query& query, const Trajectory& trajectory) {
  return is_equivalent(query.ground_truth, trajectory) ? kCorrectReward : 0.0;
}

double composite_reward(const Query& query, const Trajectory& trajectory) {
  const bool correct = is_equivalent(query.ground_truth, trajectory);
  const bool formatted = is_well_formatted(trajectory);
  if (correct) return formatted ? 1.1 : 1.0;
  return formatted ? 0.1 : 0.0;
}

double reward(RewardKind kind, const Query& query, const Trajectory& trajectory) {
  return kind == RewardKind::Binary ? binary_reward(query, trajectory)
                                    : composite_reward(query, trajectory);
}

}  // namespace duppo
