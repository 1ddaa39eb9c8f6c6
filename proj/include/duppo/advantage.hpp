#pragma once

#include <vector>

#include "duppo/env.hpp"

namespace duppo {

/// Rollouts for one query: rectified trajectories first, then normal ones.
struct RolloutGroup {
  Query query;
  std::vector<Trajectory> trajectories;
  double group_mean = 0.0;
  double group_std = 0.0;  // population standard deviation

  std::size_t num_rectified() const;
  /// Recomputes group_mean / group_std from the trajectory rewards.
  void refresh_statistics();
};

struct RewardStatistics {
  double mean;
  double std;  // population
};

RewardStatistics reward_statistics(const std::vector<double>& rewards);

inline constexpr double kMinGroupStd = 1e-8;

/// (R_i - mean) / std with population std. Zero-variance groups (std below
/// 1e-8) get all-zero advantages. Throws GroupTooSmallError below 2 entries.
std::vector<double> group_advantages(const std::vector<double>& rewards);

/**
 * Token-level scaling factor, first matching rule wins:
 *   alpha     A > 0, trajectory from the rectified policy
 *   beta_sup  A < 0, normal trajectory, thinking token
 *   0         A > 0, normal trajectory, thinking token, and some rectified
 *             trajectory in the group has positive advantage
 *   1         otherwise
 */
double scaling_factor(double advantage, PolicyMode source, bool token_in_think_set,
                      bool preferred_rectified_exists, double alpha, double beta_sup);

struct AdvantageConfig {
  double alpha = 2.0;
  double beta_sup = 2.0;
  /// false reproduces GRPO (every factor is 1).
  bool token_scaling = true;
};

struct TrajectoryAdvantages {
  double base_advantage = 0.0;
  std::vector<double> scale;   // m per token
  std::vector<double> scaled;  // m * A per token
};

struct ScaledAdvantageTable {
  std::vector<TrajectoryAdvantages> rows;  // parallel to group.trajectories
  bool preferred_rectified_exists = false;
};

ScaledAdvantageTable build_scaled_table(const RolloutGroup& group, const ThinkingTokenSet& think,
                                        const AdvantageConfig& config);

}  // namespace duppo
