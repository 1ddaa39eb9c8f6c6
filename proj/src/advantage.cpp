#include "duppo/advantage.hpp"

#include <cmath>

#include "duppo/error.hpp"

namespace duppo {

std::size_t RolloutGroup::num_rectified() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.source == PolicyMode::Rectified;
  return n;
}

RewardStatistics reward_statistics(const std::vector<double>& rewards) {
  if (rewards.empty()) return {0.0, 0.0};
  double sum = 0.0;
  for (double r : rewards) sum += r;
  const double mean = sum / static_cast<double>(rewards.size());
  double sq = 0.0;
  for (double r : rewards) sq += (r - mean) * (r - mean);
  return {mean, std::sqrt(sq / static_cast<double>(rewards.size()))};
}

void RolloutGroup::refresh_statistics() {
  std::vector<double> rewards;
  rewards.reserve(trajectories.size());
  for (const auto& t : trajectories) rewards.push_back(t.reward);
  const auto s = reward_statistics(rewards);
  group_mean = s.mean;
  group_std = s.std;
}

std::vector<double> group_advantages(const std::vector<double>& rewards) {
  if (rewards.size() < 2) {
    throw GroupTooSmallError("group needs at least 2 rewards, got " + std::to_string(rewards.size()));
  }
  const auto s = reward_statistics(rewards);
  std::vector<double> adv(rewards.size(), 0.0);
  if (s.std < kMinGroupStd) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - s.mean) / s.std;
  return adv;
}

double scaling_factor(double advantage, PolicyMode source, bool token_in_think_set,
                      bool preferred_rectified_exists, double alpha, double beta_sup) {
  const bool rectified = source == PolicyMode::Rectified;
  if (advantage > 0.0 && rectified) return alpha;
  if (advantage < 0.0 && !rectified && token_in_think_set) return beta_sup;
  if (advantage > 0.0 && !rectified && token_in_think_set && preferred_rectified_exists) return 0.0;
  return 1.0;
}

ScaledAdvantageTable build_scaled_table(const RolloutGroup& group, const ThinkingTokenSet& think,
                                        const AdvantageConfig& config) {
  std::vector<double> rewards;
  for (const auto& t : group.trajectories) rewards.push_back(t.reward);
  const auto adv = group_advantages(rewards);

  ScaledAdvantageTable table;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    if (adv[i] > 0.0 && group.trajectories[i].source == PolicyMode::Rectified) {
      table.preferred_rectified_exists = true;
    }
  }
  table.rows.resize(adv.size());
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const auto& traj = group.trajectories[i];
    auto& row = table.rows[i];
    row.base_advantage = adv[i];
    row.scale.resize(traj.response.size());
    row.scaled.resize(traj.response.size());
    for (std::size_t t = 0; t < traj.response.size(); ++t) {
      const double m = config.token_scaling
                           ? scaling_factor(adv[i], traj.source, think.contains(traj.response[t]),
                                            table.preferred_rectified_exists, config.alpha,
                                            config.beta_sup)
                           : 1.0;
      row.scale[t] = m;
      row.scaled[t] = m * adv[i];
    }
  }
  return table;
}

}  // namespace duppo
