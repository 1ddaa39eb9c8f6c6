#pragma once

#include "duppo/env.hpp"

namespace duppo {

// Rule-based rewards. Composite levels: 1.1 correct and formatted, 1.0
// correct only, 0.1 formatted only, 0.0 neither.

inline constexpr double kCorrectReward = 1.0;
inline constexpr double kFormatBonus = 0.1;

double binary_reward(const Query& query, const Trajectory& trajectory);
double composite_reward(const Query& query, const Trajectory& trajectory);

enum class RewardKind { Binary, Composite };

double reward(RewardKind kind, const Query& query, const Trajectory& trajectory);

}  // namespace duppo
