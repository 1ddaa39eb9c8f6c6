#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "duppo/advantage.hpp"
#include "duppo/config.hpp"
#include "duppo/env.hpp"
#include "duppo/loss.hpp"
#include "duppo/optimizer.hpp"
#include "duppo/policy.hpp"

namespace duppo {

struct TrainerState {
  PolicyParameters params;
  OptimizerState optimizer;
  std::uint64_t step = 0;  // completed train steps

  TrainerState() = default;
  explicit TrainerState(PolicyParameters p) : params(std::move(p)), optimizer(params.dims) {}
};

struct SourceBreakdown {
  std::size_t count = 0;
  double mean_reward = 0.0;
  double accuracy = 0.0;
  double mean_len = 0.0;
  double mean_think_tokens = 0.0;
  double trunc_rate = 0.0;
};

struct StepMetrics {
  std::uint64_t step = 0;
  double mean_reward = 0.0;
  double accuracy = 0.0;
  double mean_len = 0.0;
  double mean_think_tokens = 0.0;
  double trunc_rate = 0.0;
  double objective = 0.0;
  double grad_norm = 0.0;
  double clip_frac = 0.0;
  SourceBreakdown rectified;
  SourceBreakdown normal;
};

/// Summary statistics over a set of trajectories scored against `queries`.
SourceBreakdown summarize(const std::vector<Trajectory>& trajectories, const std::vector<Query>& queries,
                          const ThinkingTokenSet& think);

/**
 * N rectified then M normal trajectories for one query. Trajectory j draws
 * from derive_stream(group_seed, {j}), so groups and trajectories can be
 * rolled out in any order. Rewards are composite; group statistics are set.
 */
RolloutGroup rollout_group(const Query& query, const PolicyParameters& params,
                           const ThinkingTokenSet& think, const TrainerConfig& cfg,
                           std::uint64_t group_seed);

/// Queries for a given step, drawn from a stream derived from the seed.
std::vector<Query> step_queries(const TrainerConfig& cfg, std::uint64_t step);

/**
 * Scores the groups, computes the objective (the current parameters are the
 * frozen old policy the groups were sampled from) and applies one Adam ascent
 * step. Throws DivergenceError naming the first group with a non-finite
 * contribution.
 */
StepMetrics update_from_groups(TrainerState& state, std::vector<RolloutGroup> groups,
                               const TrainerConfig& cfg, const ThinkingTokenSet& think,
                               const PolicyParameters* reference);

/// Rolls out `queries` with the current parameters, then update_from_groups.
StepMetrics train_step(TrainerState& state, const std::vector<Query>& queries, const TrainerConfig& cfg,
                       const ThinkingTokenSet& think, const PolicyParameters* reference);

std::vector<ScoredGroup> score_groups(std::vector<RolloutGroup> groups, const ThinkingTokenSet& think,
                                      const TrainerConfig& cfg);

// --- checkpoints and runs --------------------------------------------------

/// Policy block, then u64 Adam step and both moments, u64 train step, and
/// the config echo as a u32-length-prefixed string.
void save_trainer_checkpoint(const std::filesystem::path& path, const TrainerState& state,
                             const std::string& config_text);

struct TrainerCheckpoint {
  TrainerState state;
  std::string config_text;
};

TrainerCheckpoint load_trainer_checkpoint(const std::filesystem::path& path);

inline constexpr const char* kMetricsHeader =
    "step,mean_reward,accuracy,mean_len,mean_think_tokens,trunc_rate,objective,grad_norm,clip_frac";

std::string metrics_row(const StepMetrics& m);

struct RunResult {
  TrainerState state;
  std::vector<StepMetrics> metrics;  // rows produced by this invocation
  bool resumed = false;
};

/**
 * Executes cfg.trainer.total_steps steps from `initial`, writing into
 * output_dir: config.txt, run_info.json, metrics.csv, metrics_by_source.csv,
 * checkpoint_<step>.ckpt every checkpoint_interval steps, latest.ckpt and
 * final.ckpt. If latest.ckpt exists the run resumes from it and metrics rows
 * past its step are dropped.
 */
RunResult run(const RunConfig& cfg, const PolicyParameters& initial, const PolicyParameters& reference,
              const std::filesystem::path& output_dir);

struct WarmupArtifacts {
  std::vector<CorpusEntry> corpus;
  WarmupResult result;
};

/// Corpus generation, initialization and warmup training, all seeded from
/// cfg.trainer.seed.
WarmupArtifacts build_warmup_policy(const RunConfig& cfg);

/// Version string baked in at configure time (git describe when available).
const char* version_string() noexcept;

}  // namespace duppo
