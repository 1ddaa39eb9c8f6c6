#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "duppo/advantage.hpp"
#include "duppo/loss.hpp"
#include "duppo/policy.hpp"

namespace duppo {

struct ModelConfig {
  PolicyDims dims;
  double init_scale = 0.3;
};

struct WarmupConfig {
  std::size_t corpus_size = 4000;
  double loop_bias = 0.9;
  std::size_t epochs = 80;
  double learning_rate = 3e-3;
  std::size_t batch_size = 32;
};

struct TrainerConfig {
  double epsilon = 0.2;
  double alpha = 2.0;
  double beta_sup = 2.0;
  double gamma = 0.1;
  std::size_t num_rectified = 4;  // N
  std::size_t num_normal = 4;     // M
  double kl_coef = 0.0;
  double entropy_coef = 0.01;
  double learning_rate = 1e-3;
  std::size_t batch_queries = 16;
  std::size_t max_response_len = 64;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  Algorithm algorithm = Algorithm::DuPPO;
  std::size_t total_steps = 200;
  int num_operands = 2;
  std::size_t checkpoint_interval = 50;
  std::size_t threads = 1;
  bool shaping = true;
  bool rectified_old_renormalized = false;

  std::size_t group_size() const { return num_rectified + num_normal; }
  LossConfig loss_config() const;
  AdvantageConfig advantage_config() const;
  /// Throws ConfigError on any out-of-range field.
  void validate() const;
};

/// Everything a run needs; serialized as flat `key = value` lines.
struct RunConfig {
  ModelConfig model;
  WarmupConfig warmup;
  TrainerConfig trainer;
  /// Policy checkpoint to start RL from; empty runs warmup first.
  std::string init_checkpoint;

  void validate() const;
};

/**
 * Parses `key = value` lines over the defaults. `#` starts a comment, blank
 * lines are ignored, unknown keys and malformed values are ConfigErrors
 * that carry the line number.
 */
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical echo listing every key; parse_config(to_config_text(c)) == c.
std::string to_config_text(const RunConfig& config);

/// Switches a config to GRPO: rectified rollouts fold into normal ones.
void use_grpo(TrainerConfig& cfg);

Algorithm parse_algorithm(const std::string& s);

}  // namespace duppo
