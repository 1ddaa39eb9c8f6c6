#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "duppo/policy.hpp"
#include "duppo/rng.hpp"
#include "duppo/vocab.hpp"

namespace duppo {

/// Chain-addition query "d1 + d2 + ... =" whose answer is the digit sum mod 10.
struct Query {
  TokenSequence prompt;
  int ground_truth = 0;
};

struct Trajectory {
  TokenSequence response;
  /// Normal-policy log-probs of each response token at rollout time (the
  /// pi_theta_old of the surrogate), at the sampling temperature.
  std::vector<double> behavior_logprobs;
  /// Log-probs under the distribution actually sampled from (rectified or
  /// penalized when decoding under a mask). Equal to behavior_logprobs for
  /// normal sampling.
  std::vector<double> sampling_logprobs;
  PolicyMode source = PolicyMode::Normal;
  double reward = 0.0;
  bool truncated = false;
};

Query make_query(std::span<const int> digits);

/// Uniform digits; num_operands in [2, 5].
Query generate_query(RngStream& rng, int num_operands);

/// True iff the last "<a> d </a>" span holds the answer digit.
bool is_equivalent(int answer, const Trajectory& trajectory);
bool is_equivalent(int answer, const TokenSequence& response);

/// Exactly one "<a> d </a>" span (single delimiters, in order) and the
/// response ends with <eos> without being truncated.
bool is_well_formatted(const Trajectory& trajectory);

std::size_t count_thinking_tokens(const TokenSequence& response, const ThinkingTokenSet& think);

struct DecodeOptions {
  PolicyMode mode = PolicyMode::Normal;
  double temperature = 1.0;  // 0 = greedy
  std::size_t max_len = 64;
  /// Subtracted from thinking-token logits in Normal mode. +infinity is a
  /// hard mask and decodes exactly like Rectified mode.
  double think_penalty = 0.0;
  /// Forced tokens emitted before decoding starts (counted in the response).
  TokenSequence forced_prefix;
};

/// Autoregressive decode until <eos> or max_len. Reward is left at 0.
Trajectory sample_trajectory(const PolicyParameters& params, const Query& query,
                             const ThinkingTokenSet& think, RngStream& rng,
                             const DecodeOptions& options);

// --- warmup corpus ---------------------------------------------------------

struct CorpusEntry {
  Query query;
  TokenSequence target;
};

inline constexpr double kLoopContinuation = 0.7;
/// Chance of another reflection cycle after a restatement. Kept below 1/2 so
/// a restated query is answered under greedy decoding.
inline constexpr double kCycleContinuation = 0.4;
inline constexpr std::size_t kMaxLoopThinkTokens = 20;
inline constexpr std::size_t kMaxClusterSize = 4;

/**
 * Targets are "[loop] <a> answer </a> <eos>". With probability loop_bias a
 * thinking loop precedes the answer: a run of reflection cycles, each a
 * cluster of thinking tokens followed by a verbatim restatement of the query.
 * Inside a cluster another thinking token follows with probability 0.7 (first
 * cluster at least 2, any cluster at most 4). After a restatement another
 * cycle starts with probability 0.4. A loop holds 2..20 thinking tokens.
 */
std::vector<CorpusEntry> generate_warmup_corpus(RngStream& rng, std::size_t size, double loop_bias,
                                                int num_operands = 2);

/// "prompt TAB target" per line, token strings separated by spaces.
void save_corpus(const std::vector<CorpusEntry>& corpus, const Vocabulary& vocab,
                 const std::filesystem::path& path);
std::vector<CorpusEntry> load_corpus(const Vocabulary& vocab, const std::filesystem::path& path);

struct WarmupOptions {
  std::size_t epochs = 30;
  double learning_rate = 3e-3;
  std::size_t batch_size = 32;
  std::uint64_t shuffle_seed = 0;
};

struct WarmupResult {
  PolicyParameters params;
  std::vector<double> epoch_losses;  // mean per-token cross-entropy of each epoch
};

/// Teacher-forced cross-entropy on target tokens with Adam. Throws
/// DivergenceError if the loss becomes non-finite.
WarmupResult warmup_train(const PolicyParameters& params, const std::vector<CorpusEntry>& corpus,
                          const WarmupOptions& options);

/// Mean per-token cross-entropy of the targets.
double corpus_loss(const PolicyParameters& params, const std::vector<CorpusEntry>& corpus);

}  // namespace duppo
