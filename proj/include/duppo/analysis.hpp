#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "duppo/env.hpp"

namespace duppo {

// --- thinking-token statistics ---------------------------------------------

struct ThinkCountStats {
  std::size_t num_correct = 0;
  std::size_t num_incorrect = 0;
  double mean_correct = 0.0;
  double mean_incorrect = 0.0;
  /// mean_incorrect / mean_correct; NaN when either side is empty or the
  /// correct mean is zero.
  double ratio = std::numeric_limits<double>::quiet_NaN();
};

ThinkCountStats think_count_stats(const std::vector<Query>& queries, const std::vector<Trajectory>& trajectories,
                                  const ThinkingTokenSet& think);

// --- probability profile ---------------------------------------------------

struct ProfileEntry {
  TokenId token = 0;
  double prob = 0.0;        // probability of the realized token
  double think_mass = 0.0;  // total probability on the thinking set
};

using ProbabilityProfile = std::vector<ProfileEntry>;

/// Teacher-forced normal-policy pass over `response`.
ProbabilityProfile probability_profile(const PolicyParameters& params, const Query& query,
                                       const TokenSequence& response, const ThinkingTokenSet& think,
                                       double temperature = 1.0);

/// Mean thinking-set mass at positions whose preceding token is a thinking
/// token, pooled over all profiles. NaN if no such position exists.
double mean_think_mass_after_think(const std::vector<ProbabilityProfile>& profiles,
                                   const ThinkingTokenSet& think);

// --- insertion experiment --------------------------------------------------

struct InsertionOptions {
  std::size_t horizon = 20;
  /// Response index the token is inserted before; 0 sits right after "=".
  std::size_t position = 0;
  TokenId token = tok::kWait;
  double temperature = 1.0;
};

struct InsertionRow {
  std::size_t offset = 0;  // 1..horizon
  std::size_t count = 0;   // responses long enough to contribute
  double before = std::numeric_limits<double>::quiet_NaN();
  double after = std::numeric_limits<double>::quiet_NaN();
  double fold_change = std::numeric_limits<double>::quiet_NaN();
};

struct InsertionReport {
  std::vector<InsertionRow> rows;  // exactly horizon rows
};

/**
 * Offset o compares the thinking mass at the o-th prediction after the
 * insertion point with and without the inserted token. fold_change is
 * after / max(before, 1e-12). Throws PreconditionError if a response already
 * holds a thinking token.
 */
InsertionReport insertion_experiment(const PolicyParameters& params, const std::vector<Query>& queries,
                                     const std::vector<TokenSequence>& responses,
                                     const ThinkingTokenSet& think, const InsertionOptions& options = {});

// --- decoding baselines ----------------------------------------------------

inline constexpr double kHardMask = std::numeric_limits<double>::infinity();

/// Normal decoding with `penalty` subtracted from thinking logits; kHardMask
/// takes exactly the rectified sampling path.
Trajectory ttp_decode(const PolicyParameters& params, const Query& query, const ThinkingTokenSet& think,
                      RngStream& rng, double penalty, double temperature = 1.0, std::size_t max_len = 64);

/// Forces the end-of-thinking delimiter as the first response token, then
/// decodes normally.
Trajectory nothink_decode(const PolicyParameters& params, const Query& query, const ThinkingTokenSet& think,
                          RngStream& rng, double temperature = 1.0, std::size_t max_len = 64);

inline const TokenSequence& nothink_prefix() {
  static const TokenSequence prefix{tok::kAnswerOpen};
  return prefix;
}

// --- error breakdown -------------------------------------------------------

struct ErrorBreakdown {
  std::size_t total = 0;
  std::size_t incorrect = 0;
  /// Fractions of the incorrect responses; all zero when none are incorrect.
  double truncated = 0.0;
  double malformed = 0.0;
  double wrong_answer = 0.0;
};

enum class ErrorKind { Correct, Truncated, Malformed, WrongAnswer };

ErrorKind classify(const Query& query, const Trajectory& trajectory);

ErrorBreakdown error_breakdown(const std::vector<Query>& queries, const std::vector<Trajectory>& trajectories);

// --- evaluation ------------------------------------------------------------

enum class EvalMode { Normal, Rectified, TTP, NoThink };

const char* to_string(EvalMode mode) noexcept;
EvalMode parse_eval_mode(const std::string& s);

struct EvalOptions {
  EvalMode mode = EvalMode::Normal;
  double temperature = 1.0;
  std::size_t max_len = 64;
  double penalty = kHardMask;  // TTP only
  std::uint64_t seed = 0;
};

struct EvalSummary {
  std::size_t count = 0;
  double accuracy = 0.0;
  double mean_reward = 0.0;
  double mean_len = 0.0;
  double mean_think_tokens = 0.0;
  double trunc_rate = 0.0;
  ErrorBreakdown errors;
  ThinkCountStats think_counts;
};

struct EvalResult {
  std::vector<Trajectory> trajectories;  // rewards are composite
  EvalSummary summary;
};

/// Response i draws from derive_stream(seed, {i}).
EvalResult evaluate_policy(const PolicyParameters& params, const std::vector<Query>& queries,
                           const ThinkingTokenSet& think, const EvalOptions& options);

/// Queries from derive_stream(seed, {tag}), num_operands digits each.
std::vector<Query> generate_queries(std::size_t count, std::uint64_t seed, int num_operands = 2);

/// Parses "d + d + ... =" (token ids); throws PreconditionError if malformed.
Query parse_query(const TokenSequence& prompt);

/// One prompt per line in token text; blank lines and `#` lines are skipped.
std::vector<Query> load_queries(const Vocabulary& vocab, const std::filesystem::path& path);

// --- exports ---------------------------------------------------------------

nlohmann::ordered_json to_json(const ThinkCountStats& s);
nlohmann::ordered_json to_json(const ErrorBreakdown& e);
nlohmann::ordered_json to_json(const EvalSummary& s);
nlohmann::ordered_json to_json(const InsertionReport& r);

/// Header "response,position,token,prob,think_mass".
std::string profile_csv(const std::vector<ProbabilityProfile>& profiles, const Vocabulary& vocab);
/// Header "offset,count,before,after,fold_change".
std::string insertion_csv(const InsertionReport& report);
/// Header "response,source,correct,reward,length,think_tokens,truncated,error".
std::string trajectories_csv(const std::vector<Query>& queries, const std::vector<Trajectory>& trajectories,
                             const ThinkingTokenSet& think);
/// Header "mode,count,accuracy,mean_reward,mean_len,mean_think_tokens,trunc_rate".
std::string eval_csv_header();
std::string eval_csv_row(EvalMode mode, const EvalSummary& s);

}  // namespace duppo
