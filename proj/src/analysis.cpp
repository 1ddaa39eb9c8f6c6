#include "duppo/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "duppo/error.hpp"
#include "duppo/reward.hpp"

namespace duppo {

namespace {

constexpr double kFoldFloor = 1e-12;
constexpr std::uint64_t kEvalQueryTag = 0x45;

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

double think_mass(std::span<const double> lp, const ThinkingTokenSet& think) {
  double m = 0.0;
  for (TokenId id : think.ids()) m += std::exp(lp[id]);
  return m;
}

void check_parallel(std::size_t a, std::size_t b) {
  if (a != b) throw PreconditionError("queries and responses differ in length");
}

nlohmann::ordered_json num(double x) {
  if (std::isfinite(x)) return x;
  return nullptr;
}

}  // namespace

ThinkCountStats think_count_stats(const std::vector<Query>& queries, const std::vector<Trajectory>& trajectories,
                                  const ThinkingTokenSet& think) {
  check_parallel(queries.size(), trajectories.size());
  ThinkCountStats s;
  double sum_c = 0.0, sum_i = 0.0;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const double n = static_cast<double>(count_thinking_tokens(trajectories[i].response, think));
    if (is_equivalent(queries[i].ground_truth, trajectories[i])) {
      ++s.num_correct;
      sum_c += n;
    } else {
      ++s.num_incorrect;
      sum_i += n;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  s.mean_correct = s.num_correct ? sum_c / static_cast<double>(s.num_correct) : nan;
  s.mean_incorrect = s.num_incorrect ? sum_i / static_cast<double>(s.num_incorrect) : nan;
  if (s.num_correct && s.num_incorrect && s.mean_correct > 0.0) s.ratio = s.mean_incorrect / s.mean_correct;
  return s;
}

ProbabilityProfile probability_profile(const PolicyParameters& params, const Query& query,
                                       const TokenSequence& response, const ThinkingTokenSet& think,
                                       double temperature) {
  ProbabilityProfile out;
  out.reserve(response.size());
  TokenSequence context = query.prompt;
  for (TokenId token : response) {
    const auto lp = log_softmax(logits(params, context), temperature);
    out.push_back({token, std::exp(lp.at(token)), think_mass(lp, think)});
    context.push_back(token);
  }
  return out;
}

double mean_think_mass_after_think(const std::vector<ProbabilityProfile>& profiles,
                                   const ThinkingTokenSet& think) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& p : profiles) {
    for (std::size_t i = 1; i < p.size(); ++i) {
      if (think.contains(p[i - 1].token)) {
        sum += p[i].think_mass;
        ++n;
      }
    }
  }
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

InsertionReport insertion_experiment(const PolicyParameters& params, const std::vector<Query>& queries,
                                     const std::vector<TokenSequence>& responses,
                                     const ThinkingTokenSet& think, const InsertionOptions& opt) {
  check_parallel(queries.size(), responses.size());
  if (!think.contains(opt.token)) throw PreconditionError("inserted token must be a thinking token");
  for (std::size_t r = 0; r < responses.size(); ++r) {
    if (count_thinking_tokens(responses[r], think) != 0) {
      throw PreconditionError("response " + std::to_string(r) + " already contains a thinking token");
    }
  }
  const std::size_t H = opt.horizon;
  std::vector<double> before(H, 0.0), after(H, 0.0);
  std::vector<std::size_t> count(H, 0);

  for (std::size_t r = 0; r < responses.size(); ++r) {
    const auto& resp = responses[r];
    if (opt.position > resp.size()) continue;
    TokenSequence plain = queries[r].prompt;
    plain.insert(plain.end(), resp.begin(), resp.begin() + static_cast<std::ptrdiff_t>(opt.position));
    TokenSequence inserted = plain;
    inserted.push_back(opt.token);
    // Offset o predicts response index position + o - 1 in the original.
    for (std::size_t o = 1; o <= H; ++o) {
      const std::size_t idx = opt.position + o - 1;
      if (idx >= resp.size()) break;
      before[o - 1] += think_mass(log_softmax(logits(params, plain), opt.temperature), think);
      after[o - 1] += think_mass(log_softmax(logits(params, inserted), opt.temperature), think);
      ++count[o - 1];
      plain.push_back(resp[idx]);
      inserted.push_back(resp[idx]);
    }
  }

  InsertionReport report;
  report.rows.resize(H);
  for (std::size_t o = 0; o < H; ++o) {
    auto& row = report.rows[o];
    row.offset = o + 1;
    row.count = count[o];
    if (count[o] == 0) continue;
    const double n = static_cast<double>(count[o]);
    row.before = before[o] / n;
    row.after = after[o] / n;
    row.fold_change = row.after / std::max(row.before, kFoldFloor);
  }
  return report;
}

Trajectory ttp_decode(const PolicyParameters& params, const Query& query, const ThinkingTokenSet& think,
                      RngStream& rng, double penalty, double temperature, std::size_t max_len) {
  DecodeOptions opt;
  opt.temperature = temperature;
  opt.max_len = max_len;
  opt.think_penalty = penalty;
  return sample_trajectory(params, query, think, rng, opt);
}

Trajectory nothink_decode(const PolicyParameters& params, const Query& query, const ThinkingTokenSet& think,
                          RngStream& rng, double temperature, std::size_t max_len) {
  DecodeOptions opt;
  opt.temperature = temperature;
  opt.max_len = max_len;
  opt.forced_prefix = nothink_prefix();
  return sample_trajectory(params, query, think, rng, opt);
}

ErrorKind classify(const Query& query, const Trajectory& t) {
  if (is_equivalent(query.ground_truth, t)) return ErrorKind::Correct;
  if (t.truncated) return ErrorKind::Truncated;
  if (!is_well_formatted(t)) return ErrorKind::Malformed;
  return ErrorKind::WrongAnswer;
}

ErrorBreakdown error_breakdown(const std::vector<Query>& queries, const std::vector<Trajectory>& trajectories) {
  check_parallel(queries.size(), trajectories.size());
  ErrorBreakdown e;
  e.total = trajectories.size();
  std::size_t trunc = 0, malformed = 0, wrong = 0;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    switch (classify(queries[i], trajectories[i])) {
      case ErrorKind::Correct: break;
      case ErrorKind::Truncated: ++trunc; break;
      case ErrorKind::Malformed: ++malformed; break;
      case ErrorKind::WrongAnswer: ++wrong; break;
    }
  }
  e.incorrect = trunc + malformed + wrong;
  if (e.incorrect) {
    const double n = static_cast<double>(e.incorrect);
    e.truncated = static_cast<double>(trunc) / n;
    e.malformed = static_cast<double>(malformed) / n;
    e.wrong_answer = static_cast<double>(wrong) / n;
  }
  return e;
}

const char* to_string(EvalMode mode) noexcept {
  switch (mode) {
    case EvalMode::Normal: return "normal";
    case EvalMode::Rectified: return "rectified";
    case EvalMode::TTP: return "ttp";
    case EvalMode::NoThink: return "nothink";
  }
  return "?";
}

EvalMode parse_eval_mode(const std::string& s) {
  if (s == "normal") return EvalMode::Normal;
  if (s == "rectified") return EvalMode::Rectified;
  if (s == "ttp") return EvalMode::TTP;
  if (s == "nothink") return EvalMode::NoThink;
  throw ConfigError("unknown mode \"" + s + "\" (expected normal, rectified, ttp or nothink)");
}

EvalResult evaluate_policy(const PolicyParameters& params, const std::vector<Query>& queries,
                           const ThinkingTokenSet& think, const EvalOptions& opt) {
  EvalResult res;
  res.trajectories.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    RngStream rng = derive_stream(opt.seed, {i});
    Trajectory t;
    switch (opt.mode) {
      case EvalMode::Normal:
      case EvalMode::Rectified: {
        DecodeOptions d;
        d.mode = opt.mode == EvalMode::Rectified ? PolicyMode::Rectified : PolicyMode::Normal;
        d.temperature = opt.temperature;
        d.max_len = opt.max_len;
        t = sample_trajectory(params, queries[i], think, rng, d);
        break;
      }
      case EvalMode::TTP:
        t = ttp_decode(params, queries[i], think, rng, opt.penalty, opt.temperature, opt.max_len);
        break;
      case EvalMode::NoThink:
        t = nothink_decode(params, queries[i], think, rng, opt.temperature, opt.max_len);
        break;
    }
    t.reward = composite_reward(queries[i], t);
    res.trajectories.push_back(std::move(t));
  }

  auto& s = res.summary;
  s.count = queries.size();
  if (s.count) {
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const auto& t = res.trajectories[i];
      s.accuracy += is_equivalent(queries[i].ground_truth, t) ? 1.0 : 0.0;
      s.mean_reward += t.reward;
      s.mean_len += static_cast<double>(t.response.size());
      s.mean_think_tokens += static_cast<double>(count_thinking_tokens(t.response, think));
      s.trunc_rate += t.truncated ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(s.count);
    s.accuracy /= n;
    s.mean_reward /= n;
    s.mean_len /= n;
    s.mean_think_tokens /= n;
    s.trunc_rate /= n;
  }
  s.errors = error_breakdown(queries, res.trajectories);
  s.think_counts = think_count_stats(queries, res.trajectories, think);
  return res;
}

std::vector<Query> generate_queries(std::size_t count, std::uint64_t seed, int num_operands) {
  RngStream rng = derive_stream(seed, {kEvalQueryTag});
  std::vector<Query> qs;
  qs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) qs.push_back(generate_query(rng, num_operands));
  return qs;
}

Query parse_query(const TokenSequence& prompt) {
  // d (+ d)* =
  if (prompt.size() < 4 || prompt.size() % 2 != 0 || prompt.back() != tok::kEquals) {
    throw PreconditionError("query must look like \"d + d ... =\"");
  }
  std::vector<int> digits;
  for (std::size_t i = 0; i + 1 < prompt.size(); ++i) {
    if (i % 2 == 0) {
      if (!tok::is_digit(prompt[i])) throw PreconditionError("expected a digit in query");
      digits.push_back(static_cast<int>(prompt[i]));
    } else if (prompt[i] != tok::kPlus) {
      throw PreconditionError("expected + in query");
    }
  }
  return make_query(digits);
}

std::vector<Query> load_queries(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open query file " + path.string());
  std::vector<Query> qs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t\r")] == '#') {
      continue;
    }
    try {
      qs.push_back(parse_query(encode(line, vocab)));
    } catch (const Error& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return qs;
}

nlohmann::ordered_json to_json(const ThinkCountStats& s) {
  nlohmann::ordered_json j;
  j["num_correct"] = s.num_correct;
  j["num_incorrect"] = s.num_incorrect;
  j["mean_think_correct"] = num(s.mean_correct);
  j["mean_think_incorrect"] = num(s.mean_incorrect);
  j["ratio_incorrect_over_correct"] = num(s.ratio);
  return j;
}

nlohmann::ordered_json to_json(const ErrorBreakdown& e) {
  nlohmann::ordered_json j;
  j["total"] = e.total;
  j["incorrect"] = e.incorrect;
  j["truncated"] = e.truncated;
  j["malformed"] = e.malformed;
  j["wrong_answer"] = e.wrong_answer;
  return j;
}

nlohmann::ordered_json to_json(const EvalSummary& s) {
  nlohmann::ordered_json j;
  j["count"] = s.count;
  j["accuracy"] = s.accuracy;
  j["mean_reward"] = s.mean_reward;
  j["mean_len"] = s.mean_len;
  j["mean_think_tokens"] = s.mean_think_tokens;
  j["trunc_rate"] = s.trunc_rate;
  j["errors"] = to_json(s.errors);
  j["think_counts"] = to_json(s.think_counts);
  return j;
}

nlohmann::ordered_json to_json(const InsertionReport& r) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    nlohmann::ordered_json j;
    j["offset"] = row.offset;
    j["count"] = row.count;
    j["before"] = num(row.before);
    j["after"] = num(row.after);
    j["fold_change"] = num(row.fold_change);
    rows.push_back(std::move(j));
  }
  nlohmann::ordered_json out;
  out["horizon"] = r.rows.size();
  out["rows"] = std::move(rows);
  return out;
}

std::string profile_csv(const std::vector<ProbabilityProfile>& profiles, const Vocabulary& vocab) {
  std::string out = "response,position,token,prob,think_mass\n";
  for (std::size_t r = 0; r < profiles.size(); ++r) {
    for (std::size_t i = 0; i < profiles[r].size(); ++i) {
      const auto& e = profiles[r][i];
      out += std::to_string(r) + "," + std::to_string(i) + "," + vocab.token(e.token) + "," + fmt(e.prob) + "," +
             fmt(e.think_mass) + "\n";
    }
  }
  return out;
}

std::string insertion_csv(const InsertionReport& report) {
  std::string out = "offset,count,before,after,fold_change\n";
  for (const auto& row : report.rows) {
    out += std::to_string(row.offset) + "," + std::to_string(row.count) + "," + fmt(row.before) + "," +
           fmt(row.after) + "," + fmt(row.fold_change) + "\n";
  }
  return out;
}

std::string trajectories_csv(const std::vector<Query>& queries, const std::vector<Trajectory>& trajectories,
                             const ThinkingTokenSet& think) {
  check_parallel(queries.size(), trajectories.size());
  static const char* kinds[] = {"none", "truncated", "malformed", "wrong_answer"};
  std::string out = "response,source,correct,reward,length,think_tokens,truncated,error\n";
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& t = trajectories[i];
    const auto kind = classify(queries[i], t);
    out += std::to_string(i) + "," + to_string(t.source) + "," + (kind == ErrorKind::Correct ? "1" : "0") + "," +
           fmt(t.reward) + "," + std::to_string(t.response.size()) + "," +
           std::to_string(count_thinking_tokens(t.response, think)) + "," + (t.truncated ? "1" : "0") + "," +
           kinds[static_cast<int>(kind)] + "\n";
  }
  return out;
}

std::string eval_csv_header() { return "mode,count,accuracy,mean_reward,mean_len,mean_think_tokens,trunc_rate"; }

std::string eval_csv_row(EvalMode mode, const EvalSummary& s) {
  return std::string(to_string(mode)) + "," + std::to_string(s.count) + "," + fmt(s.accuracy) + "," +
         fmt(s.mean_reward) + "," + fmt(s.mean_len) + "," + fmt(s.mean_think_tokens) + "," + fmt(s.trunc_rate);
}

}  // namespace duppo
