// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit on any
// failure. Tolerances and time budgets are pinned below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "duppo/advantage.hpp"
#include "duppo/analysis.hpp"
#include "duppo/config.hpp"
#include "duppo/loss.hpp"
#include "duppo/reward.hpp"
#include "duppo/trainer.hpp"

using namespace duppo;
namespace fs = std::filesystem;

namespace {

// --- pinned tolerances -----------------------------------------------------
constexpr double kFdTolerance = 1e-5;
constexpr double kFdStep = 1e-6;
constexpr double kFdFloor = 1e-4;
constexpr int kFdBatches = 20;
constexpr double kMomentTolerance = 1e-10;
constexpr double kThinkReduction = 0.5;    // DuPPO think tokens at most this share of the start
constexpr double kAccuracySlack = 0.02;    // DuPPO accuracy at least start minus this
constexpr std::size_t kEvalQueries = 2000;
constexpr std::size_t kPilotQueries = 1000;
constexpr std::size_t kTruncationQueries = 20000;  // truncations are rare, (c) needs a wide sample
constexpr std::size_t kRectifiedSamples = 10000;

// --- time budgets (seconds) ------------------------------------------------
constexpr double kBudget[11] = {0, 60, 1, 5, 5, 30, 1, 1, 900, 300, 120};

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Shared {
  RunConfig base;
  Vocabulary vocab = build_default_vocabulary();
  ThinkingTokenSet think = default_thinking_set(vocab);
  std::optional<PolicyParameters> warm;
  double warmup_seconds = 0.0;
  fs::path work;

  const PolicyParameters& warmup() {
    if (!warm) {
      const auto t0 = std::chrono::steady_clock::now();
      warm = build_warmup_policy(base).result.params;
      warmup_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    return *warm;
  }
};

std::string fmt(const char* f, double x) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), f, x);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PolicyParameters jitter(const PolicyParameters& p, std::uint64_t seed, double scale) {
  auto q = p;
  RngStream rng(seed);
  for (std::size_t i = 0; i < q.size(); ++i) q[i] += scale * rng.normal();
  return q;
}

std::vector<RolloutGroup> sample_groups(const PolicyParameters& p, const TrainerConfig& tc, std::size_t count,
                                        std::uint64_t seed, const ThinkingTokenSet& think) {
  RngStream qrng(seed);
  std::vector<RolloutGroup> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(rollout_group(generate_query(qrng, 2), p, think, tc, derive_seed(seed, {i})));
  }
  return out;
}

// An untrained policy almost never answers, so graded reward levels stand in.
void assign_reward_levels(std::vector<RolloutGroup>& groups) {
  const double levels[] = {1.1, 0.1, 1.0, 0.0};
  for (auto& g : groups) {
    for (std::size_t j = 0; j < g.trajectories.size(); ++j) g.trajectories[j].reward = levels[j % 4];
    g.refresh_statistics();
  }
}

// 1 ----------------------------------------------------------------------------
Outcome gradient_fidelity(Shared& sh) {
  const PolicyDims dims{19, 8, 8, 32};
  TrainerConfig tc;
  tc.num_rectified = 2;
  tc.num_normal = 2;
  tc.max_response_len = 6;
  tc.entropy_coef = 0.05;
  tc.kl_coef = 0.1;
  const auto cfg = tc.loss_config();
  double worst = 0.0;
  std::size_t gated = 0, tokens = 0;
  for (int b = 0; b < kFdBatches; ++b) {
    const auto old_p = init_parameters(dims, 1000 + b, 0.5);
    const auto ref = jitter(old_p, 2000 + b, 0.2);
    const auto p = jitter(old_p, 3000 + b, 0.3);
    auto groups = sample_groups(old_p, tc, 1, 4000 + b, sh.think);
    assign_reward_levels(groups);
    const auto batch = score_groups(std::move(groups), sh.think, tc);
    const auto res = batch_objective_and_gradient(batch, p, &ref, sh.think, cfg);
    gated += res.clipped_tokens;
    tokens += res.tokens;
    PolicyParameters q = p;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double x = q[i];
      q[i] = x + kFdStep;
      const double up = batch_objective(batch, q, &ref, sh.think, cfg);
      q[i] = x - kFdStep;
      const double down = batch_objective(batch, q, &ref, sh.think, cfg);
      q[i] = x;
      const double fd = (up - down) / (2 * kFdStep);
      const double a = res.gradient[i];
      worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), kFdFloor}));
    }
  }
  return {worst < kFdTolerance && gated > 0 && gated < tokens,
          "batches=" + std::to_string(kFdBatches) + " max_rel_err=" + fmt("%.3g", worst) + " (tol " +
              fmt("%.0e", kFdTolerance) + ") gated_tokens=" + std::to_string(gated) + "/" + std::to_string(tokens)};
}

// 2 ----------------------------------------------------------------------------
Outcome truth_table(Shared&) {
  const double alpha = 2.0, beta = 2.0;
  int cases = 0, ok = 0;
  int seen[4] = {0, 0, 0, 0};  // enhancement, suppression, return-to-zero, identity
  for (double a : {1.0, -1.0}) {
    for (auto src : {PolicyMode::Rectified, PolicyMode::Normal}) {
      for (bool member : {false, true}) {
        for (bool exists : {false, true}) {
          int rule = 3;
          if (a > 0 && src == PolicyMode::Rectified) rule = 0;
          else if (a < 0 && src == PolicyMode::Normal && member) rule = 1;
          else if (a > 0 && src == PolicyMode::Normal && member && exists) rule = 2;
          const double expected[] = {alpha, beta, 0.0, 1.0};
          ++cases;
          ++seen[rule];
          ok += scaling_factor(a, src, member, exists, alpha, beta) == expected[rule];
        }
      }
    }
  }
  const bool all_rules = seen[0] && seen[1] && seen[2] && seen[3];
  return {cases == 16 && ok == 16 && all_rules, std::to_string(ok) + "/16 cases exact, rule counts " +
                                                    std::to_string(seen[0]) + "/" + std::to_string(seen[1]) + "/" +
                                                    std::to_string(seen[2]) + "/" + std::to_string(seen[3])};
}

// 3 ----------------------------------------------------------------------------
ScoredGroup lone_think_token(double old_prob, double advantage) {
  ScoredGroup sg;
  const int d[] = {3, 4};
  sg.group.query = make_query(d);
  Trajectory t;
  t.response = {tok::kWait};
  t.behavior_logprobs = t.sampling_logprobs = {std::log(old_prob)};
  sg.group.trajectories.push_back(t);
  sg.table.rows.push_back({advantage, {1.0}, {advantage}});
  return sg;
}

/// Zero weights with the output bias chosen so p(W) = p in every context.
PolicyParameters with_wait_prob(double p) {
  PolicyParameters params;
  params.output_bias[tok::kWait] = std::log(p * 18.0 / (1.0 - p));
  return params;
}

bool any_nonzero(const ParameterGradient& g) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i] != 0.0) return true;
  }
  return false;
}

Outcome shaping_threshold(Shared& sh) {
  LossConfig duppo;
  duppo.entropy_coef = 0.0;
  LossConfig grpo = duppo;
  grpo.algorithm = Algorithm::GRPO;
  int agree = 0, total = 0;
  for (int i = 0; i < 1000; ++i) {
    const double p = (i + 0.5) / 1000.0;
    const std::vector<ScoredGroup> batch = {lone_think_token(0.88, -1.0)};
    const auto res = batch_objective_and_gradient(batch, with_wait_prob(p), nullptr, sh.think, duppo);
    agree += any_nonzero(res.gradient) == (p > duppo.gamma);
    ++total;
  }
  // Worked case: old 0.88, new 0.70.
  const std::vector<ScoredGroup> worked = {lone_think_token(0.88, -1.0)};
  const auto params = with_wait_prob(0.70);
  const auto rd = batch_objective_and_gradient(worked, params, nullptr, sh.think, duppo);
  const auto rg = batch_objective_and_gradient(worked, params, nullptr, sh.think, grpo);
  const double r_plain = 0.70 / 0.88;
  const bool grpo_gated = !any_nonzero(rg.gradient) && r_plain < 1.0 - grpo.epsilon;
  const bool duppo_suppresses = rd.gradient.output_bias[tok::kWait] < 0.0;
  return {agree == total && grpo_gated && duppo_suppresses,
          "threshold agrees on " + std::to_string(agree) + "/" + std::to_string(total) + " grid points; worked case " +
              "unshaped r=" + fmt("%.4f", r_plain) + (grpo_gated ? " gated" : " NOT gated") + ", shaped " +
              (duppo_suppresses ? "suppresses" : "does NOT suppress")};
}

// 4 ----------------------------------------------------------------------------
Outcome reduction(Shared& sh) {
  const auto old_p = init_parameters({}, 41, 0.5);
  const auto p = jitter(old_p, 42, 0.1);
  const auto ref = jitter(old_p, 43, 0.2);
  TrainerConfig dcfg;
  dcfg.num_rectified = 0;
  dcfg.num_normal = 8;
  dcfg.alpha = dcfg.beta_sup = 1.0;
  dcfg.shaping = false;
  dcfg.max_response_len = 32;
  dcfg.entropy_coef = 0.02;
  dcfg.kl_coef = 0.05;
  TrainerConfig gcfg = dcfg;
  use_grpo(gcfg);
  const auto groups = sample_groups(old_p, dcfg, 8, 44, sh.think);
  const auto a = batch_objective_and_gradient(score_groups(groups, sh.think, dcfg), p, &ref, sh.think,
                                              dcfg.loss_config());
  const auto b = batch_objective_and_gradient(score_groups(groups, sh.think, gcfg), p, &ref, sh.think,
                                              gcfg.loss_config());
  std::size_t mismatched = 0;
  for (std::size_t i = 0; i < a.gradient.size(); ++i) mismatched += a.gradient[i] != b.gradient[i];
  // Same conclusion through a full train step.
  TrainerState sa(old_p), sb(old_p);
  update_from_groups(sa, groups, dcfg, sh.think, &ref);
  update_from_groups(sb, groups, gcfg, sh.think, &ref);
  const bool ok = a.objective == b.objective && mismatched == 0 && sa.params == sb.params;
  return {ok, "objective " + std::string(a.objective == b.objective ? "identical" : "differs") + ", " +
                  std::to_string(mismatched) + " gradient entries differ, post-step parameters " +
                  (sa.params == sb.params ? "identical" : "differ") + " (" + std::to_string(a.tokens) + " tokens)"};
}

// 5 ----------------------------------------------------------------------------
Outcome rectified_exclusion(Shared& sh) {
  const auto& p = sh.warmup();
  const auto qs = generate_queries(kRectifiedSamples, 51);
  std::size_t think_tokens = 0, identical = 0, tokens = 0;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    RngStream a = derive_stream(52, {i}), b = derive_stream(52, {i});
    DecodeOptions opt;
    opt.mode = PolicyMode::Rectified;
    const auto rect = sample_trajectory(p, qs[i], sh.think, a, opt);
    const auto ttp = ttp_decode(p, qs[i], sh.think, b, kHardMask);
    think_tokens += count_thinking_tokens(rect.response, sh.think);
    tokens += rect.response.size();
    identical += rect.response == ttp.response && rect.sampling_logprobs == ttp.sampling_logprobs;
  }
  // Same check on the untrained policy, which puts real mass on thinking tokens.
  const auto raw = init_parameters({}, 53, 0.8);
  for (std::size_t i = 0; i < 1000; ++i) {
    RngStream a = derive_stream(54, {i}), b = derive_stream(54, {i});
    DecodeOptions opt;
    opt.mode = PolicyMode::Rectified;
    const auto rect = sample_trajectory(raw, qs[i], sh.think, a, opt);
    const auto ttp = ttp_decode(raw, qs[i], sh.think, b, kHardMask);
    think_tokens += count_thinking_tokens(rect.response, sh.think);
    identical += rect.response == ttp.response;
  }
  const std::size_t n = kRectifiedSamples + 1000;
  return {think_tokens == 0 && identical == n,
          std::to_string(kRectifiedSamples) + " warmup + 1000 untrained samples: " + std::to_string(think_tokens) +
              " thinking tokens (" + std::to_string(tokens) + " warmup tokens), TTP identical " + std::to_string(identical) +
              "/" + std::to_string(n)};
}

// 6 ----------------------------------------------------------------------------
Outcome advantage_properties(Shared&) {
  RngStream rng(61);
  double worst_mean = 0.0, worst_std = 0.0;
  int groups = 0, degenerate_ok = 0, degenerate = 0;
  const double levels[] = {0.0, 0.1, 1.0, 1.1};
  for (int trial = 0; trial < 5000; ++trial) {
    std::vector<double> r(2 + rng.below(31));
    for (auto& x : r) x = trial % 2 ? levels[rng.below(4)] : rng.normal() * 2.0;
    const auto s = reward_statistics(r);
    const auto a = group_advantages(r);
    if (s.std < kMinGroupStd) continue;
    double mean = 0.0, var = 0.0;
    for (double x : a) mean += x;
    mean /= static_cast<double>(a.size());
    for (double x : a) var += (x - mean) * (x - mean);
    worst_mean = std::max(worst_mean, std::abs(mean));
    worst_std = std::max(worst_std, std::abs(std::sqrt(var / static_cast<double>(a.size())) - 1.0));
    ++groups;
  }
  for (double level : levels) {
    for (std::size_t n : {2u, 5u, 16u}) {
      ++degenerate;
      const auto a = group_advantages(std::vector<double>(n, level));
      degenerate_ok += std::all_of(a.begin(), a.end(), [](double x) { return x == 0.0; });
    }
  }
  const bool example = group_advantages({1, 1, 0, 0}) == std::vector<double>{1, 1, -1, -1};
  const bool ok = worst_mean <= kMomentTolerance && worst_std <= kMomentTolerance && example &&
                  degenerate_ok == degenerate;
  return {ok, std::to_string(groups) + " groups: max|mean|=" + fmt("%.2g", worst_mean) + " max|std-1|=" +
                  fmt("%.2g", worst_std) + " (tol 1e-10); [1,1,0,0] example " + (example ? "exact" : "WRONG") +
                  "; degenerate " + std::to_string(degenerate_ok) + "/" + std::to_string(degenerate)};
}

// 7 ----------------------------------------------------------------------------
Outcome reward_table(Shared& sh) {
  const int d[] = {3, 4};
  const auto q = make_query(d);
  auto t = [&](const std::string& text, bool truncated) {
    Trajectory x;
    x.response = encode(text, sh.vocab);
    x.truncated = truncated;
    return x;
  };
  struct Cell {
    Trajectory traj;
    double expected;
  };
  const Cell cells[] = {{t("<a> 7 </a> <eos>", false), 1.1},
                        {t("<a> 7 </a> W <a> 7 </a> <eos>", false), 1.0},
                        {t("<a> 2 </a> <eos>", false), 0.1},
                        {t("W W 2 <eos>", false), 0.0}};
  int ok = 0;
  std::string got;
  for (const auto& c : cells) {
    const double r = composite_reward(q, c.traj);
    ok += r == c.expected;
    got += (got.empty() ? "" : ", ") + fmt("%.17g", r);
  }
  return {ok == 4, "cells [" + got + "] vs [1.1, 1, 0.1, 0]"};
}

// 8 ----------------------------------------------------------------------------
EvalSummary eval_normal(const PolicyParameters& p, const ThinkingTokenSet& think) {
  EvalOptions o;
  o.seed = 0x8E;
  return evaluate_policy(p, generate_queries(kEvalQueries, 0x8E), think, o).summary;
}

Outcome end_to_end(Shared& sh) {
  const auto& warm = sh.warmup();
  auto dcfg = sh.base;
  auto gcfg = sh.base;
  use_grpo(gcfg.trainer);
  const auto ddir = sh.work / "e2e_duppo", gdir = sh.work / "e2e_grpo";
  fs::remove_all(ddir);
  fs::remove_all(gdir);
  const auto rd = run(dcfg, warm, warm, ddir);
  const auto rg = run(gcfg, warm, warm, gdir);
  const auto s0 = eval_normal(warm, sh.think);
  const auto sd = eval_normal(rd.state.params, sh.think);
  const auto sg = eval_normal(rg.state.params, sh.think);
  const bool fewer_think = sd.mean_think_tokens <= kThinkReduction * s0.mean_think_tokens;
  const bool kept_acc = sd.accuracy >= s0.accuracy - kAccuracySlack;
  const bool shorter = sd.mean_len < sg.mean_len;
  const bool as_accurate = sd.accuracy >= sg.accuracy;
  auto line = [](const char* name, const EvalSummary& s) {
    return std::string(name) + " acc=" + fmt("%.4f", s.accuracy) + " len=" + fmt("%.2f", s.mean_len) +
           " think=" + fmt("%.3f", s.mean_think_tokens);
  };
  return {fewer_think && kept_acc && shorter && as_accurate,
          line("start", s0) + "; " + line("duppo", sd) + "; " + line("grpo", sg) + "; think ratio " +
              fmt("%.3f", sd.mean_think_tokens / s0.mean_think_tokens) + " (<= 0.5)" +
              " [warmup " + fmt("%.1f", sh.warmup_seconds) + "s]"};
}

// 9 ----------------------------------------------------------------------------
Outcome pilot_analogs(Shared& sh) {
  const auto& warm = sh.warmup();
  const auto qs = generate_queries(kPilotQueries, 0x9A);
  EvalOptions normal, ttp, rect;
  normal.seed = ttp.seed = rect.seed = 0x9B;
  ttp.mode = EvalMode::TTP;
  rect.mode = EvalMode::Rectified;
  const auto rn = evaluate_policy(warm, qs, sh.think, normal);
  const auto rr = evaluate_policy(warm, qs, sh.think, rect);

  const auto& counts = rn.summary.think_counts;
  const bool a = counts.num_correct > 0 && counts.num_incorrect > 0 && counts.mean_incorrect > counts.mean_correct;

  std::vector<TokenSequence> responses;
  for (const auto& t : rr.trajectories) responses.push_back(t.response);
  const auto report = insertion_experiment(warm, qs, responses, sh.think);
  const double fold1 = report.rows.front().fold_change;
  const bool b = fold1 > 1.0;

  const auto wide = generate_queries(kTruncationQueries, 0x9C);
  const double trunc_normal = evaluate_policy(warm, wide, sh.think, normal).summary.errors.truncated;
  const double trunc_ttp = evaluate_policy(warm, wide, sh.think, ttp).summary.errors.truncated;
  const bool c = trunc_normal > trunc_ttp;
  return {a && b && c, std::string("(a) think incorrect=") + fmt("%.2f", counts.mean_incorrect) +
                           " correct=" + fmt("%.2f", counts.mean_correct) + (a ? " ok" : " FAIL") +
                           "; (b) fold@1=" + fmt("%.3f", fold1) + (b ? " ok" : " FAIL") +
                           "; (c) truncated share of errors normal=" + fmt("%.3f", trunc_normal) +
                           " ttp=" + fmt("%.3f", trunc_ttp) + (c ? " ok" : " FAIL")};
}

// 10 ---------------------------------------------------------------------------
Outcome reproducibility(Shared& sh) {
  auto cfg = sh.base;
  cfg.trainer.total_steps = 30;
  cfg.trainer.checkpoint_interval = 10;
  cfg.trainer.threads = 1;
  const auto init = init_parameters(cfg.model.dims, 101, cfg.model.init_scale);
  const auto a = sh.work / "repro_a", b = sh.work / "repro_b";
  fs::remove_all(a);
  fs::remove_all(b);
  run(cfg, init, init, a);
  run(cfg, init, init, b);
  std::size_t files = 0, same = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    const auto name = entry.path().filename();
    ++files;
    same += fs::exists(b / name) && slurp(entry.path()) == slurp(b / name);
  }
  std::size_t files_b = 0;
  for ([[maybe_unused]] const auto& entry : fs::directory_iterator(b)) ++files_b;
  const bool has_all = fs::exists(a / "metrics.csv") && fs::exists(a / "metrics_by_source.csv") &&
                       fs::exists(a / "final.ckpt") && fs::exists(a / "checkpoint_000030.ckpt");
  return {has_all && files == files_b && same == files,
          std::to_string(same) + "/" + std::to_string(files) + " files byte-identical (metrics CSVs and checkpoints)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"duppo acceptance checks"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work-dir", work, "scratch directory for runs")->capture_default_str();
  app.add_option("--only", only, "run only these criteria (1-10)");
  CLI11_PARSE(app, argc, argv);

  Shared sh;
  sh.work = work;
  fs::create_directories(sh.work);
  sh.base.trainer.threads = 1;

  const std::vector<std::pair<const char*, std::function<Outcome(Shared&)>>> checks = {
      {"gradient_fidelity", gradient_fidelity}, {"scaling_truth_table", truth_table},
      {"shaping_threshold", shaping_threshold}, {"grpo_reduction", reduction},
      {"rectified_exclusion", rectified_exclusion}, {"group_advantages", advantage_properties},
      {"reward_table", reward_table}, {"end_to_end_directional", end_to_end},
      {"pilot_analogs", pilot_analogs}, {"reproducibility", reproducibility}};

  nlohmann::ordered_json report = nlohmann::ordered_json::array();
  int failures = 0;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const double warm_before = sh.warmup_seconds;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = checks[i].second(sh);
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    // The shared warmup counts toward the end-to-end budget only.
    secs -= sh.warmup_seconds - warm_before;
    if (id == 8) secs += sh.warmup_seconds;
    const bool in_time = secs < kBudget[id];
    const bool pass = out.pass && in_time;
    failures += !pass;
    std::printf("%s %2d %-24s %s [%.1fs / %.0fs]\n", pass ? "PASS" : "FAIL", id, checks[i].first,
                out.detail.c_str(), secs, kBudget[id]);
    std::fflush(stdout);
    report.push_back({{"id", id}, {"name", checks[i].first}, {"pass", pass}, {"detail", out.detail},
                      {"seconds", secs}, {"budget_seconds", kBudget[id]}});
  }
  std::ofstream(sh.work / "acceptance.json") << report.dump(2) << "\n";
  return failures ? 1 : 0;
}
