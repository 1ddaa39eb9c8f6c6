// duppo: warmup, train, eval and analyze subcommands.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "duppo/analysis.hpp"
#include "duppo/config.hpp"
#include "duppo/error.hpp"
#include "duppo/trainer.hpp"

namespace fs = std::filesystem;
using namespace duppo;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

RunConfig load_or_default(const std::string& path) {
  return path.empty() ? RunConfig{} : load_config(path);
}

std::string describe(const EvalSummary& s) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "accuracy %.4f  mean_len %.2f  mean_think %.3f  trunc %.4f (n=%zu)", s.accuracy,
                s.mean_len, s.mean_think_tokens, s.trunc_rate, s.count);
  return buf;
}

/// A count draws fresh queries; anything else is a query file.
std::vector<Query> resolve_queries(const std::string& arg, std::uint64_t seed, int num_operands) {
  std::size_t n = 0;
  auto [p, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), n);
  if (ec == std::errc{} && p == arg.data() + arg.size()) return generate_queries(n, seed, num_operands);
  return load_queries(build_default_vocabulary(), arg);
}

struct WarmupArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

int cmd_warmup(const WarmupArgs& a) {
  RunConfig cfg = load_or_default(a.config);
  if (a.seed) cfg.trainer.seed = *a.seed;
  cfg.validate();
  const fs::path out = a.out;
  ensure_dir(out);
  const auto vocab = build_default_vocabulary();
  const auto think = default_thinking_set(vocab);

  std::cerr << "warmup: " << cfg.warmup.corpus_size << " samples, " << cfg.warmup.epochs << " epochs\n";
  const auto art = build_warmup_policy(cfg);
  save_policy(art.result.params, (out / "warmup.ckpt").string());
  save_corpus(art.corpus, vocab, out / "corpus.txt");
  save_vocabulary(vocab, out / "vocab.txt");
  save_thinking_set(think, vocab, out / "thinking_tokens.txt");
  write_file(out / "config.txt", to_config_text(cfg));

  std::string losses = "epoch,loss\n";
  for (std::size_t e = 0; e < art.result.epoch_losses.size(); ++e) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", e + 1, art.result.epoch_losses[e]);
    losses += buf;
  }
  write_file(out / "warmup_losses.csv", losses);

  EvalOptions eo;
  eo.seed = cfg.trainer.seed;
  eo.max_len = cfg.trainer.max_response_len;
  const auto queries = generate_queries(500, cfg.trainer.seed, cfg.trainer.num_operands);
  const auto ev = evaluate_policy(art.result.params, queries, think, eo);

  nlohmann::ordered_json info;
  info["version"] = version_string();
  info["seed"] = cfg.trainer.seed;
  info["final_loss"] = art.result.epoch_losses.empty() ? 0.0 : art.result.epoch_losses.back();
  info["normal_eval"] = to_json(ev.summary);
  write_file(out / "run_info.json", info.dump(2) + "\n");
  std::cout << "warmup checkpoint: " << (out / "warmup.ckpt").string() << "\n"
            << "normal decoding: " << describe(ev.summary) << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, algo, out, init;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads, steps;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_or_default(a.config);
  if (a.seed) cfg.trainer.seed = *a.seed;
  if (a.threads) cfg.trainer.threads = *a.threads;
  if (a.steps) cfg.trainer.total_steps = *a.steps;
  if (!a.algo.empty()) {
    if (parse_algorithm(a.algo) == Algorithm::GRPO) {
      use_grpo(cfg.trainer);
    } else {
      cfg.trainer.algorithm = Algorithm::DuPPO;
    }
  }
  if (!a.init.empty()) cfg.init_checkpoint = a.init;
  cfg.validate();

  const fs::path out = a.out;
  ensure_dir(out);
  PolicyParameters initial;
  if (!cfg.init_checkpoint.empty()) {
    initial = load_policy(cfg.init_checkpoint);
  } else if (fs::exists(out / "warmup.ckpt")) {
    initial = load_policy((out / "warmup.ckpt").string());
  } else {
    std::cerr << "train: no --init given, running warmup first\n";
    initial = build_warmup_policy(cfg).result.params;
    save_policy(initial, (out / "warmup.ckpt").string());
  }
  cfg.model.dims = initial.dims;

  std::cerr << "train: " << to_string(cfg.trainer.algorithm) << ", " << cfg.trainer.total_steps << " steps, N="
            << cfg.trainer.num_rectified << " M=" << cfg.trainer.num_normal << "\n";
  const auto result = run(cfg, initial, initial, out);
  if (result.resumed) std::cerr << "train: resumed from latest.ckpt\n";
  if (!result.metrics.empty()) {
    const auto& m = result.metrics.back();
    std::printf("step %llu  reward %.4f  accuracy %.4f  mean_len %.2f  mean_think %.3f\n",
                static_cast<unsigned long long>(m.step), m.mean_reward, m.accuracy, m.mean_len,
                m.mean_think_tokens);
  }
  std::cout << "final checkpoint: " << (out / "final.ckpt").string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt, queries = "1000", mode = "normal", out;
  std::uint64_t seed = 0;
  double penalty = kHardMask;
  double temperature = 1.0;
  std::size_t max_len = 64;
  int num_operands = 2;
};

int cmd_eval(const EvalArgs& a) {
  const auto mode = parse_eval_mode(a.mode);
  const auto params = load_policy(a.ckpt);
  const auto vocab = build_default_vocabulary();
  const auto think = default_thinking_set(vocab);
  const auto queries = resolve_queries(a.queries, a.seed, a.num_operands);
  EvalOptions eo;
  eo.mode = mode;
  eo.seed = a.seed;
  eo.penalty = a.penalty;
  eo.temperature = a.temperature;
  eo.max_len = a.max_len;
  const auto ev = evaluate_policy(params, queries, think, eo);
  std::cout << eval_csv_header() << "\n" << eval_csv_row(mode, ev.summary) << "\n";
  if (!a.out.empty()) {
    const fs::path out = a.out;
    ensure_dir(out);
    write_file(out / "trajectories.csv", trajectories_csv(queries, ev.trajectories, think));
    write_file(out / "eval.csv", eval_csv_header() + "\n" + eval_csv_row(mode, ev.summary) + "\n");
    auto j = to_json(ev.summary);
    j["mode"] = to_string(mode);
    j["seed"] = a.seed;
    write_file(out / "eval.json", j.dump(2) + "\n");
  }
  return 0;
}

struct AnalyzeArgs {
  std::string ckpt, kind, out = ".", queries = "1000";
  std::uint64_t seed = 0;
  std::size_t horizon = 20, position = 0, max_len = 64;
  double temperature = 1.0;
  int num_operands = 2;
};

int cmd_analyze(const AnalyzeArgs& a) {
  const auto params = load_policy(a.ckpt);
  const auto vocab = build_default_vocabulary();
  const auto think = default_thinking_set(vocab);
  const auto queries = resolve_queries(a.queries, a.seed, a.num_operands);
  const fs::path out = a.out;
  ensure_dir(out);

  EvalOptions eo;
  eo.seed = a.seed;
  eo.temperature = a.temperature;
  eo.max_len = a.max_len;
  nlohmann::ordered_json summary;
  summary["kind"] = a.kind;
  summary["seed"] = a.seed;

  if (a.kind == "profile") {
    const auto ev = evaluate_policy(params, queries, think, eo);
    std::vector<ProbabilityProfile> profiles;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      profiles.push_back(probability_profile(params, queries[i], ev.trajectories[i].response, think, a.temperature));
    }
    write_file(out / "profile.csv", profile_csv(profiles, vocab));
    const double m = mean_think_mass_after_think(profiles, think);
    summary["mean_think_mass_after_think"] = std::isfinite(m) ? nlohmann::ordered_json(m) : nullptr;
  } else if (a.kind == "insertion") {
    // Thinking-free inputs come from rectified sampling.
    eo.mode = EvalMode::Rectified;
    const auto ev = evaluate_policy(params, queries, think, eo);
    std::vector<TokenSequence> responses;
    for (const auto& t : ev.trajectories) responses.push_back(t.response);
    InsertionOptions io;
    io.horizon = a.horizon;
    io.position = a.position;
    io.temperature = a.temperature;
    const auto report = insertion_experiment(params, queries, responses, think, io);
    write_file(out / "insertion.csv", insertion_csv(report));
    summary["insertion"] = to_json(report);
  } else if (a.kind == "counts") {
    const auto ev = evaluate_policy(params, queries, think, eo);
    write_file(out / "counts.csv", trajectories_csv(queries, ev.trajectories, think));
    summary["counts"] = to_json(ev.summary.think_counts);
  } else if (a.kind == "errors") {
    std::string csv = "mode,total,incorrect,truncated,malformed,wrong_answer\n";
    for (auto mode : {EvalMode::Normal, EvalMode::TTP, EvalMode::NoThink}) {
      eo.mode = mode;
      const auto ev = evaluate_policy(params, queries, think, eo);
      const auto& e = ev.summary.errors;
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%.17g,%.17g,%.17g\n", to_string(mode), e.total, e.incorrect,
                    e.truncated, e.malformed, e.wrong_answer);
      csv += buf;
      summary[to_string(mode)] = to_json(ev.summary);
    }
    write_file(out / "errors.csv", csv);
  } else {
    throw ConfigError("unknown analysis kind \"" + a.kind + "\"");
  }
  write_file(out / (a.kind + ".json"), summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-policy preference optimization lab on a toy reasoning policy"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", std::string(version_string()));

  WarmupArgs wa;
  auto* warmup = app.add_subcommand("warmup", "Build the loop-biased corpus and pretrain the base policy");
  warmup->add_option("--config", wa.config, "Config file (key = value lines)");
  warmup->add_option("--out", wa.out, "Output directory")->required();
  warmup->add_option("--seed", wa.seed, "Master seed (overrides the config)");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Run GRPO or DuP-PO from a warmup checkpoint");
  train->add_option("--config", ta.config, "Config file (key = value lines)");
  train->add_option("--algo", ta.algo, "grpo or duppo")->check(CLI::IsMember({"grpo", "duppo"}));
  train->add_option("--out", ta.out, "Run directory (resumes from latest.ckpt if present)")->required();
  train->add_option("--init", ta.init, "Initial policy checkpoint; warmup runs first when omitted");
  train->add_option("--seed", ta.seed, "Master seed (overrides the config)");
  train->add_option("--threads", ta.threads, "Rollout threads; 1 is bit-exact")->check(CLI::PositiveNumber);
  train->add_option("--steps", ta.steps, "Total steps (overrides the config)");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Decode a query set and report accuracy, length and thinking counts");
  eval->add_option("--ckpt", ea.ckpt, "Policy or trainer checkpoint")->required();
  eval->add_option("--queries", ea.queries, "Number of generated queries, or a query file")->capture_default_str();
  eval->add_option("--mode", ea.mode, "normal, rectified, ttp or nothink")->capture_default_str()
      ->check(CLI::IsMember({"normal", "rectified", "ttp", "nothink"}));
  eval->add_option("--seed", ea.seed, "Seed for queries and sampling")->capture_default_str();
  eval->add_option("--penalty", ea.penalty, "TTP logit penalty (default: hard mask)");
  eval->add_option("--temperature", ea.temperature, "Sampling temperature, 0 = greedy")->capture_default_str();
  eval->add_option("--max-len", ea.max_len, "Maximum response length")->capture_default_str();
  eval->add_option("--operands", ea.num_operands, "Operands per generated query")->capture_default_str()->check(CLI::Range(2, 5));
  eval->add_option("--out", ea.out, "Directory for trajectories.csv and eval.json");

  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("analyze", "Pilot-study analyses on a checkpoint");
  analyze->add_option("--ckpt", aa.ckpt, "Policy or trainer checkpoint")->required();
  analyze->add_option("--kind", aa.kind, "profile, insertion, counts or errors")
      ->required()
      ->check(CLI::IsMember({"profile", "insertion", "counts", "errors"}));
  analyze->add_option("--out", aa.out, "Output directory")->capture_default_str();
  analyze->add_option("--queries", aa.queries, "Number of generated queries, or a query file")->capture_default_str();
  analyze->add_option("--seed", aa.seed, "Seed for queries and sampling")->capture_default_str();
  analyze->add_option("--horizon", aa.horizon, "Insertion horizon")->capture_default_str();
  analyze->add_option("--position", aa.position, "Insertion response index (0 = right after the query)")->capture_default_str();
  analyze->add_option("--temperature", aa.temperature, "Sampling temperature")->capture_default_str();
  analyze->add_option("--max-len", aa.max_len, "Maximum response length")->capture_default_str();
  analyze->add_option("--operands", aa.num_operands, "Operands per generated query")->capture_default_str()->check(CLI::Range(2, 5));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*warmup) return cmd_warmup(wa);
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*analyze) return cmd_analyze(aa);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
