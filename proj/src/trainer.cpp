#include "duppo/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "duppo/binary_io.hpp"
#include "duppo/error.hpp"
#include "duppo/reward.hpp"

#ifndef DUPPO_VERSION
#define DUPPO_VERSION "0.1.0"
#endif

namespace duppo {

namespace fs = std::filesystem;

namespace {
constexpr std::uint64_t kQueryStreamTag = 0x51;
constexpr std::uint64_t kRolloutStreamTag = 0x52;
constexpr std::uint64_t kWarmupStreamTag = 0x57;

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}
}  // namespace

const char* version_string() noexcept { return DUPPO_VERSION; }

SourceBreakdown summarize(const std::vector<Trajectory>& trajectories, const std::vector<Query>& queries,
                          const ThinkingTokenSet& think) {
  SourceBreakdown s;
  s.count = trajectories.size();
  if (s.count == 0) return s;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& t = trajectories[i];
    s.mean_reward += t.reward;
    s.accuracy += is_equivalent(queries[i].ground_truth, t) ? 1.0 : 0.0;
    s.mean_len += static_cast<double>(t.response.size());
    s.mean_think_tokens += static_cast<double>(count_thinking_tokens(t.response, think));
    s.trunc_rate += t.truncated ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(s.count);
  s.mean_reward /= n;
  s.accuracy /= n;
  s.mean_len /= n;
  s.mean_think_tokens /= n;
  s.trunc_rate /= n;
  return s;
}

RolloutGroup rollout_group(const Query& query, const PolicyParameters& params,
                           const ThinkingTokenSet& think, const TrainerConfig& cfg,
                           std::uint64_t group_seed) {
  RolloutGroup g;
  g.query = query;
  const std::size_t G = cfg.group_size();
  g.trajectories.reserve(G);
  for (std::size_t j = 0; j < G; ++j) {
    DecodeOptions opt;
    opt.mode = j < cfg.num_rectified ? PolicyMode::Rectified : PolicyMode::Normal;
    opt.temperature = cfg.temperature;
    opt.max_len = cfg.max_response_len;
    RngStream rng = derive_stream(group_seed, {j});
    auto t = sample_trajectory(params, query, think, rng, opt);
    t.reward = composite_reward(query, t);
    g.trajectories.push_back(std::move(t));
  }
  g.refresh_statistics();
  return g;
}

std::vector<Query> step_queries(const TrainerConfig& cfg, std::uint64_t step) {
  RngStream rng = derive_stream(cfg.seed, {kQueryStreamTag, step});
  std::vector<Query> qs;
  qs.reserve(cfg.batch_queries);
  for (std::size_t i = 0; i < cfg.batch_queries; ++i) qs.push_back(generate_query(rng, cfg.num_operands));
  return qs;
}

std::vector<ScoredGroup> score_groups(std::vector<RolloutGroup> groups, const ThinkingTokenSet& think,
                                      const TrainerConfig& cfg) {
  std::vector<ScoredGroup> scored;
  scored.reserve(groups.size());
  const auto acfg = cfg.advantage_config();
  for (auto& g : groups) {
    auto table = build_scaled_table(g, think, acfg);
    scored.push_back({std::move(g), std::move(table)});
  }
  return scored;
}

StepMetrics update_from_groups(TrainerState& state, std::vector<RolloutGroup> groups,
                               const TrainerConfig& cfg, const ThinkingTokenSet& think,
                               const PolicyParameters* reference) {
  const auto loss_cfg = cfg.loss_config();
  auto scored = score_groups(std::move(groups), think, cfg);

  ObjectiveResult obj;
  try {
    obj = batch_objective_and_gradient(scored, state.params, reference, think, loss_cfg);
  } catch (const DivergenceError&) {
    obj.gradient = ParameterGradient(state.params.dims);
    obj.objective = std::numeric_limits<double>::quiet_NaN();
  }
  if (!std::isfinite(obj.objective) || !obj.gradient.all_finite()) {
    // Locate the offending group for the diagnostic.
    for (std::size_t i = 0; i < scored.size(); ++i) {
      try {
        auto r = batch_objective_and_gradient(std::span(scored).subspan(i, 1), state.params, reference,
                                              think, loss_cfg);
        if (!r.gradient.all_finite()) throw DivergenceError("");
      } catch (const DivergenceError&) {
        throw DivergenceError("non-finite gradient at step " + std::to_string(state.step + 1) +
                              " in group " + std::to_string(i));
      }
    }
    throw DivergenceError("non-finite gradient at step " + std::to_string(state.step + 1));
  }

  StepMetrics m;
  m.step = state.step + 1;
  std::vector<Trajectory> all, rect, norm;
  std::vector<Query> all_q, rect_q, norm_q;
  for (const auto& sg : scored) {
    for (const auto& t : sg.group.trajectories) {
      all.push_back(t);
      all_q.push_back(sg.group.query);
      if (t.source == PolicyMode::Rectified) {
        rect.push_back(t);
        rect_q.push_back(sg.group.query);
      } else {
        norm.push_back(t);
        norm_q.push_back(sg.group.query);
      }
    }
  }
  const auto overall = summarize(all, all_q, think);
  m.mean_reward = overall.mean_reward;
  m.accuracy = overall.accuracy;
  m.mean_len = overall.mean_len;
  m.mean_think_tokens = overall.mean_think_tokens;
  m.trunc_rate = overall.trunc_rate;
  m.rectified = summarize(rect, rect_q, think);
  m.normal = summarize(norm, norm_q, think);
  m.objective = obj.objective;
  double sq = 0.0;
  for (auto b : obj.gradient.blocks()) {
    for (double g : b) sq += g * g;
  }
  m.grad_norm = std::sqrt(sq);
  m.clip_frac = obj.tokens ? static_cast<double>(obj.clipped_tokens) / static_cast<double>(obj.tokens) : 0.0;

  if (cfg.learning_rate != 0.0) {
    optimizer_update(state.params, obj.gradient, state.optimizer, cfg.learning_rate, StepDirection::Ascent);
  }
  state.step += 1;
  return m;
}

StepMetrics train_step(TrainerState& state, const std::vector<Query>& queries, const TrainerConfig& cfg,
                       const ThinkingTokenSet& think, const PolicyParameters* reference) {
  std::vector<RolloutGroup> groups(queries.size());
  const std::uint64_t step = state.step + 1;
  auto roll = [&](std::size_t q) {
    groups[q] = rollout_group(queries[q], state.params, think, cfg,
                              derive_seed(cfg.seed, {kRolloutStreamTag, step, q}));
  };
  const std::size_t threads = std::min(cfg.threads, queries.size());
  if (threads <= 1) {
    for (std::size_t q = 0; q < queries.size(); ++q) roll(q);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t q = w; q < queries.size(); q += threads) roll(q);
      });
    }
    for (auto& t : pool) t.join();
  }
  return update_from_groups(state, std::move(groups), cfg, think, reference);
}

// --- checkpoints -----------------------------------------------------------

void save_trainer_checkpoint(const fs::path& path, const TrainerState& state, const std::string& config_text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    write_policy(out, state.params);
    write_optimizer_state(out, state.optimizer);
    io::put_le<std::uint64_t>(out, state.step);
    io::put_string(out, config_text);
    if (!out) throw IoError("write failed for checkpoint " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

TrainerCheckpoint load_trainer_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  try {
    TrainerCheckpoint ck;
    ck.state.params = read_policy(in);
    ck.state.optimizer = read_optimizer_state(in, ck.state.params.dims);
    ck.state.step = io::get_le<std::uint64_t>(in);
    ck.config_text = io::get_string(in);
    return ck;
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string metrics_row(const StepMetrics& m) {
  return std::to_string(m.step) + "," + fmt(m.mean_reward) + "," + fmt(m.accuracy) + "," + fmt(m.mean_len) + "," +
         fmt(m.mean_think_tokens) + "," + fmt(m.trunc_rate) + "," + fmt(m.objective) + "," + fmt(m.grad_norm) +
         "," + fmt(m.clip_frac);
}

namespace {

constexpr const char* kSourceHeader =
    "step,source,count,mean_reward,accuracy,mean_len,mean_think_tokens,trunc_rate";

std::string source_rows(const StepMetrics& m) {
  std::string out;
  for (const auto& [name, s] : {std::pair{"rectified", &m.rectified}, std::pair{"normal", &m.normal}}) {
    out += std::to_string(m.step) + "," + name + "," + std::to_string(s->count) + "," + fmt(s->mean_reward) +
           "," + fmt(s->accuracy) + "," + fmt(s->mean_len) + "," + fmt(s->mean_think_tokens) + "," +
           fmt(s->trunc_rate) + "\n";
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

/// Keeps the header and rows whose leading step field is <= max_step.
void truncate_csv(const fs::path& path, const char* header, std::uint64_t max_step) {
  std::string kept = std::string(header) + "\n";
  std::ifstream in(path);
  if (in) {
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (first) {
        first = false;
        continue;
      }
      if (line.empty()) continue;
      const auto comma = line.find(',');
      const std::uint64_t step = std::stoull(line.substr(0, comma));
      if (step <= max_step) kept += line + "\n";
    }
  }
  write_text(path, kept);
}

void append_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to " + path.string());
  out << text;
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

std::string checkpoint_name(std::uint64_t step) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "checkpoint_%06llu.ckpt", static_cast<unsigned long long>(step));
  return buf;
}

}  // namespace

WarmupArtifacts build_warmup_policy(const RunConfig& cfg) {
  cfg.validate();
  const std::uint64_t seed = cfg.trainer.seed;
  WarmupArtifacts out;
  RngStream corpus_rng = derive_stream(seed, {kWarmupStreamTag, 0});
  out.corpus = generate_warmup_corpus(corpus_rng, cfg.warmup.corpus_size, cfg.warmup.loop_bias,
                                      cfg.trainer.num_operands);
  const auto init = init_parameters(cfg.model.dims, derive_seed(seed, {kWarmupStreamTag, 1}), cfg.model.init_scale);
  WarmupOptions opt;
  opt.epochs = cfg.warmup.epochs;
  opt.learning_rate = cfg.warmup.learning_rate;
  opt.batch_size = cfg.warmup.batch_size;
  opt.shuffle_seed = derive_seed(seed, {kWarmupStreamTag, 2});
  out.result = warmup_train(init, out.corpus, opt);
  return out;
}

RunResult run(const RunConfig& cfg, const PolicyParameters& initial, const PolicyParameters& reference,
              const fs::path& out_dir) {
  cfg.validate();
  const auto& tc = cfg.trainer;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  const auto vocab = build_default_vocabulary();
  const auto think = default_thinking_set(vocab);
  const std::string config_text = to_config_text(cfg);
  const fs::path metrics_path = out_dir / "metrics.csv";
  const fs::path source_path = out_dir / "metrics_by_source.csv";
  const fs::path latest = out_dir / "latest.ckpt";

  RunResult result;
  if (fs::exists(latest)) {
    auto ck = load_trainer_checkpoint(latest);
    result.state = std::move(ck.state);
    result.resumed = true;
    truncate_csv(metrics_path, kMetricsHeader, result.state.step);
    truncate_csv(source_path, kSourceHeader, result.state.step);
  } else {
    if (initial.dims != cfg.model.dims) throw ConfigError("initial checkpoint dims differ from config");
    result.state = TrainerState(initial);
    write_text(metrics_path, std::string(kMetricsHeader) + "\n");
    write_text(source_path, std::string(kSourceHeader) + "\n");
    save_trainer_checkpoint(out_dir / checkpoint_name(0), result.state, config_text);
    save_trainer_checkpoint(latest, result.state, config_text);
  }
  write_text(out_dir / "config.txt", config_text);
  nlohmann::ordered_json info;
  info["version"] = version_string();
  info["seed"] = tc.seed;
  info["algorithm"] = to_string(tc.algorithm);
  info["total_steps"] = tc.total_steps;
  write_text(out_dir / "run_info.json", info.dump(2) + "\n");

  const PolicyParameters* ref = tc.kl_coef != 0.0 ? &reference : nullptr;
  auto& state = result.state;
  while (state.step < tc.total_steps) {
    const auto queries = step_queries(tc, state.step + 1);
    const auto m = train_step(state, queries, tc, think, ref);
    append_text(metrics_path, metrics_row(m) + "\n");
    append_text(source_path, source_rows(m));
    result.metrics.push_back(m);
    if (state.step % tc.checkpoint_interval == 0) {
      save_trainer_checkpoint(out_dir / checkpoint_name(state.step), state, config_text);
      save_trainer_checkpoint(latest, state, config_text);
    }
  }
  save_trainer_checkpoint(latest, state, config_text);
  save_trainer_checkpoint(out_dir / "final.ckpt", state, config_text);
  return result;
}

}  // namespace duppo
