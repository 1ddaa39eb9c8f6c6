#include "duppo/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "duppo/error.hpp"
#include "duppo/optimizer.hpp"

namespace duppo {

Query make_query(std::span<const int> digits) {
  Query q;
  int sum = 0;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (digits[i] < 0 || digits[i] > 9) throw PreconditionError("operand must be a digit");
    if (i) q.prompt.push_back(tok::kPlus);
    q.prompt.push_back(static_cast<TokenId>(digits[i]));
    sum += digits[i];
  }
  q.prompt.push_back(tok::kEquals);
  q.ground_truth = sum % 10;
  return q;
}

Query generate_query(RngStream& rng, int num_operands) {
  if (num_operands < 2 || num_operands > 5) {
    throw PreconditionError("num_operands must be in [2, 5]");
  }
  std::vector<int> digits(static_cast<std::size_t>(num_operands));
  for (int& d : digits) d = static_cast<int>(rng.below(10));
  return make_query(digits);
}

bool is_equivalent(int answer, const TokenSequence& r) {
  // A span with a one-digit interior is exactly the triple "<a> d </a>".
  for (std::size_t i = r.size(); i >= 3; --i) {
    if (r[i - 3] == tok::kAnswerOpen && tok::is_digit(r[i - 2]) && r[i - 1] == tok::kAnswerClose) {
      return static_cast<int>(r[i - 2]) == answer;
    }
  }
  return false;
}

bool is_equivalent(int answer, const Trajectory& t) { return is_equivalent(answer, t.response); }

bool is_well_formatted(const Trajectory& t) {
  const auto& r = t.response;
  if (t.truncated || r.empty() || r.back() != tok::kEos) return false;
  const auto opens = std::count(r.begin(), r.end(), tok::kAnswerOpen);
  const auto closes = std::count(r.begin(), r.end(), tok::kAnswerClose);
  if (opens != 1 || closes != 1) return false;
  const auto open = static_cast<std::size_t>(std::find(r.begin(), r.end(), tok::kAnswerOpen) - r.begin());
  return open + 2 < r.size() && tok::is_digit(r[open + 1]) && r[open + 2] == tok::kAnswerClose;
}

std::size_t count_thinking_tokens(const TokenSequence& response, const ThinkingTokenSet& think) {
  return static_cast<std::size_t>(
      std::count_if(response.begin(), response.end(), [&](TokenId id) { return think.contains(id); }));
}

Trajectory sample_trajectory(const PolicyParameters& params, const Query& query,
                             const ThinkingTokenSet& think, RngStream& rng,
                             const DecodeOptions& opt) {
  Trajectory t;
  t.source = opt.mode;
  const bool greedy = opt.temperature <= 0.0;
  const double temp = greedy ? 1.0 : opt.temperature;
  const bool hard_mask = opt.mode == PolicyMode::Rectified || opt.think_penalty == std::numeric_limits<double>::infinity();

  TokenSequence context = query.prompt;
  context.reserve(query.prompt.size() + opt.max_len);

  auto emit = [&](TokenId id, double behavior_lp, double sampling_lp) {
    context.push_back(id);
    t.response.push_back(id);
    t.behavior_logprobs.push_back(behavior_lp);
    t.sampling_logprobs.push_back(sampling_lp);
  };

  for (TokenId id : opt.forced_prefix) {
    if (t.response.size() >= opt.max_len) break;
    const auto lp = log_softmax(logits(params, context), temp);
    emit(id, lp[id], lp[id]);
    if (id == tok::kEos) return t;
  }

  while (t.response.size() < opt.max_len) {
    const auto z = logits(params, context);
    const auto normal_lp = log_softmax(z, temp);
    std::vector<double> sample_lp;
    if (hard_mask) {
      sample_lp = log_softmax(z, temp, &think);
    } else if (opt.think_penalty != 0.0) {
      auto zp = z;
      for (TokenId id : think.ids()) zp[id] -= opt.think_penalty;
      sample_lp = log_softmax(zp, temp);
    } else {
      sample_lp = normal_lp;
    }
    const TokenId next = greedy ? argmax(sample_lp) : sample_from_log_distribution(sample_lp, rng);
    emit(next, normal_lp[next], sample_lp[next]);
    if (next == tok::kEos) return t;
  }
  t.truncated = true;
  return t;
}

std::vector<CorpusEntry> generate_warmup_corpus(RngStream& rng, std::size_t size, double loop_bias,
                                                int num_operands) {
  if (!(loop_bias >= 0.0 && loop_bias <= 1.0)) throw PreconditionError("loop_bias must be in [0, 1]");
  const TokenId thinking[] = {tok::kWait, tok::kHowever, tok::kBut};
  std::vector<CorpusEntry> corpus;
  corpus.reserve(size);
  for (std::size_t n = 0; n < size; ++n) {
    CorpusEntry e{generate_query(rng, num_operands), {}};
    if (rng.bernoulli(loop_bias)) {
      std::size_t total = 0;
      bool first = true;
      bool more = true;
      while (more) {
        std::size_t cluster = first ? 2 : 1;
        while (cluster < kMaxClusterSize && rng.bernoulli(kLoopContinuation)) ++cluster;
        cluster = std::min(cluster, kMaxLoopThinkTokens - total);
        for (std::size_t i = 0; i < cluster; ++i) e.target.push_back(thinking[rng.below(3)]);
        total += cluster;
        e.target.insert(e.target.end(), e.query.prompt.begin(), e.query.prompt.end());
        first = false;
        more = total < kMaxLoopThinkTokens && rng.bernoulli(kCycleContinuation);
      }
    }
    e.target.push_back(tok::kAnswerOpen);
    e.target.push_back(static_cast<TokenId>(e.query.ground_truth));
    e.target.push_back(tok::kAnswerClose);
    e.target.push_back(tok::kEos);
    corpus.push_back(std::move(e));
  }
  return corpus;
}

void save_corpus(const std::vector<CorpusEntry>& corpus, const Vocabulary& vocab,
                 const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus " + path.string());
  for (const auto& e : corpus) out << decode(e.query.prompt, vocab) << '\t' << decode(e.target, vocab) << '\n';
  if (!out) throw IoError("write failed for corpus " + path.string());
}

std::vector<CorpusEntry> load_corpus(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus " + path.string());
  std::vector<CorpusEntry> corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    const std::string prompt_text = line.substr(0, tab);
    CorpusEntry e;
    e.query.prompt = encode(prompt_text, vocab);
    if (e.query.prompt.empty() || e.query.prompt.back() != tok::kEquals) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": prompt must end with '='");
    }
    int sum = 0;
    for (TokenId id : e.query.prompt) {
      if (tok::is_digit(id)) sum += static_cast<int>(id);
    }
    e.query.ground_truth = sum % 10;
    if (tab != std::string::npos) e.target = encode(line.substr(tab + 1), vocab);
    corpus.push_back(std::move(e));
  }
  return corpus;
}

namespace {

/// Accumulates cross-entropy gradient (descent direction) of one sequence.
double accumulate_sequence(const PolicyParameters& params, const CorpusEntry& e,
                           ParameterGradient* grad) {
  TokenSequence context = e.query.prompt;
  double loss = 0.0;
  std::vector<double> gz(params.dims.vocab);
  for (TokenId target : e.target) {
    const auto f = forward(params, context);
    const auto lp = log_softmax(f.logits, 1.0);
    loss -= lp[target];
    if (grad) {
      for (std::size_t v = 0; v < gz.size(); ++v) gz[v] = std::exp(lp[v]) - (v == target ? 1.0 : 0.0);
      backward(params, f, gz, *grad);
    }
    context.push_back(target);
  }
  return loss;
}

}  // namespace

double corpus_loss(const PolicyParameters& params, const std::vector<CorpusEntry>& corpus) {
  double loss = 0.0;
  std::size_t tokens = 0;
  for (const auto& e : corpus) {
    loss += accumulate_sequence(params, e, nullptr);
    tokens += e.target.size();
  }
  return tokens ? loss / static_cast<double>(tokens) : 0.0;
}

WarmupResult warmup_train(const PolicyParameters& initial, const std::vector<CorpusEntry>& corpus,
                          const WarmupOptions& opt) {
  WarmupResult result{initial, {}};
  if (opt.epochs == 0 || corpus.empty()) return result;
  auto& params = result.params;
  OptimizerState adam(params.dims);
  RngStream rng(opt.shuffle_seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::max<std::size_t>(1, opt.batch_size);
  ParameterGradient grad(params.dims);

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double epoch_loss = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      grad.set_zero();
      std::size_t tokens = 0;
      for (std::size_t j = start; j < end; ++j) {
        const auto& e = corpus[order[j]];
        epoch_loss += accumulate_sequence(params, e, &grad);
        tokens += e.target.size();
      }
      epoch_tokens += tokens;
      if (tokens == 0) continue;
      const double scale = 1.0 / static_cast<double>(tokens);
      for (auto b : grad.blocks()) {
        for (double& g : b) g *= scale;
      }
      if (!grad.all_finite() || !std::isfinite(epoch_loss)) {
        throw DivergenceError("warmup loss diverged in epoch " + std::to_string(epoch + 1));
      }
      optimizer_update(params, grad, adam, opt.learning_rate, StepDirection::Descent);
    }
    result.epoch_losses.push_back(epoch_tokens ? epoch_loss / static_cast<double>(epoch_tokens) : 0.0);
  }
  return result;
}

}  // namespace duppo
