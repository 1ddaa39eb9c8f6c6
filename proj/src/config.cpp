#include "duppo/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "duppo/error.hpp"

namespace duppo {

LossConfig TrainerConfig::loss_config() const {
  LossConfig c;
  c.epsilon = epsilon;
  c.kl_coef = kl_coef;
  c.entropy_coef = entropy_coef;
  c.algorithm = algorithm;
  c.gamma = gamma;
  c.shaping = shaping;
  c.rectified_old_renormalized = rectified_old_renormalized;
  c.temperature = temperature;
  return c;
}

AdvantageConfig TrainerConfig::advantage_config() const {
  return {alpha, beta_sup, algorithm == Algorithm::DuPPO};
}

void TrainerConfig::validate() const {
  auto finite = [](double x, const char* name) {
    if (!std::isfinite(x)) throw ConfigError(std::string(name) + " must be finite");
  };
  finite(epsilon, "epsilon");
  finite(alpha, "alpha");
  finite(beta_sup, "beta_sup");
  finite(gamma, "gamma");
  finite(kl_coef, "kl_coef");
  finite(entropy_coef, "entropy_coef");
  finite(learning_rate, "learning_rate");
  finite(temperature, "temperature");
  if (group_size() < 2) throw ConfigError("num_rectified + num_normal must be >= 2");
  if (algorithm == Algorithm::GRPO && num_rectified != 0) {
    throw ConfigError("GRPO samples from the normal policy only; num_rectified must be 0");
  }
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must be in (0, 1)");
  if (alpha < 1.0) throw ConfigError("alpha must be >= 1");
  if (beta_sup < 1.0) throw ConfigError("beta_sup must be >= 1");
  ShapingConfig{gamma, epsilon}.validate();
  if (kl_coef < 0.0) throw ConfigError("kl_coef must be >= 0");
  if (entropy_coef < 0.0) throw ConfigError("entropy_coef must be >= 0");
  if (learning_rate < 0.0) throw ConfigError("learning_rate must be >= 0");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (batch_queries == 0) throw ConfigError("batch_queries must be >= 1");
  if (max_response_len == 0) throw ConfigError("max_response_len must be >= 1");
  if (num_operands < 2 || num_operands > 5) throw ConfigError("num_operands must be in [2, 5]");
  if (checkpoint_interval == 0) throw ConfigError("checkpoint_interval must be >= 1");
  if (threads == 0) throw ConfigError("threads must be >= 1");
}

void RunConfig::validate() const {
  trainer.validate();
  const auto& d = model.dims;
  if (d.vocab != tok::kDefaultVocabSize) throw ConfigError("vocab size is fixed by the vocabulary");
  if (d.embed == 0 || d.window == 0 || d.hidden == 0) throw ConfigError("model dims must be >= 1");
  if (!(model.init_scale >= 0.0) || !std::isfinite(model.init_scale)) throw ConfigError("init_scale must be >= 0");
  if (!(warmup.loop_bias >= 0.0 && warmup.loop_bias <= 1.0)) throw ConfigError("loop_bias must be in [0, 1]");
  if (!(warmup.learning_rate >= 0.0) || !std::isfinite(warmup.learning_rate)) {
    throw ConfigError("warmup_learning_rate must be >= 0");
  }
  if (warmup.batch_size == 0) throw ConfigError("warmup_batch_size must be >= 1");
}

Algorithm parse_algorithm(const std::string& s) {
  if (s == "grpo" || s == "GRPO") return Algorithm::GRPO;
  if (s == "duppo" || s == "DuPPO" || s == "dup-po") return Algorithm::DuPPO;
  throw ConfigError("unknown algorithm \"" + s + "\" (expected grpo or duppo)");
}

void use_grpo(TrainerConfig& cfg) {
  cfg.algorithm = Algorithm::GRPO;
  cfg.num_normal += cfg.num_rectified;
  cfg.num_rectified = 0;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

double parse_double(const std::string& v) {
  std::size_t pos = 0;
  double x = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("trailing characters");
  return x;
}

template <class UInt>
UInt parse_uint(const std::string& v) {
  UInt x{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc{} || p != v.data() + v.size()) throw std::invalid_argument("not an unsigned integer");
  return x;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("not a boolean");
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Member>
Field dbl(Member m) {
  return {[m](RunConfig& c, const std::string& v) { m(c) = parse_double(v); },
          [m](const RunConfig& c) { return fmt_double(m(const_cast<RunConfig&>(c))); }};
}

template <class Member>
Field uns(Member m) {
  return {[m](RunConfig& c, const std::string& v) {
            m(c) = parse_uint<std::remove_reference_t<decltype(m(c))>>(v);
          },
          [m](const RunConfig& c) { return std::to_string(m(const_cast<RunConfig&>(c))); }};
}

template <class Member>
Field boolean(Member m) {
  return {[m](RunConfig& c, const std::string& v) { m(c) = parse_bool(v); },
          [m](const RunConfig& c) { return std::string(m(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

// Ordered so the echo reads top-down: model, warmup, trainer.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"embed_dim", uns([](RunConfig& c) -> std::uint32_t& { return c.model.dims.embed; })},
      {"window", uns([](RunConfig& c) -> std::uint32_t& { return c.model.dims.window; })},
      {"hidden_dim", uns([](RunConfig& c) -> std::uint32_t& { return c.model.dims.hidden; })},
      {"init_scale", dbl([](RunConfig& c) -> double& { return c.model.init_scale; })},
      {"corpus_size", uns([](RunConfig& c) -> std::size_t& { return c.warmup.corpus_size; })},
      {"loop_bias", dbl([](RunConfig& c) -> double& { return c.warmup.loop_bias; })},
      {"warmup_epochs", uns([](RunConfig& c) -> std::size_t& { return c.warmup.epochs; })},
      {"warmup_learning_rate", dbl([](RunConfig& c) -> double& { return c.warmup.learning_rate; })},
      {"warmup_batch_size", uns([](RunConfig& c) -> std::size_t& { return c.warmup.batch_size; })},
      {"init_checkpoint",
       {[](RunConfig& c, const std::string& v) { c.init_checkpoint = v; },
        [](const RunConfig& c) { return c.init_checkpoint; }}},
      {"algorithm",
       {[](RunConfig& c, const std::string& v) { c.trainer.algorithm = parse_algorithm(v); },
        [](const RunConfig& c) { return std::string(to_string(c.trainer.algorithm)); }}},
      {"epsilon", dbl([](RunConfig& c) -> double& { return c.trainer.epsilon; })},
      {"alpha", dbl([](RunConfig& c) -> double& { return c.trainer.alpha; })},
      {"beta_sup", dbl([](RunConfig& c) -> double& { return c.trainer.beta_sup; })},
      {"gamma", dbl([](RunConfig& c) -> double& { return c.trainer.gamma; })},
      {"num_rectified", uns([](RunConfig& c) -> std::size_t& { return c.trainer.num_rectified; })},
      {"num_normal", uns([](RunConfig& c) -> std::size_t& { return c.trainer.num_normal; })},
      {"kl_coef", dbl([](RunConfig& c) -> double& { return c.trainer.kl_coef; })},
      {"entropy_coef", dbl([](RunConfig& c) -> double& { return c.trainer.entropy_coef; })},
      {"learning_rate", dbl([](RunConfig& c) -> double& { return c.trainer.learning_rate; })},
      {"batch_queries", uns([](RunConfig& c) -> std::size_t& { return c.trainer.batch_queries; })},
      {"max_response_len", uns([](RunConfig& c) -> std::size_t& { return c.trainer.max_response_len; })},
      {"temperature", dbl([](RunConfig& c) -> double& { return c.trainer.temperature; })},
      {"seed", uns([](RunConfig& c) -> std::uint64_t& { return c.trainer.seed; })},
      {"total_steps", uns([](RunConfig& c) -> std::size_t& { return c.trainer.total_steps; })},
      {"num_operands",
       {[](RunConfig& c, const std::string& v) { c.trainer.num_operands = static_cast<int>(parse_uint<unsigned>(v)); },
        [](const RunConfig& c) { return std::to_string(c.trainer.num_operands); }}},
      {"checkpoint_interval", uns([](RunConfig& c) -> std::size_t& { return c.trainer.checkpoint_interval; })},
      {"threads", uns([](RunConfig& c) -> std::size_t& { return c.trainer.threads; })},
      {"shaping", boolean([](RunConfig& c) -> bool& { return c.trainer.shaping; })},
      {"rectified_old_renormalized",
       boolean([](RunConfig& c) -> bool& { return c.trainer.rectified_old_renormalized; })},
  };
  return table;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* field = nullptr;
    for (const auto& [name, f] : fields()) {
      if (name == key) field = &f;
    }
    if (!field) throw ConfigError("line " + std::to_string(lineno) + ": unknown key \"" + key + "\"");
    try {
      field->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::exception&) {
      throw ConfigError("line " + std::to_string(lineno) + ": bad value \"" + value + "\" for " + key);
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string to_config_text(const RunConfig& config) {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + " = " + f.get(config) + "\n";
  return out;
}

}  // namespace duppo
