#include "duppo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "duppo/binary_io.hpp"
#include "duppo/error.hpp"

namespace duppo {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr char kMagic[5] = {'D', 'U', 'P', 'P', 'O'};
}  // namespace

template <class Tag>
bool ParameterTensors<Tag>::all_finite() const {
  for (auto b : blocks()) {
    for (double x : b) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

template <class Tag>
bool ParameterTensors<Tag>::shapes_consistent() const {
  const std::size_t V = dims.vocab, d = dims.embed, k = dims.window, h = dims.hidden;
  return embedding.size() == V * d && hidden_weights.size() == k * d * h &&
         hidden_bias.size() == h && output_weights.size() == h * V && output_bias.size() == V;
}

template struct ParameterTensors<PolicyParametersTag>;
template struct ParameterTensors<ParameterGradientTag>;

const char* to_string(PolicyMode mode) noexcept {
  return mode == PolicyMode::Normal ? "normal" : "rectified";
}

PolicyParameters init_parameters(PolicyDims dims, std::uint64_t seed, double scale) {
  PolicyParameters p(dims);
  RngStream rng(seed);
  for (double& x : p.embedding) x = scale * rng.normal();
  // Fan-in scaling keeps tanh out of saturation at init.
  const double hs = scale / std::sqrt(static_cast<double>(dims.window));
  for (double& x : p.hidden_weights) x = hs * rng.normal();
  const double os = scale / std::sqrt(static_cast<double>(dims.hidden) / 8.0);
  for (double& x : p.output_weights) x = os * rng.normal();
  return p;
}

std::vector<TokenId> context_window(std::span<const TokenId> context, std::uint32_t k) {
  std::vector<TokenId> w(k, tok::kPad);
  const std::size_t n = std::min<std::size_t>(k, context.size());
  std::copy(context.end() - static_cast<std::ptrdiff_t>(n), context.end(), w.end() - static_cast<std::ptrdiff_t>(n));
  return w;
}

ForwardPass forward(const PolicyParameters& params, std::span<const TokenId> context) {
  const auto& dm = params.dims;
  const std::size_t d = dm.embed, h = dm.hidden, V = dm.vocab;
  ForwardPass f;
  f.window = context_window(context, dm.window);
  f.input.resize(std::size_t{dm.window} * d);
  for (std::size_t p = 0; p < dm.window; ++p) {
    const TokenId id = f.window[p];
    if (id >= V) throw PreconditionError("token id " + std::to_string(id) + " out of range");
    std::copy_n(params.embedding.begin() + static_cast<std::ptrdiff_t>(id * d), d,
                f.input.begin() + static_cast<std::ptrdiff_t>(p * d));
  }
  f.hidden.assign(params.hidden_bias.begin(), params.hidden_bias.end());
  for (std::size_t i = 0; i < f.input.size(); ++i) {
    const double xi = f.input[i];
    const double* row = &params.hidden_weights[i * h];
    for (std::size_t j = 0; j < h; ++j) f.hidden[j] += xi * row[j];
  }
  for (double& a : f.hidden) a = std::tanh(a);
  f.logits.assign(params.output_bias.begin(), params.output_bias.end());
  for (std::size_t j = 0; j < h; ++j) {
    const double aj = f.hidden[j];
    const double* row = &params.output_weights[j * V];
    for (std::size_t v = 0; v < V; ++v) f.logits[v] += aj * row[v];
  }
  return f;
}

void backward(const PolicyParameters& params, const ForwardPass& f,
              std::span<const double> logit_grad, ParameterGradient& grad) {
  const auto& dm = params.dims;
  const std::size_t d = dm.embed, h = dm.hidden, V = dm.vocab;
  std::vector<double> g_pre(h, 0.0);
  for (std::size_t v = 0; v < V; ++v) grad.output_bias[v] += logit_grad[v];
  for (std::size_t j = 0; j < h; ++j) {
    const double aj = f.hidden[j];
    const double* w = &params.output_weights[j * V];
    double* g = &grad.output_weights[j * V];
    double acc = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      g[v] += aj * logit_grad[v];
      acc += w[v] * logit_grad[v];
    }
    g_pre[j] = acc * (1.0 - aj * aj);
  }
  for (std::size_t j = 0; j < h; ++j) grad.hidden_bias[j] += g_pre[j];
  for (std::size_t i = 0; i < f.input.size(); ++i) {
    const double xi = f.input[i];
    const double* w = &params.hidden_weights[i * h];
    double* g = &grad.hidden_weights[i * h];
    double gx = 0.0;
    for (std::size_t j = 0; j < h; ++j) {
      g[j] += xi * g_pre[j];
      gx += w[j] * g_pre[j];
    }
    grad.embedding[f.window[i / d] * d + i % d] += gx;
  }
}

std::vector<double> logits(const PolicyParameters& params, std::span<const TokenId> context) {
  return forward(params, context).logits;
}

std::vector<double> log_softmax(std::span<const double> z, double temperature,
                                const ThinkingTokenSet* mask) {
  std::vector<double> out(z.size());
  double mx = kNegInf;
  for (std::size_t v = 0; v < z.size(); ++v) {
    if (mask && mask->contains(static_cast<TokenId>(v))) continue;
    mx = std::max(mx, z[v] / temperature);
  }
  if (!(mx > kNegInf)) {
    throw DegenerateDistributionError("every unmasked logit is -infinity");
  }
  double sum = 0.0;
  for (std::size_t v = 0; v < z.size(); ++v) {
    if (mask && mask->contains(static_cast<TokenId>(v))) continue;
    sum += std::exp(z[v] / temperature - mx);
  }
  const double lse = mx + std::log(sum);
  for (std::size_t v = 0; v < z.size(); ++v) {
    out[v] = (mask && mask->contains(static_cast<TokenId>(v))) ? kNegInf : z[v] / temperature - lse;
  }
  return out;
}

std::vector<double> log_distribution(const PolicyParameters& params,
                                     std::span<const TokenId> context, PolicyMode mode,
                                     const ThinkingTokenSet& think, double temperature) {
  const auto z = logits(params, context);
  return log_softmax(z, temperature, mode == PolicyMode::Rectified ? &think : nullptr);
}

TokenId sample_from_log_distribution(std::span<const double> log_probs, RngStream& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last_support = 0;
  for (std::size_t v = 0; v < log_probs.size(); ++v) {
    if (log_probs[v] == kNegInf) continue;
    last_support = v;
    cum += std::exp(log_probs[v]);
    if (u < cum) return static_cast<TokenId>(v);
  }
  // Rounding left cum slightly below 1.
  return static_cast<TokenId>(last_support);
}

TokenId argmax(std::span<const double> values) {
  return static_cast<TokenId>(std::max_element(values.begin(), values.end()) - values.begin());
}

TokenId sample_token(const PolicyParameters& params, std::span<const TokenId> context,
                     PolicyMode mode, const ThinkingTokenSet& think, RngStream& rng,
                     double temperature) {
  if (temperature <= 0.0) {
    const auto lp = log_distribution(params, context, mode, think, 1.0);
    return argmax(lp);
  }
  const auto lp = log_distribution(params, context, mode, think, temperature);
  return sample_from_log_distribution(lp, rng);
}

LogProbAndGrad log_prob_and_grad(const PolicyParameters& params, std::span<const TokenId> context,
                                 TokenId token, double temperature) {
  if (token >= params.dims.vocab) throw PreconditionError("token id out of range");
  const auto f = forward(params, context);
  const auto lp = log_softmax(f.logits, temperature);
  std::vector<double> gz(lp.size());
  for (std::size_t v = 0; v < lp.size(); ++v) {
    gz[v] = ((v == token ? 1.0 : 0.0) - std::exp(lp[v])) / temperature;
  }
  LogProbAndGrad out{lp[token], ParameterGradient(params.dims)};
  backward(params, f, gz, out.grad);
  return out;
}

void write_policy(std::ostream& out, const PolicyParameters& params) {
  out.write(kMagic, sizeof(kMagic));
  io::put_le<std::uint16_t>(out, kCheckpointVersion);
  io::put_le<std::uint32_t>(out, params.dims.vocab);
  io::put_le<std::uint32_t>(out, params.dims.embed);
  io::put_le<std::uint32_t>(out, params.dims.window);
  io::put_le<std::uint32_t>(out, params.dims.hidden);
  for (auto b : params.blocks()) io::put_f64s(out, b);
}

PolicyParameters read_policy(std::istream& in) {
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + sizeof(magic), kMagic)) {
    throw IoError("not a policy checkpoint (bad magic)");
  }
  const auto version = io::get_le<std::uint16_t>(in);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  PolicyDims dims;
  dims.vocab = io::get_le<std::uint32_t>(in);
  dims.embed = io::get_le<std::uint32_t>(in);
  dims.window = io::get_le<std::uint32_t>(in);
  dims.hidden = io::get_le<std::uint32_t>(in);
  if (dims.vocab == 0 || dims.embed == 0 || dims.window == 0 || dims.hidden == 0 ||
      dims.vocab > 4096 || dims.embed > 4096 || dims.window > 4096 || dims.hidden > 4096) {
    throw IoError("implausible checkpoint dims");
  }
  PolicyParameters p(dims);
  for (auto b : p.blocks()) io::get_f64s(in, b);
  return p;
}

void write_tensor_blocks(std::ostream& out, const ParameterGradient& t) {
  for (auto b : t.blocks()) io::put_f64s(out, b);
}

void read_tensor_blocks(std::istream& in, ParameterGradient& t) {
  for (auto b : t.blocks()) io::get_f64s(in, b);
}

void save_policy(const PolicyParameters& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  write_policy(out, params);
  if (!out) throw IoError("write failed for checkpoint " + path);
}

PolicyParameters load_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  try {
    return read_policy(in);
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
}

}  // namespace duppo
