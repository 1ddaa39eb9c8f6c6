#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "duppo/rng.hpp"
#include "duppo/vocab.hpp"

namespace duppo {

struct PolicyDims {
  std::uint32_t vocab = static_cast<std::uint32_t>(tok::kDefaultVocabSize);
  std::uint32_t embed = 8;   // d
  std::uint32_t window = 8;  // k
  std::uint32_t hidden = 32; // h

  friend bool operator==(const PolicyDims&, const PolicyDims&) = default;
};

/**
 * Weights of the last-k-window policy
 *
 *   x      = concat(embedding[w_1], ..., embedding[w_k])      (k*d)
 *   hidden = tanh(x * hidden_weights + hidden_bias)           (h)
 *   logits = hidden * output_weights + output_bias            (V)
 *
 * All matrices are row-major. The same layout doubles as the gradient and
 * optimizer-moment container, distinguished by the tag type.
 */
template <class Tag>
struct ParameterTensors {
  PolicyDims dims;
  std::vector<double> embedding;       // V x d
  std::vector<double> hidden_weights;  // (k*d) x h
  std::vector<double> hidden_bias;     // h
  std::vector<double> output_weights;  // h x V
  std::vector<double> output_bias;     // V

  ParameterTensors() : ParameterTensors(PolicyDims{}) {}
  explicit ParameterTensors(PolicyDims d)
      : dims(d),
        embedding(std::size_t{d.vocab} * d.embed, 0.0),
        hidden_weights(std::size_t{d.window} * d.embed * d.hidden, 0.0),
        hidden_bias(d.hidden, 0.0),
        output_weights(std::size_t{d.hidden} * d.vocab, 0.0),
        output_bias(d.vocab, 0.0) {}

  /// Blocks in declared field order.
  std::array<std::span<double>, 5> blocks() {
    return {embedding, hidden_weights, hidden_bias, output_weights, output_bias};
  }
  std::array<std::span<const double>, 5> blocks() const {
    return {embedding, hidden_weights, hidden_bias, output_weights, output_bias};
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (auto b : blocks()) n += b.size();
    return n;
  }

  /// Flat access across blocks in declared order.
  double& operator[](std::size_t i) {
    for (auto b : blocks()) {
      if (i < b.size()) return b[i];
      i -= b.size();
    }
    return output_bias.back();
  }
  double operator[](std::size_t i) const { return const_cast<ParameterTensors&>(*this)[i]; }

  bool all_finite() const;
  bool shapes_consistent() const;

  void set_zero() {
    for (auto b : blocks()) std::fill(b.begin(), b.end(), 0.0);
  }

  friend bool operator==(const ParameterTensors&, const ParameterTensors&) = default;
};

using PolicyParameters = ParameterTensors<struct PolicyParametersTag>;
using ParameterGradient = ParameterTensors<struct ParameterGradientTag>;

enum class PolicyMode { Normal, Rectified };

const char* to_string(PolicyMode mode) noexcept;

/// Gaussian init with standard deviation `scale`; biases start at zero.
PolicyParameters init_parameters(PolicyDims dims, std::uint64_t seed, double scale = 0.3);

/// Activations kept for the backward pass.
struct ForwardPass {
  std::vector<TokenId> window;  // k ids, left-padded
  std::vector<double> input;    // k*d
  std::vector<double> hidden;   // h, post-tanh
  std::vector<double> logits;   // V
};

/// Left-pads with tok::kPad and keeps the last k ids.
std::vector<TokenId> context_window(std::span<const TokenId> context, std::uint32_t k);

ForwardPass forward(const PolicyParameters& params, std::span<const TokenId> context);

/// Adds d(objective)/d(params) to `grad` given d(objective)/d(logits).
void backward(const PolicyParameters& params, const ForwardPass& pass,
              std::span<const double> logit_grad, ParameterGradient& grad);

std::vector<double> logits(const PolicyParameters& params, std::span<const TokenId> context);

/**
 * Max-shifted log-softmax of logits / temperature. When `mask` is given,
 * masked ids get -infinity and the remainder is renormalized.
 * Throws DegenerateDistributionError if every unmasked entry is -infinity.
 */
std::vector<double> log_softmax(std::span<const double> logits, double temperature,
                                const ThinkingTokenSet* mask = nullptr);

std::vector<double> log_distribution(const PolicyParameters& params,
                                     std::span<const TokenId> context, PolicyMode mode,
                                     const ThinkingTokenSet& think, double temperature = 1.0);

/// Inverse-CDF draw consuming exactly one uniform from the stream.
TokenId sample_from_log_distribution(std::span<const double> log_probs, RngStream& rng);

/// Highest-probability id; ties resolve to the lowest id.
TokenId argmax(std::span<const double> values);

/// temperature == 0 decodes greedily and consumes no randomness.
TokenId sample_token(const PolicyParameters& params, std::span<const TokenId> context,
                     PolicyMode mode, const ThinkingTokenSet& think, RngStream& rng,
                     double temperature = 1.0);

struct LogProbAndGrad {
  double log_prob;
  ParameterGradient grad;
};

/// Normal-mode log pi(token | context) and its exact gradient.
LogProbAndGrad log_prob_and_grad(const PolicyParameters& params, std::span<const TokenId> context,
                                 TokenId token, double temperature = 1.0);

// Checkpoint format: "DUPPO", u16 version, u32 V d k h, then every block as
// little-endian f64 in declared field order.
inline constexpr std::uint16_t kCheckpointVersion = 1;

void write_policy(std::ostream& out, const PolicyParameters& params);
PolicyParameters read_policy(std::istream& in);

/// Writes raw blocks (no header). Used for optimizer moments.
void write_tensor_blocks(std::ostream& out, const ParameterGradient& tensors);
void read_tensor_blocks(std::istream& in, ParameterGradient& tensors);

void save_policy(const PolicyParameters& params, const std::string& path);
PolicyParameters load_policy(const std::string& path);

}  // namespace duppo
