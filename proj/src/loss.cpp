#include "duppo/loss.hpp"

#include <algorithm>
#include <cmath>

#include "duppo/error.hpp"

namespace duppo {

const char* to_string(Algorithm algo) noexcept { return algo == Algorithm::GRPO ? "grpo" : "duppo"; }

const char* to_string(GateState g) noexcept {
  switch (g) {
    case GateState::ActivePositive: return "active_positive";
    case GateState::ActiveNegative: return "active_negative";
    case GateState::Gated: return "gated";
  }
  return "?";
}

void LossConfig::validate() const {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must be in (0, 1)");
  if (!(kl_coef >= 0.0) || !std::isfinite(kl_coef)) throw ConfigError("kl_coef must be >= 0");
  if (!(entropy_coef >= 0.0) || !std::isfinite(entropy_coef)) throw ConfigError("entropy_coef must be >= 0");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("temperature must be > 0");
  if (algorithm == Algorithm::DuPPO && shaping) shaping_config().validate();
}

double surrogate_term(double ratio, double a, double epsilon) {
  const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
  return std::min(ratio * a, clipped * a);
}

GateState gate_state(double a, double ratio, double epsilon) {
  if (a > 0.0 && ratio < 1.0 + epsilon) return GateState::ActivePositive;
  if (a < 0.0 && ratio > 1.0 - epsilon) return GateState::ActiveNegative;
  return GateState::Gated;
}

TokenTerm token_term(double new_lp, double old_lp, bool in_think, double scaled_advantage,
                     PolicyMode source, const LossConfig& cfg) {
  (void)source;
  const bool shaped = cfg.algorithm == Algorithm::DuPPO && cfg.shaping && in_think;
  const double r = shaped ? importance_ratio_log(new_lp, true, old_lp, cfg.shaping_config())
                          : plain_ratio_log(new_lp, old_lp);
  return {new_lp, r, scaled_advantage, gate_state(scaled_advantage, r, cfg.epsilon)};
}

namespace {

template <bool kWithGradient>
ObjectiveResult evaluate(std::span<const ScoredGroup> groups, const PolicyParameters& params,
                         const PolicyParameters* reference, const ThinkingTokenSet& think,
                         const LossConfig& cfg) {
  ObjectiveResult out;
  if constexpr (kWithGradient) out.gradient = ParameterGradient(params.dims);
  const bool use_kl = cfg.kl_coef != 0.0;
  if (use_kl && !reference) throw PreconditionError("kl_coef > 0 requires a reference policy");

  std::size_t total = 0;
  for (const auto& g : groups) {
    for (const auto& t : g.group.trajectories) total += t.response.size();
  }
  out.tokens = total;
  if (total == 0) return out;
  const double inv_total = 1.0 / static_cast<double>(total);
  const double tau = cfg.temperature;
  const std::size_t V = params.dims.vocab;

  double surr_sum = 0.0, ent_sum = 0.0, kl_sum = 0.0;
  std::vector<double> gz(V);
  TokenSequence context;
  for (const auto& sg : groups) {
    const auto& group = sg.group;
    for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
      const auto& traj = group.trajectories[i];
      const auto& row = sg.table.rows.at(i);
      const bool renorm_old = cfg.rectified_old_renormalized && traj.source == PolicyMode::Rectified;
      context = group.query.prompt;
      for (std::size_t t = 0; t < traj.response.size(); ++t) {
        const TokenId token = traj.response[t];
        const auto f = forward(params, context);
        const auto lp = log_softmax(f.logits, tau);
        const double old_lp = renorm_old ? traj.sampling_logprobs[t] : traj.behavior_logprobs[t];
        const auto term = token_term(lp[token], old_lp, think.contains(token), row.scaled[t],
                                     traj.source, cfg);
        surr_sum += surrogate_term(term.ratio, term.scaled_advantage, cfg.epsilon);
        const bool active = term.gate != GateState::Gated;
        if (!active && term.scaled_advantage != 0.0) ++out.clipped_tokens;

        double entropy = 0.0;
        if (cfg.entropy_coef != 0.0) {
          for (std::size_t v = 0; v < V; ++v) entropy -= std::exp(lp[v]) * lp[v];
          ent_sum += entropy;
        }
        double kl = 0.0;
        std::vector<double> ref_lp;
        if (use_kl) {
          ref_lp = log_softmax(logits(*reference, context), tau);
          for (std::size_t v = 0; v < V; ++v) kl += std::exp(lp[v]) * (lp[v] - ref_lp[v]);
          kl_sum += kl;
        }

        if constexpr (kWithGradient) {
          const double c_surr = active ? term.scaled_advantage * term.ratio : 0.0;
          bool nonzero = false;
          for (std::size_t v = 0; v < V; ++v) {
            const double p = std::exp(lp[v]);
            double g = c_surr * ((v == token ? 1.0 : 0.0) - p);
            if (cfg.entropy_coef != 0.0) g -= cfg.entropy_coef * p * (lp[v] + entropy);
            if (use_kl) g -= cfg.kl_coef * p * (lp[v] - ref_lp[v] - kl);
            gz[v] = g * inv_total / tau;
            nonzero = nonzero || gz[v] != 0.0;
          }
          if (nonzero) backward(params, f, gz, out.gradient);
        }
        context.push_back(token);
      }
    }
  }
  out.surrogate = surr_sum * inv_total;
  out.entropy = ent_sum * inv_total;
  out.kl = kl_sum * inv_total;
  out.objective = out.surrogate + cfg.entropy_coef * out.entropy - cfg.kl_coef * out.kl;
  if (!std::isfinite(out.objective)) throw DivergenceError("non-finite objective");
  return out;
}

}  // namespace

ObjectiveResult batch_objective_and_gradient(std::span<const ScoredGroup> groups,
                                             const PolicyParameters& params,
                                             const PolicyParameters* reference,
                                             const ThinkingTokenSet& think, const LossConfig& cfg) {
  return evaluate<true>(groups, params, reference, think, cfg);
}

double batch_objective(std::span<const ScoredGroup> groups, const PolicyParameters& params,
                       const PolicyParameters* reference, const ThinkingTokenSet& think,
                       const LossConfig& cfg) {
  return evaluate<false>(groups, params, reference, think, cfg).objective;
}

double kl_divergence(const PolicyParameters& params, const PolicyParameters& reference,
                     const std::vector<TokenSequence>& contexts, double temperature) {
  if (contexts.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& c : contexts) {
    const auto p = log_softmax(logits(params, c), temperature);
    const auto q = log_softmax(logits(reference, c), temperature);
    double kl = 0.0;
    for (std::size_t v = 0; v < p.size(); ++v) kl += std::exp(p[v]) * (p[v] - q[v]);
    sum += kl;
  }
  return sum / static_cast<double>(contexts.size());
}

}  // namespace duppo
