#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "duppo/analysis.hpp"
#include "duppo/config.hpp"
#include "duppo/error.hpp"
#include "duppo/reward.hpp"
#include "duppo/shaping.hpp"
#include "duppo/trainer.hpp"

namespace py = pybind11;
using namespace duppo;

namespace {

const ThinkingTokenSet& default_think() {
  static const ThinkingTokenSet set = default_thinking_set(build_default_vocabulary());
  return set;
}

Query query_from(const std::vector<int>& digits) { return make_query(digits); }

}  // namespace

PYBIND11_MODULE(_duppo, m) {
  m.doc() = "Dual-policy preference optimization on a toy reasoning policy";
  m.attr("__version__") = version_string();

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_ValueError);
  py::register_exception<GroupTooSmallError>(m, "GroupTooSmallError", PyExc_ValueError);
  py::register_exception<UnknownTokenError>(m, "UnknownTokenError", PyExc_KeyError);

  // vocabulary
  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init<std::vector<std::string>>())
      .def("size", &Vocabulary::size)
      .def("token", &Vocabulary::token)
      .def("id", &Vocabulary::id)
      .def("__len__", &Vocabulary::size)
      .def("__contains__", &Vocabulary::contains);
  m.def("default_vocabulary", &build_default_vocabulary);
  m.def("thinking_token_ids", [] { return default_think().ids(); });
  m.def(
      "encode", [](const std::string& text) { return encode(text, build_default_vocabulary()); }, py::arg("text"));
  m.def(
      "decode", [](const TokenSequence& ids) { return decode(ids, build_default_vocabulary()); }, py::arg("ids"));

  py::enum_<PolicyMode>(m, "PolicyMode").value("Normal", PolicyMode::Normal).value("Rectified", PolicyMode::Rectified);
  py::enum_<Algorithm>(m, "Algorithm").value("GRPO", Algorithm::GRPO).value("DuPPO", Algorithm::DuPPO);

  // environment
  py::class_<Query>(m, "Query")
      .def(py::init(&query_from), py::arg("digits"))
      .def_readonly("prompt", &Query::prompt)
      .def_readonly("ground_truth", &Query::ground_truth)
      .def("__repr__", [](const Query& q) { return "Query('" + decode(q.prompt, build_default_vocabulary()) + "')"; });
  m.def("generate_queries", &generate_queries, py::arg("count"), py::arg("seed") = 0, py::arg("num_operands") = 2);

  py::class_<Trajectory>(m, "Trajectory")
      .def(py::init<>())
      .def_readwrite("response", &Trajectory::response)
      .def_readwrite("behavior_logprobs", &Trajectory::behavior_logprobs)
      .def_readwrite("sampling_logprobs", &Trajectory::sampling_logprobs)
      .def_readwrite("source", &Trajectory::source)
      .def_readwrite("reward", &Trajectory::reward)
      .def_readwrite("truncated", &Trajectory::truncated)
      .def_property_readonly("text", [](const Trajectory& t) { return decode(t.response, build_default_vocabulary()); });

  // policy
  py::class_<PolicyDims>(m, "PolicyDims")
      .def(py::init<>())
      .def_readwrite("vocab", &PolicyDims::vocab)
      .def_readwrite("embed", &PolicyDims::embed)
      .def_readwrite("window", &PolicyDims::window)
      .def_readwrite("hidden", &PolicyDims::hidden);
  py::class_<PolicyParameters>(m, "PolicyParameters")
      .def_readonly("dims", &PolicyParameters::dims)
      .def("size", &PolicyParameters::size)
      .def("flat", [](const PolicyParameters& p) {
        std::vector<double> out;
        for (auto b : p.blocks()) out.insert(out.end(), b.begin(), b.end());
        return out;
      })
      .def("__eq__", [](const PolicyParameters& a, const PolicyParameters& b) { return a == b; });
  m.def("init_parameters", &init_parameters, py::arg("dims") = PolicyDims{}, py::arg("seed") = 0,
        py::arg("scale") = 0.3);
  m.def("save_policy", &save_policy, py::arg("params"), py::arg("path"));
  m.def("load_policy", &load_policy, py::arg("path"));
  m.def(
      "log_distribution",
      [](const PolicyParameters& p, const TokenSequence& ctx, PolicyMode mode, double temperature) {
        return log_distribution(p, ctx, mode, default_think(), temperature);
      },
      py::arg("params"), py::arg("context"), py::arg("mode") = PolicyMode::Normal, py::arg("temperature") = 1.0);
  m.def(
      "sample_trajectory",
      [](const PolicyParameters& p, const Query& q, std::uint64_t seed, PolicyMode mode, double temperature,
         std::size_t max_len, double penalty) {
        RngStream rng(seed);
        DecodeOptions opt;
        opt.mode = mode;
        opt.temperature = temperature;
        opt.max_len = max_len;
        opt.think_penalty = penalty;
        auto t = sample_trajectory(p, q, default_think(), rng, opt);
        t.reward = composite_reward(q, t);
        return t;
      },
      py::arg("params"), py::arg("query"), py::arg("seed") = 0, py::arg("mode") = PolicyMode::Normal,
      py::arg("temperature") = 1.0, py::arg("max_len") = 64, py::arg("penalty") = 0.0);

  // rewards, advantages, shaping, surrogate
  m.def("binary_reward", &binary_reward, py::arg("query"), py::arg("trajectory"));
  m.def("composite_reward", &composite_reward, py::arg("query"), py::arg("trajectory"));
  m.def("group_advantages", &group_advantages, py::arg("rewards"));
  m.def("scaling_factor", &scaling_factor, py::arg("advantage"), py::arg("source"), py::arg("in_think"),
        py::arg("preferred_rectified_exists"), py::arg("alpha") = 2.0, py::arg("beta_sup") = 2.0);
  m.def(
      "calibrated_old_prob",
      [](bool in_think, double old_prob, double gamma, double epsilon) {
        return calibrated_old_prob(in_think, old_prob, ShapingConfig{gamma, epsilon});
      },
      py::arg("in_think"), py::arg("old_prob"), py::arg("gamma") = 0.1, py::arg("epsilon") = 0.2);
  m.def(
      "importance_ratio",
      [](double new_prob, bool in_think, double old_prob, double gamma, double epsilon) {
        return importance_ratio(new_prob, in_think, old_prob, ShapingConfig{gamma, epsilon});
      },
      py::arg("new_prob"), py::arg("in_think"), py::arg("old_prob"), py::arg("gamma") = 0.1,
      py::arg("epsilon") = 0.2);
  m.def("surrogate_term", &surrogate_term, py::arg("ratio"), py::arg("advantage"), py::arg("epsilon") = 0.2);
  m.def(
      "gate_state", [](double a, double r, double eps) { return std::string(to_string(gate_state(a, r, eps))); },
      py::arg("advantage"), py::arg("ratio"), py::arg("epsilon") = 0.2);

  // configuration and training
  py::class_<TrainerConfig>(m, "TrainerConfig")
      .def(py::init<>())
      .def_readwrite("epsilon", &TrainerConfig::epsilon)
      .def_readwrite("alpha", &TrainerConfig::alpha)
      .def_readwrite("beta_sup", &TrainerConfig::beta_sup)
      .def_readwrite("gamma", &TrainerConfig::gamma)
      .def_readwrite("num_rectified", &TrainerConfig::num_rectified)
      .def_readwrite("num_normal", &TrainerConfig::num_normal)
      .def_readwrite("kl_coef", &TrainerConfig::kl_coef)
      .def_readwrite("entropy_coef", &TrainerConfig::entropy_coef)
      .def_readwrite("learning_rate", &TrainerConfig::learning_rate)
      .def_readwrite("batch_queries", &TrainerConfig::batch_queries)
      .def_readwrite("max_response_len", &TrainerConfig::max_response_len)
      .def_readwrite("temperature", &TrainerConfig::temperature)
      .def_readwrite("seed", &TrainerConfig::seed)
      .def_readwrite("algorithm", &TrainerConfig::algorithm)
      .def_readwrite("total_steps", &TrainerConfig::total_steps)
      .def_readwrite("num_operands", &TrainerConfig::num_operands)
      .def_readwrite("checkpoint_interval", &TrainerConfig::checkpoint_interval)
      .def_readwrite("threads", &TrainerConfig::threads)
      .def_readwrite("shaping", &TrainerConfig::shaping)
      .def("validate", &TrainerConfig::validate);
  py::class_<WarmupConfig>(m, "WarmupConfig")
      .def(py::init<>())
      .def_readwrite("corpus_size", &WarmupConfig::corpus_size)
      .def_readwrite("loop_bias", &WarmupConfig::loop_bias)
      .def_readwrite("epochs", &WarmupConfig::epochs)
      .def_readwrite("learning_rate", &WarmupConfig::learning_rate)
      .def_readwrite("batch_size", &WarmupConfig::batch_size);
  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_readwrite("warmup", &RunConfig::warmup)
      .def_readwrite("trainer", &RunConfig::trainer)
      .def_readwrite("init_checkpoint", &RunConfig::init_checkpoint)
      .def("validate", &RunConfig::validate)
      .def("to_text", [](const RunConfig& c) { return to_config_text(c); })
      .def_static("from_text", &parse_config, py::arg("text"));
  m.def("load_config", &load_config, py::arg("path"));
  m.def("use_grpo", [](TrainerConfig cfg) {
    use_grpo(cfg);
    return cfg;
  });

  py::class_<SourceBreakdown>(m, "SourceBreakdown")
      .def_readonly("count", &SourceBreakdown::count)
      .def_readonly("mean_reward", &SourceBreakdown::mean_reward)
      .def_readonly("accuracy", &SourceBreakdown::accuracy)
      .def_readonly("mean_len", &SourceBreakdown::mean_len)
      .def_readonly("mean_think_tokens", &SourceBreakdown::mean_think_tokens)
      .def_readonly("trunc_rate", &SourceBreakdown::trunc_rate);
  py::class_<StepMetrics>(m, "StepMetrics")
      .def_readonly("step", &StepMetrics::step)
      .def_readonly("mean_reward", &StepMetrics::mean_reward)
      .def_readonly("accuracy", &StepMetrics::accuracy)
      .def_readonly("mean_len", &StepMetrics::mean_len)
      .def_readonly("mean_think_tokens", &StepMetrics::mean_think_tokens)
      .def_readonly("trunc_rate", &StepMetrics::trunc_rate)
      .def_readonly("objective", &StepMetrics::objective)
      .def_readonly("grad_norm", &StepMetrics::grad_norm)
      .def_readonly("clip_frac", &StepMetrics::clip_frac)
      .def_readonly("rectified", &StepMetrics::rectified)
      .def_readonly("normal", &StepMetrics::normal);

  py::class_<TrainerState>(m, "TrainerState")
      .def(py::init<PolicyParameters>(), py::arg("params"))
      .def_readonly("params", &TrainerState::params)
      .def_readonly("step", &TrainerState::step);
  m.def(
      "train_step",
      [](TrainerState& state, const std::vector<Query>& queries, const TrainerConfig& cfg) {
        py::gil_scoped_release release;
        return train_step(state, queries, cfg, default_think(), nullptr);
      },
      py::arg("state"), py::arg("queries"), py::arg("config"));
  m.def(
      "step_queries", [](const TrainerConfig& cfg, std::uint64_t step) { return step_queries(cfg, step); },
      py::arg("config"), py::arg("step"));
  m.def(
      "warmup_policy",
      [](const RunConfig& cfg) {
        WarmupArtifacts art;
        {
          py::gil_scoped_release release;
          art = build_warmup_policy(cfg);
        }
        return py::make_tuple(art.result.params, art.result.epoch_losses);
      },
      py::arg("config"));
  m.def(
      "run",
      [](const RunConfig& cfg, const PolicyParameters& initial, const std::filesystem::path& out) {
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run(cfg, initial, initial, out);
        }
        return py::make_tuple(r.state.params, r.metrics, r.resumed);
      },
      py::arg("config"), py::arg("initial"), py::arg("output_dir"));

  // analysis
  py::class_<ErrorBreakdown>(m, "ErrorBreakdown")
      .def_readonly("total", &ErrorBreakdown::total)
      .def_readonly("incorrect", &ErrorBreakdown::incorrect)
      .def_readonly("truncated", &ErrorBreakdown::truncated)
      .def_readonly("malformed", &ErrorBreakdown::malformed)
      .def_readonly("wrong_answer", &ErrorBreakdown::wrong_answer);
  py::enum_<EvalMode>(m, "EvalMode")
      .value("Normal", EvalMode::Normal)
      .value("Rectified", EvalMode::Rectified)
      .value("TTP", EvalMode::TTP)
      .value("NoThink", EvalMode::NoThink);
  m.def(
      "evaluate",
      [](const PolicyParameters& p, const std::vector<Query>& queries, EvalMode mode, std::uint64_t seed,
         double temperature, std::size_t max_len, double penalty) {
        EvalOptions opt;
        opt.mode = mode;
        opt.seed = seed;
        opt.temperature = temperature;
        opt.max_len = max_len;
        opt.penalty = penalty;
        EvalResult r;
        {
          py::gil_scoped_release release;
          r = evaluate_policy(p, queries, default_think(), opt);
        }
        return py::make_tuple(r.trajectories, to_json(r.summary).dump());
      },
      py::arg("params"), py::arg("queries"), py::arg("mode") = EvalMode::Normal, py::arg("seed") = 0,
      py::arg("temperature") = 1.0, py::arg("max_len") = 64, py::arg("penalty") = kHardMask);
  m.def(
      "error_breakdown",
      [](const std::vector<Query>& q, const std::vector<Trajectory>& t) { return error_breakdown(q, t); },
      py::arg("queries"), py::arg("trajectories"));
  m.def(
      "probability_profile",
      [](const PolicyParameters& p, const Query& q, const TokenSequence& response) {
        std::vector<py::tuple> rows;
        for (const auto& e : probability_profile(p, q, response, default_think())) {
          rows.push_back(py::make_tuple(e.token, e.prob, e.think_mass));
        }
        return rows;
      },
      py::arg("params"), py::arg("query"), py::arg("response"));
  m.def(
      "insertion_experiment",
      [](const PolicyParameters& p, const std::vector<Query>& q, const std::vector<TokenSequence>& responses,
         std::size_t horizon, std::size_t position) {
        InsertionOptions opt;
        opt.horizon = horizon;
        opt.position = position;
        return to_json(insertion_experiment(p, q, responses, default_think(), opt)).dump();
      },
      py::arg("params"), py::arg("queries"), py::arg("responses"), py::arg("horizon") = 20,
      py::arg("position") = 0);
}
