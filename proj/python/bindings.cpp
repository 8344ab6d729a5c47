#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <vector>

#include "rlhf_lab/commands.hpp"
#include "rlhf_lab/config.hpp"
#include "rlhf_lab/dpo.hpp"
#include "rlhf_lab/experiments.hpp"
#include "rlhf_lab/io.hpp"
#include "rlhf_lab/oracles.hpp"
#include "rlhf_lab/ppo.hpp"
#include "rlhf_lab/reward.hpp"

namespace py = pybind11;
using namespace rlhf;

namespace {

using Rows = std::vector<std::vector<double>>;

Rows to_rows(const Matrix& m) {
  Rows out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    out[r].assign(row.begin(), row.end());
  }
  return out;
}

Matrix from_rows(const Rows& rows) {
  const std::size_t cols = rows.empty() ? 0 : rows[0].size();
  Matrix m(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw std::invalid_argument("ragged matrix row " + std::to_string(r));
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = rows[r][c];
  }
  return m;
}

// JSON crosses the boundary as text; the Python package decodes it.
std::string verdict_text(const VerdictReport& v) { return verdict_to_json(v).dump(); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Reward-based and reward-free RLHF on enumerable toy spaces";
  m.attr("__version__") = kVersion;

  py::class_<PreferencePair>(m, "PreferencePair")
      .def(py::init<std::size_t, std::size_t, std::size_t>(), py::arg("prompt"), py::arg("winner"), py::arg("loser"))
      .def_readwrite("prompt", &PreferencePair::prompt)
      .def_readwrite("winner", &PreferencePair::winner)
      .def_readwrite("loser", &PreferencePair::loser)
      .def("__eq__", &PreferencePair::operator==)
      .def("__repr__", [](const PreferencePair& p) {
        return "PreferencePair(" + std::to_string(p.prompt) + ", " + std::to_string(p.winner) + ", " +
               std::to_string(p.loser) + ")";
      });

  py::class_<PreferenceDataset>(m, "PreferenceDataset")
      .def(py::init<std::size_t, std::size_t, std::vector<PreferencePair>>(), py::arg("num_prompts"),
           py::arg("num_responses"), py::arg("pairs") = std::vector<PreferencePair>{})
      .def("add", &PreferenceDataset::add)
      .def_property_readonly("num_prompts", &PreferenceDataset::num_prompts)
      .def_property_readonly("num_responses", &PreferenceDataset::num_responses)
      .def_property_readonly("pairs", &PreferenceDataset::pairs)
      .def_property_readonly("coverage", &PreferenceDataset::coverage)
      .def("covers", &PreferenceDataset::covers)
      .def("uncovered", &PreferenceDataset::uncovered)
      .def("__len__", &PreferenceDataset::size);

  py::class_<BanditEnv>(m, "BanditEnv")
      .def_readonly("num_prompts", &BanditEnv::num_prompts)
      .def_readonly("num_responses", &BanditEnv::num_responses)
      .def_readonly("prompt_distribution", &BanditEnv::prompt_distribution)
      .def_property_readonly("true_reward", [](const BanditEnv& e) { return to_rows(e.true_reward); })
      .def_property_readonly("reference", [](const BanditEnv& e) { return to_rows(e.reference); })
      .def("best_response", &BanditEnv::best_response);

  m.def(
      "make_counterexample",
      [](double eps) {
        auto inst = make_counterexample(eps);
        return py::make_tuple(inst.env, inst.dataset);
      },
      py::arg("ref_smoothing") = 1e-6);
  m.def(
      "make_grid_env",
      [](std::size_t n, std::size_t pairs_per_prompt, std::uint64_t seed, std::size_t diagonal_pairs) {
        GridOptions opts;
        opts.n = n;
        opts.pairs_per_prompt = pairs_per_prompt;
        opts.diagonal_pairs = diagonal_pairs;
        auto inst = make_grid_env(opts, seed);
        return py::make_tuple(inst.env, inst.dataset);
      },
      py::arg("n") = 8, py::arg("pairs_per_prompt") = 3, py::arg("seed") = 0, py::arg("diagonal_pairs") = 3);
  m.def("is_inferable", [](const PreferenceDataset& d, std::size_t prompt, std::size_t a, std::size_t b) {
    return is_inferable(analyze_pref_graph(d), prompt, a, b);
  });

  py::class_<Policy>(m, "Policy")
      .def_static("tabular", &Policy::tabular)
      .def_static("tabular_from_probs", [](const Rows& probs) { return Policy::tabular_from_probs(from_rows(probs)); })
      .def_property_readonly("kind", [](const Policy& p) { return to_string(p.kind()); })
      .def_property_readonly("num_prompts", &Policy::num_prompts)
      .def_property_readonly("num_actions", &Policy::num_actions)
      .def("probs", [](const Policy& p, std::size_t prompt, const Tokens& prefix) { return p.probs(prompt, prefix); },
           py::arg("prompt"), py::arg("prefix") = Tokens{})
      .def("prob_table", [](const Policy& p) { return to_rows(p.prob_table()); })
      .def("to_json", [](const Policy& p) { return policy_to_json(p).dump(); })
      .def_static("from_json", [](const std::string& s) { return policy_from_json(Json::parse(s)); });

  py::class_<RewardModel>(m, "RewardModel")
      .def_static("tabular", &RewardModel::tabular)
      .def("eval", &RewardModel::eval)
      .def("table", [](const RewardModel& rm) { return to_rows(rm.table()); })
      .def("to_json", [](const RewardModel& rm) { return reward_model_to_json(rm).dump(); });

  m.def("reward_nll_loss", [](const Rows& reward, const PreferenceDataset& d) {
    return reward_nll_loss(from_rows(reward), d.pairs());
  });
  m.def("dpo_loss", [](const Policy& pi, const Policy& ref, const PreferenceDataset& d, double beta) {
    return dpo_loss(pi, ref, d.pairs(), beta);
  });
  m.def("implicit_reward_table", [](const Policy& pi, const Policy& ref, double beta) {
    return to_rows(implicit_reward_table(pi, ref, beta));
  });
  m.def("optimal_distribution", [](const Rows& ref, const Rows& reward, double beta) {
    return to_rows(optimal_distribution(from_rows(ref), from_rows(reward), beta));
  });
  m.def("rlhf_objective", [](const Policy& pi, const Policy& ref, const Rows& reward, double beta,
                             const std::vector<double>& prompt_distribution) {
    return rlhf_objective(pi, ref, from_rows(reward), beta, prompt_distribution);
  });

  m.def(
      "train_reward_model",
      [](RewardModel rm, const PreferenceDataset& d, double lr, std::size_t steps, std::size_t batch_size,
         std::uint64_t seed) {
        auto res = train_reward_model(std::move(rm), d, RewardTrainConfig{lr, steps, batch_size, seed});
        return py::make_tuple(res.model, res.losses);
      },
      py::arg("rm"), py::arg("dataset"), py::arg("lr") = 1e-2, py::arg("steps") = 2000, py::arg("batch_size") = 64,
      py::arg("seed") = 0);
  m.def(
      "train_dpo",
      [](Policy policy, const Policy& ref, const PreferenceDataset& d, double beta, double lr, std::size_t steps,
         std::size_t batch_size, std::uint64_t seed) {
        DpoConfig cfg;
        cfg.beta = beta;
        cfg.lr = lr;
        cfg.steps = steps;
        cfg.batch_size = batch_size;
        cfg.seed = seed;
        auto res = train_dpo(std::move(policy), ref, d, cfg);
        std::vector<double> losses;
        for (const auto& mtr : res.metrics) losses.push_back(mtr.loss);
        return py::make_tuple(res.policy, losses);
      },
      py::arg("policy"), py::arg("reference"), py::arg("dataset"), py::arg("beta") = 0.1, py::arg("lr") = 1e-2,
      py::arg("steps") = 1000, py::arg("batch_size") = 64, py::arg("seed") = 0);
  m.def(
      "train_ppo_bandit",
      [](const Policy& reference, const BanditEnv& env, const Rows& reward, double kl_coef, std::size_t iterations,
         std::size_t batch_size, double actor_lr, std::uint64_t seed) {
        PpoConfig cfg;
        cfg.kl_coef = kl_coef;
        cfg.epochs = iterations;
        cfg.batch_size = batch_size;
        cfg.actor_lr = actor_lr;
        cfg.seed = seed;
        auto res = train_ppo(reference, make_critic(reference), reference, bandit_task(env, from_rows(reward)), cfg);
        std::vector<double> objective;
        for (const auto& mtr : res.metrics) objective.push_back(mtr.objective);
        return py::make_tuple(res.policy, objective);
      },
      py::arg("reference"), py::arg("env"), py::arg("reward"), py::arg("kl_coef") = 0.1, py::arg("iterations") = 200,
      py::arg("batch_size") = 512, py::arg("actor_lr") = 1e-2, py::arg("seed") = 0);
  m.def(
      "ood_reward_divergence",
      [](const RewardModel& rm, const PreferenceDataset& d, std::size_t prompt, std::size_t y_prime,
         std::size_t y_star, double threshold, double eps_loss) {
        DivergenceConfig cfg;
        cfg.threshold = threshold;
        cfg.eps_loss = eps_loss;
        auto rep = ood_reward_divergence(rm, d, DivergenceProbe{prompt, y_prime, y_star}, cfg);
        py::dict out;
        out["reached"] = rep.reached;
        out["steps"] = rep.steps;
        out["final_gap"] = rep.final_gap;
        out["final_loss"] = rep.final_loss;
        return out;
      },
      py::arg("rm"), py::arg("dataset"), py::arg("prompt") = 0, py::arg("y_prime") = 2, py::arg("y_star") = 0,
      py::arg("threshold") = 50.0, py::arg("eps_loss") = 0.01);

  m.def("verify_counterexample_json", [] { return verdict_text(verify_counterexample(CounterexampleConfig{}).verdict); });

  m.def("command_names", &command_names);
  m.def(
      "default_config_json", [](const std::string& profile) { return config_to_json(default_config(profile)).dump(); },
      py::arg("profile") = "");
  m.def(
      "run_command_json",
      [](const std::string& name, const std::string& config_text, const std::filesystem::path& out_dir) {
        const auto cfg = parse_config(config_text, name);
        prepare_output_dir(out_dir);
        CommandOutcome out;
        {
          py::gil_scoped_release release;
          out = run_command(name, cfg, out_dir);
        }
        Json j;
        j["command"] = out.command;
        j["ok"] = out.ok;
        j["summary"] = out.summary;
        Json arts = Json::array();
        for (const auto& a : out.artifacts) arts.push_back({{"path", a.path}, {"sha256", a.sha256}});
        j["artifacts"] = arts;
        if (out.verdict) j["verdict"] = verdict_to_json(*out.verdict);
        return j.dump();
      },
      py::arg("name"), py::arg("config_text") = "{}", py::arg("out_dir"));

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
}
