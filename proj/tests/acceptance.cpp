// Acceptance suite: one PASS/FAIL line per criterion; exits nonzero when
// any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
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

using namespace rlhf;
namespace fs = std::filesystem;

namespace {

struct Line {
  bool pass = false;
  std::string detail;
};

fs::path g_root;

fs::path fresh_dir(const std::string& name) {
  auto dir = g_root / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string describe(const VerdictReport& v) {
  std::ostringstream s;
  for (const auto& c : v.checks) {
    s << ' ' << c.name << '=' << format_number(c.measured) << (c.passed ? "" : "(!)");
  }
  return s.str();
}

CommandOutcome run_profile(const std::string& command, const std::string& dir,
                           const std::function<void(ExperimentConfig&)>& tweak = {}) {
  auto cfg = default_config(command);
  if (tweak) tweak(cfg);
  return run_command(command, cfg, fresh_dir(dir));
}

Line verdict_line(const CommandOutcome& out) {
  if (!out.verdict) return {false, "no verdict"};
  return {out.verdict->passed(), describe(*out.verdict)};
}

// Random instance helpers for the identity and gradient checks.
Matrix random_probs(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> logits(cols);
    for (auto& v : logits) v = 2.0 * rng.normal();
    auto p = softmax(logits);
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = p[c];
  }
  return m;
}

PreferenceDataset random_dataset(std::size_t prompts, std::size_t responses, std::size_t n, Rng& rng) {
  PreferenceDataset d(prompts, responses);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t x = rng.below(prompts);
    const std::size_t a = rng.below(responses);
    std::size_t b = rng.below(responses - 1);
    if (b >= a) ++b;
    d.add({x, a, b});
  }
  return d;
}

Line reparameterization_identity() {
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t prompts = 1 + rng.below(6);
    const std::size_t responses = 2 + rng.below(8);
    const auto data = random_dataset(prompts, responses, 1 + rng.below(40), rng);
    const auto ref = Policy::tabular_from_probs(random_probs(prompts, responses, rng));
    auto pi = Policy::tabular(prompts, responses);
    for (auto& v : pi.params().values()) v = 3.0 * rng.normal();
    const double beta = 0.01 + rng.uniform();
    const double a = dpo_loss(pi, ref, data.pairs(), beta);
    const double b = reward_nll_loss(implicit_reward_table(pi, ref, beta), data.pairs());
    worst = std::max(worst, std::abs(a - b));
  }
  return {worst < 1e-12, "max |L_DPO - L_R(f(pi))| = " + format_number(worst)};
}

Line gradient_suite() {
  Rng rng(77);
  std::map<std::string, double> worst;
  auto note = [&](const std::string& name, double err) { worst[name] = std::max(worst[name], err); };

  for (int trial = 0; trial < 5; ++trial) {
    const auto data = random_dataset(4, 6, 30, rng);
    const auto ref = Policy::tabular_from_probs(random_probs(4, 6, rng));

    for (auto rm : {RewardModel::tabular(4, 6), RewardModel::mlp(4, 6, MlpInit{10, 1.0, 0.5}, rng)}) {
      for (auto& v : rm.params().values()) v += 0.2 * rng.normal();
      const auto lg = reward_nll_loss_and_grad(rm, data);
      auto f = [&](const ParamVector& p) {
        RewardModel q = rm;
        q.params() = p;
        return reward_nll_loss(q, data.pairs());
      };
      note("reward_nll", finite_diff_check(f, rm.params(), lg.grad).max_rel_error);
    }

    for (auto pi : {Policy::tabular(4, 6), Policy::mlp(4, 6, MlpInit{10, 1.0, 0.5}, rng)}) {
      for (auto& v : pi.params().values()) v += 0.3 * rng.normal();
      const double beta = 0.1 + rng.uniform();
      const auto lg = dpo_loss_and_grad(pi, ref, data.pairs(), beta);
      auto f = [&](const ParamVector& p) {
        Policy q = pi;
        q.params() = p;
        return dpo_loss(q, ref, data.pairs(), beta);
      };
      note("dpo", finite_diff_check(f, pi.params(), lg.grad).max_rel_error);

      std::vector<Demonstration> demos;
      for (const auto& pr : data.pairs()) demos.push_back({pr.prompt, {static_cast<int>(pr.winner)}, rng.uniform(0.5, 2.0)});
      const auto sg = sft_loss_and_grad(pi, demos);
      auto g = [&](const ParamVector& p) {
        Policy q = pi;
        q.params() = p;
        return sft_loss_and_grad(q, demos).loss;
      };
      note("sft_nll", finite_diff_check(g, pi.params(), sg.grad).max_rel_error);
    }

    // Sequence-level losses on an autoregressive policy.
    auto ar = Policy::autoregressive(2, 3, 3);
    for (auto& v : ar.params().values()) v = 0.5 * rng.normal();
    auto critic = make_critic(ar);
    for (auto& v : critic.params().values()) v = rng.normal();
    std::vector<RolloutSample> batch;
    for (int i = 0; i < 6; ++i) {
      RolloutSample s;
      s.prompt = rng.below(2);
      for (int t = 0; t < 3; ++t) s.response.push_back(static_cast<int>(rng.below(3)));
      std::span<const int> seq = s.response;
      for (std::size_t t = 0; t < seq.size(); ++t) {
        const double lp = ar.log_probs(s.prompt, seq.first(t))[static_cast<std::size_t>(seq[t])];
        s.behavior_logp.push_back(lp + rng.uniform(-0.4, 0.4));
        s.advantages.push_back(rng.normal());
        s.returns.push_back(rng.normal());
        const double v = critic.raw(s.prompt, seq.first(t));
        s.old_raw_values.push_back(v + rng.uniform(-0.5, 0.5));
      }
      batch.push_back(std::move(s));
    }
    const auto pl = ppo_policy_loss(ar, batch, 0.2);
    auto f = [&](const ParamVector& p) {
      Policy q = ar;
      q.params() = p;
      return ppo_policy_loss(q, batch, 0.2).loss;
    };
    note("ppo_surrogate", finite_diff_check(f, ar.params(), pl.grad).max_rel_error);
    const auto vl = ppo_value_loss(critic, batch, 0.2);
    auto g = [&](const ParamVector& p) {
      ValueModel c = critic;
      c.params() = p;
      return ppo_value_loss(c, batch, 0.2).loss;
    };
    note("value_loss", finite_diff_check(g, critic.params(), vl.grad).max_rel_error);
  }
  bool pass = true;
  std::ostringstream s;
  for (const auto& [name, err] : worst) {
    pass = pass && err < 1e-4;
    s << ' ' << name << '=' << format_number(err);
  }
  return {pass, "max rel error:" + s.str()};
}

Line gae_degenerate() {
  Rng rng(5);
  double worst = 0.0;
  RolloutBatch batch;
  for (int ep = 0; ep < 50; ++ep) {
    RolloutSample s;
    const std::size_t len = 1 + rng.below(6);
    s.response.assign(len, 0);
    for (std::size_t t = 0; t < len; ++t) {
      s.rewards.push_back(rng.normal());
      s.values.push_back(rng.normal());
    }
    batch.samples.push_back(s);
  }
  compute_gae(batch, 1.0, 1.0);
  for (const auto& s : batch.samples) {
    for (std::size_t t = 0; t < s.rewards.size(); ++t) {
      double ret = 0.0;
      for (std::size_t k = t; k < s.rewards.size(); ++k) ret += s.rewards[k];
      worst = std::max(worst, std::abs(s.advantages[t] - (ret - s.values[t])));
    }
  }
  normalize_advantages(batch);
  double sum = 0.0;
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto& s : batch.samples) {
    for (double a : s.advantages) {
      sum += a;
      sq += a * a;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  const double sd = std::sqrt(sq / static_cast<double>(n) - mean * mean);
  const bool pass = worst < 1e-12 && std::abs(mean) < 1e-10 && std::abs(sd - 1.0) < 1e-6;
  return {pass, "max |A - (G - V)| = " + format_number(worst) + ", mean " + format_number(mean) + ", std " +
                    format_number(sd)};
}

std::map<std::string, std::string> csv_hashes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".csv") out[e.path().filename().string()] = sha256_file(e.path());
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  g_root = argc > 1 ? fs::path(argv[1]) : fs::current_path() / "acceptance_runs";
  fs::create_directories(g_root);

  int failures = 0;
  auto report = [&](int id, const std::string& name, double limit_s, const std::function<Line()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Line line;
    try {
      line = body();
    } catch (const std::exception& e) {
      line = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = format_number(std::round(secs * 100.0) / 100.0) + " s";
    if (limit_s > 0.0) {
      timing += " (limit " + format_number(limit_s) + " s)";
      if (secs >= limit_s) line.pass = false;
    }
    if (!line.pass) ++failures;
    std::printf("%s criterion %d %s:%s%s [%s]\n", line.pass ? "PASS" : "FAIL", id, name.c_str(),
                line.detail.empty() || line.detail[0] == ' ' ? "" : " ", line.detail.c_str(), timing.c_str());
    std::fflush(stdout);
  };

  report(1, "counterexample", 10.0, [] { return verdict_line(run_profile("verify-theorem", "verify-theorem")); });
  report(2, "reparameterization identity", 1.0, reparameterization_identity);
  report(3, "grid coverage study", 300.0, [] { return verdict_line(run_profile("grid-study", "grid-study")); });
  report(4, "ppo vs closed form", 120.0, [] {
    const auto res = run_oracle_agreement(OracleAgreementConfig{});
    return Line{res.verdict.passed(), describe(res.verdict)};
  });
  report(5, "unbounded ood reward", 30.0, [] {
    auto a = verdict_line(run_profile("ood-divergence", "ood-divergence"));
    auto b = verdict_line(run_profile("ood-divergence", "ood-divergence-100",
                                      [](ExperimentConfig& c) { c.analysis.divergence.threshold = 100.0; }));
    return Line{a.pass && b.pass, " threshold 50:" + a.detail + "; threshold 100:" + b.detail};
  });
  report(6, "gradient suite", 30.0, gradient_suite);
  report(7, "gae degenerate case", 0.0, gae_degenerate);
  report(8, "ppo ablation direction", 900.0, [] { return verdict_line(run_profile("ablate", "ablate")); });
  report(9, "distribution shift", 600.0, [] { return verdict_line(run_profile("dist-shift", "dist-shift")); });
  report(10, "determinism", 0.0, [] {
    std::size_t files = 0;
    std::vector<std::string> mismatched;
    for (const auto& name : command_names()) {
      // The first copy for the long studies comes from criteria 3, 8 and 9.
      const fs::path first = g_root / name;
      if (!fs::exists(first / "manifest.json")) run_profile(name, name);
      run_profile(name, name + "-rerun");
      const auto a = csv_hashes(first);
      const auto b = csv_hashes(g_root / (name + "-rerun"));
      files += a.size();
      if (a != b || a.empty()) mismatched.push_back(name);
    }
    std::string detail = format_number(static_cast<double>(files)) + " metric CSVs over " +
                         format_number(static_cast<double>(command_names().size())) + " subcommands";
    for (const auto& m : mismatched) detail += ", differs: " + m;
    return Line{mismatched.empty(), detail};
  });

  std::printf("%d of 10 criteria failed\n", failures);
  return std::min(failures, 100);
}
