#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rlhf_lab/experiments.hpp"
#include "rlhf_lab/io.hpp"

namespace rlhf {

/// Raised for unreadable, malformed, or invalid configuration. field() names
/// the offending key path (e.g. "ppo.kl_coef") when there is one.
class ConfigError : public std::runtime_error {
public:
  ConfigError(const std::string& message, std::string field = {})
      : std::runtime_error(message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

private:
  std::string field_;
};

struct EnvSection {
  std::string kind = "grid";  // grid | counterexample | token
  GridOptions grid;
  double epsilon = 1e-6;
  std::size_t vocab = 4;
  std::size_t max_len = 4;
  std::size_t num_prompts = 4;
  double success_reward = 10.0;
};

struct MethodSection {
  ModelKind policy = ModelKind::Tabular;
  ModelKind reward_model = ModelKind::Tabular;
  MlpInit policy_mlp;
  MlpInit reward_mlp;
  SftConfig sft{5e-2, 300, 64, 0};
  /// Distillation of the MLP reference onto the environment's reference.
  SftConfig distill{1e-2, 1500, 64, 0};
  std::size_t demos_per_prompt = 32;
};

struct DpoSection {
  DpoConfig train;
  std::size_t rounds = 4;
  std::size_t pairs_per_round = 512;
  std::optional<double> winner_floor;
};

struct AnalysisSection {
  double delta = 1e-6;
  double candidate_loss_tolerance = 1e-5;
  double ppo_y3_bound = 1e-3;
  double min_loss_tolerance = 1e-3;
  double dpo_inflation_threshold = 0.05;
  double ppo_leak_threshold = 0.01;
  std::size_t min_diag_argmax = 7;
  std::size_t min_seeds_inflation = 3;
  std::size_t min_seeds_no_leak = 4;
  std::size_t min_seeds_diag = 4;
  DivergenceConfig divergence;
  DivergenceProbe probe{0, 2, 0};
  std::size_t small_batch = 64;
  std::size_t large_batch = 512;
  std::vector<std::size_t> batch_sweep = {64, 128, 256, 512};
  double ema_alpha = 0.995;
};

struct ExperimentConfig {
  EnvSection env;
  MethodSection method;
  PpoConfig ppo;
  DpoSection dpo;
  RewardTrainConfig reward;
  AnalysisSection analysis;
  std::vector<std::uint64_t> seeds = {0};
  std::string output_dir;

  void validate() const;

  // Views consumed by the experiment harnesses.
  CounterexampleConfig counterexample() const;
  GridStudyConfig grid_study() const;
  AblationConfig ablation() const;
  DistShiftConfig dist_shift() const;
};

/// Subcommand names with their own default profile (see README). Any other
/// name, including the empty string, gets the library defaults.
std::vector<std::string> config_profiles();
ExperimentConfig default_config(const std::string& profile = {});

Json config_to_json(const ExperimentConfig& cfg);
/// Overlays j on the profile defaults; unknown keys and wrong types raise
/// ConfigError naming the field, as do out-of-range values.
ExperimentConfig config_from_json(const Json& j, const std::string& profile = {});
/// Parse errors report line and column.
ExperimentConfig parse_config(const std::string& text, const std::string& profile = {});
ExperimentConfig load_config(const std::filesystem::path& path, const std::string& profile = {});

}  // namespace rlhf
