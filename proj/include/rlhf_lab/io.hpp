#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlhf_lab/dpo.hpp"
#include "rlhf_lab/experiments.hpp"
#include "rlhf_lab/models.hpp"
#include "rlhf_lab/ppo.hpp"
#include "rlhf_lab/reward.hpp"
#include "rlhf_lab/spaces.hpp"

namespace rlhf {

using Json = nlohmann::ordered_json;

// Preference datasets: one {"prompt", "winner", "loser"} object per line.
void write_dataset_jsonl(const PreferenceDataset& data, const std::filesystem::path& path);
/// Space sizes are not stored in the file, so the caller supplies them.
PreferenceDataset read_dataset_jsonl(const std::filesystem::path& path, std::size_t num_prompts,
                                     std::size_t num_responses);

Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);

Json policy_to_json(const Policy& p);
Policy policy_from_json(const Json& j);
Json reward_model_to_json(const RewardModel& rm);
RewardModel reward_model_from_json(const Json& j);

Json env_to_json(const BanditEnv& env);
Json env_to_json(const TokenEnv& env);

Json verdict_to_json(const VerdictReport& v);

/// {rows, cols, matrices: {coverage, ref, dpo, ppo, reward}, metadata}
Json heatmap_bundle(const GridSeedResult& seed_result, const Json& metadata);

// CSV writers. Numbers use %.17g so reruns are byte-identical.
std::string format_number(double v);
void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const Json& j);
void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& losses);
void write_dpo_metrics_csv(const std::filesystem::path& path, const std::vector<DpoMetric>& metrics);
void write_ppo_metrics_csv(const std::filesystem::path& path, const std::vector<PpoMetric>& metrics);
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);
void write_divergence_csv(const std::filesystem::path& path, const DivergenceReport& report);

std::string sha256_file(const std::filesystem::path& path);

}  // namespace rlhf
