#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "rlhf_lab/commands.hpp"

namespace {

std::string default_out(const rlhf::ExperimentConfig& cfg, const std::string& command) {
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* env = std::getenv("RLHF_LAB_OUT"); env != nullptr && *env != '\0') return env;
  return "rlhf-lab-" + command;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rlhf-lab: preference-optimisation experiments on small discrete spaces"};
  app.require_subcommand(1);
  app.set_version_flag("--version", rlhf::kVersion);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool print_config = false;
  const std::map<std::string, std::string> blurbs = {
      {"train-rm", "fit a Bradley-Terry reward model to the preference dataset"},
      {"train-sft", "supervised fine-tuning on the dataset winners"},
      {"train-dpo", "direct preference optimisation from the reference"},
      {"train-dpo-iter", "iterative DPO, re-anchoring the reference each round"},
      {"train-ppo", "PPO against a learned reward (bandit) or the token task"},
      {"verify-theorem", "check the three-response counter-example"},
      {"grid-study", "DPO vs PPO mass on uncovered cells of the grid; heatmap bundles"},
      {"ablate", "PPO technique ablation and batch-size sweep on the token task"},
      {"dist-shift", "DPO vs PPO under a matched or mismatched SFT base"},
      {"ood-divergence", "drive an uncovered reward gap up at fixed preference loss"},
  };
  for (const auto& name : rlhf::command_names()) {
    const auto it = blurbs.find(name);
    auto* sub = app.add_subcommand(name, it == blurbs.end() ? std::string() : it->second);
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--seed", seed, "override the config's seed list with one seed");
    sub->add_option("--out", out_dir, "output directory (default: config output_dir, $RLHF_LAB_OUT, rlhf-lab-<command>)");
    sub->add_flag("--print-config", print_config, "print the resolved config and exit");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  rlhf::ExperimentConfig cfg;
  try {
    cfg = config_path.empty() ? rlhf::default_config(command) : rlhf::load_config(config_path, command);
    if (seed) cfg.seeds = {*seed};
    cfg.validate();
  } catch (const rlhf::ConfigError& e) {
    std::cerr << "rlhf-lab: config error: " << e.what() << '\n';
    return 2;
  }
  if (print_config) {
    std::cout << rlhf::config_to_json(cfg).dump(2) << '\n';
    return 0;
  }

  const std::string out = out_dir.empty() ? default_out(cfg, command) : out_dir;
  try {
    const auto outcome = rlhf::run_command(command, cfg, out);
    for (const auto& line : outcome.summary) std::cout << line << '\n';
    std::cout << "artifacts: " << out << '\n';
    if (!outcome.ok) {
      std::cerr << "rlhf-lab: " << command << ": verdict failed (see " << out << "/verdict.json)\n";
      return 1;
    }
  } catch (const rlhf::ConfigError& e) {
    std::cerr << "rlhf-lab: config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "rlhf-lab: " << command << " failed: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
