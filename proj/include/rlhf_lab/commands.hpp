#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rlhf_lab/config.hpp"

namespace rlhf {

inline constexpr const char* kVersion = "0.1.0";

struct Artifact {
  std::string path;  // relative to the output directory
  std::string sha256;
};

struct CommandOutcome {
  std::string command;
  /// False when the command ran but a verdict it checks did not hold.
  bool ok = true;
  std::vector<std::string> summary;  // human-readable lines
  std::vector<Artifact> artifacts;   // excludes the manifest itself
  std::optional<VerdictReport> verdict;
};

std::vector<std::string> command_names();

/// Creates out_dir when its parent exists; throws otherwise.
void prepare_output_dir(const std::filesystem::path& out_dir);

/// Runs one subcommand, writes its artifacts plus config.json and
/// manifest.json into out_dir. Unknown names raise ConfigError.
CommandOutcome run_command(const std::string& name, const ExperimentConfig& cfg,
                           const std::filesystem::path& out_dir);

/// Manifest: resolved config, seeds, version, wall-clock, artifact hashes.
Json make_manifest(const ExperimentConfig& cfg, const CommandOutcome& outcome, double wall_clock_seconds);
void write_manifest(const ExperimentConfig& cfg, const CommandOutcome& outcome, double wall_clock_seconds,
                    const std::filesystem::path& path);

}  // namespace rlhf
