#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rlhf_lab/commands.hpp"
#include "rlhf_lab/config.hpp"
#include "rlhf_lab/io.hpp"

using namespace rlhf;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("rlhf_lab_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("config round trip") {
  for (const auto& profile : config_profiles()) {
    auto cfg = default_config(profile);
    auto j = config_to_json(cfg);
    auto back = config_from_json(j, profile);
    CHECK(config_to_json(back) == j);
  }
}

TEST_CASE("config overlays user values") {
  auto cfg = parse_config(R"({"ppo": {"kl_coef": 0.25, "iterations": 7}, "seeds": [3, 4]})");
  CHECK(cfg.ppo.kl_coef == 0.25);
  CHECK(cfg.ppo.epochs == 7);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{3, 4});
}

TEST_CASE("config errors name the field") {
  try {
    parse_config(R"({"ppo": {"klcoef": 0.1}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("ppo.klcoef") != std::string::npos);
  }
  try {
    parse_config(R"({"ppo": {"kl_coef": -1}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "ppo.kl_coef");
  }
  try {
    parse_config(R"({"ppo": {"kl_coef": "high"}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "ppo.kl_coef");
  }
  try {
    parse_config("{\n  \"ppo\": {,\n}");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("dataset jsonl round trip and errors") {
  auto dir = scratch_dir("jsonl");
  auto inst = make_grid_env(GridOptions{}, 0);
  write_dataset_jsonl(inst.dataset, dir / "d.jsonl");
  CHECK(read_dataset_jsonl(dir / "d.jsonl", 8, 8) == inst.dataset);

  write_text(dir / "bad.jsonl", "{\"prompt\": 0, \"winner\": 1, \"loser\": 2}\n{\"prompt\": 0, \"winner\": -1}\n");
  try {
    read_dataset_jsonl(dir / "bad.jsonl", 8, 8);
    FAIL("expected error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("bad.jsonl:2") != std::string::npos);
  }
}

TEST_CASE("model serialisation round trip") {
  Rng rng(0);
  auto p = Policy::mlp(3, 5, MlpInit{6, 1.0, 0.3}, rng);
  auto q = policy_from_json(Json::parse(policy_to_json(p).dump()));
  CHECK(q.params() == p.params());
  CHECK(q.probs(1, {}) == p.probs(1, {}));
  auto ar = Policy::autoregressive(2, 3, 2);
  CHECK(policy_from_json(policy_to_json(ar)).support_size() == 9.0);
  auto rm = RewardModel::mlp(3, 5, MlpInit{4, 1.0, 0.3}, rng);
  CHECK(reward_model_from_json(reward_model_to_json(rm)).table() == rm.table());
}

TEST_CASE("format_number is round-trip exact") {
  CHECK(format_number(0.1) == "0.10000000000000001");
  CHECK(std::stod(format_number(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("sha256 of a known string") {
  auto dir = scratch_dir("sha");
  write_text(dir / "abc.txt", "abc");
  CHECK(sha256_file(dir / "abc.txt") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("commands write a manifest and are deterministic") {
  auto cfg = default_config("train-rm");
  cfg.reward.steps = 50;
  cfg.seeds = {2};
  auto a = scratch_dir("cmd_a");
  auto b = scratch_dir("cmd_b");
  auto out_a = run_command("train-rm", cfg, a);
  auto out_b = run_command("train-rm", cfg, b);
  CHECK(out_a.ok);
  REQUIRE(fs::exists(a / "manifest.json"));
  auto manifest = Json::parse(slurp(a / "manifest.json"));
  CHECK(manifest["command"] == "train-rm");
  CHECK(manifest["version"] == kVersion);
  REQUIRE(out_a.artifacts.size() == out_b.artifacts.size());
  for (std::size_t i = 0; i < out_a.artifacts.size(); ++i) {
    CHECK(out_a.artifacts[i].path == out_b.artifacts[i].path);
    CHECK(out_a.artifacts[i].sha256 == out_b.artifacts[i].sha256);
  }
  CHECK(slurp(a / "reward_loss.csv").rfind("step,loss\n", 0) == 0);
  CHECK_THROWS_AS(run_command("no-such-command", cfg, a), ConfigError);
  CHECK_THROWS(prepare_output_dir(a / "missing" / "deeper"));
}
