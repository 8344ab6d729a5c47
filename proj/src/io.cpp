#include "rlhf_lab/io.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rlhf {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<double> flat(const ParamVector& p) { return {p.values().begin(), p.values().end()}; }

}  // namespace

void write_dataset_jsonl(const PreferenceDataset& data, const fs::path& path) {
  auto out = open_out(path);
  for (const auto& p : data.pairs()) {
    Json j;
    j["prompt"] = p.prompt;
    j["winner"] = p.winner;
    j["loser"] = p.loser;
    out << j.dump() << '\n';
  }
  finish(out, path);
}

PreferenceDataset read_dataset_jsonl(const fs::path& path, std::size_t num_prompts,
                                     std::size_t num_responses) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  PreferenceDataset data(num_prompts, num_responses);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    for (const char* key : {"prompt", "winner", "loser"}) {
      if (!j.contains(key) || !j[key].is_number_unsigned()) {
        throw std::runtime_error(where + ": field '" + key + "' must be a nonnegative integer");
      }
    }
    try {
      data.add({j["prompt"].get<std::size_t>(), j["winner"].get<std::size_t>(), j["loser"].get<std::size_t>()});
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
  }
  return data;
}

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j) {
  if (!j.is_array()) throw std::invalid_argument("matrix must be an array of rows");
  const std::size_t rows = j.size();
  const std::size_t cols = rows ? j[0].size() : 0;
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw std::invalid_argument("ragged matrix row " + std::to_string(r));
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

Json policy_to_json(const Policy& p) {
  Json j;
  j["kind"] = to_string(p.kind());
  if (p.is_bandit()) {
    j["binding"] = {{"num_prompts", p.num_prompts()}, {"num_responses", p.num_actions()}};
  } else {
    j["binding"] = {{"num_prompts", p.num_prompts()}, {"vocab_size", p.num_actions()}, {"max_len", p.max_len()}};
  }
  j["hidden"] = p.hidden();
  j["params"] = flat(p.params());
  return j;
}

Policy policy_from_json(const Json& j) {
  const auto kind = model_kind_from_string(j.at("kind").get<std::string>());
  const auto& b = j.at("binding");
  const std::size_t prompts = b.at("num_prompts").get<std::size_t>();
  std::size_t actions = 0;
  std::size_t max_len = 1;
  if (kind == ModelKind::Autoregressive) {
    actions = b.at("vocab_size").get<std::size_t>();
    max_len = b.at("max_len").get<std::size_t>();
  } else {
    actions = b.at("num_responses").get<std::size_t>();
  }
  return Policy::from_parts(kind, prompts, actions, max_len, j.value("hidden", std::size_t{0}),
                            j.at("params").get<std::vector<double>>());
}

Json reward_model_to_json(const RewardModel& rm) {
  Json j;
  j["kind"] = to_string(rm.kind());
  j["binding"] = {{"num_prompts", rm.num_prompts()}, {"num_responses", rm.num_responses()}};
  j["hidden"] = rm.hidden();
  j["params"] = flat(rm.params());
  return j;
}

RewardModel reward_model_from_json(const Json& j) {
  const auto& b = j.at("binding");
  return RewardModel::from_parts(model_kind_from_string(j.at("kind").get<std::string>()),
                                 b.at("num_prompts").get<std::size_t>(), b.at("num_responses").get<std::size_t>(),
                                 j.value("hidden", std::size_t{0}), j.at("params").get<std::vector<double>>());
}

Json env_to_json(const BanditEnv& env) {
  Json j;
  j["type"] = "bandit";
  j["num_prompts"] = env.num_prompts;
  j["num_responses"] = env.num_responses;
  j["prompt_distribution"] = env.prompt_distribution;
  j["true_reward"] = matrix_to_json(env.true_reward);
  j["reference"] = matrix_to_json(env.reference);
  return j;
}

Json env_to_json(const TokenEnv& env) {
  Json j;
  j["type"] = "token";
  j["vocab_size"] = env.vocab_size;
  j["max_len"] = env.max_len;
  j["num_prompts"] = env.num_prompts;
  j["success_reward"] = env.success_reward;
  j["targets"] = env.targets;
  return j;
}

Json verdict_to_json(const VerdictReport& v) {
  Json j;
  j["name"] = v.name;
  j["passed"] = v.passed();
  Json checks = Json::array();
  for (const auto& c : v.checks) {
    checks.push_back({{"name", c.name}, {"passed", c.passed}, {"measured", c.measured}, {"threshold", c.threshold}});
  }
  j["checks"] = checks;
  return j;
}

Json heatmap_bundle(const GridSeedResult& s, const Json& metadata) {
  Json j;
  j["rows"] = s.coverage.rows();
  j["cols"] = s.coverage.cols();
  j["matrices"] = {{"coverage", matrix_to_json(s.coverage)},
                   {"ref", matrix_to_json(s.reference)},
                   {"dpo", matrix_to_json(s.dpo)},
                   {"ppo", matrix_to_json(s.ppo)},
                   {"reward", matrix_to_json(s.reward)}};
  Json meta = metadata;
  meta["seed"] = s.seed;
  meta["max_dpo_inflation"] = s.max_dpo_inflation;
  meta["max_ppo_leak"] = s.max_ppo_leak;
  meta["ppo_diag_argmax"] = s.ppo_diag_argmax;
  j["metadata"] = meta;
  return j;
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  finish(out, path);
}

void write_json(const fs::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

void write_loss_csv(const fs::path& path, const std::vector<double>& losses) {
  std::ostringstream s;
  s << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) s << i + 1 << ',' << format_number(losses[i]) << '\n';
  write_text(path, s.str());
}

void write_dpo_metrics_csv(const fs::path& path, const std::vector<DpoMetric>& metrics) {
  std::ostringstream s;
  s << "step,loss,J,ood_mass\n";
  for (const auto& m : metrics) {
    s << m.step << ',' << format_number(m.loss) << ',' << format_number(m.objective) << ','
      << format_number(m.ood_mass) << '\n';
  }
  write_text(path, s.str());
}

void write_ppo_metrics_csv(const fs::path& path, const std::vector<PpoMetric>& metrics) {
  std::ostringstream s;
  s << "iteration,mean_reward,J_exact,kl,entropy,clip_fraction\n";
  for (const auto& m : metrics) {
    s << m.iteration << ',' << format_number(m.mean_reward) << ',' << format_number(m.objective) << ','
      << format_number(m.kl) << ',' << format_number(m.entropy) << ',' << format_number(m.clip_fraction) << '\n';
  }
  write_text(path, s.str());
}

void write_ablation_csv(const fs::path& path, const std::vector<AblationRow>& rows) {
  std::ostringstream s;
  s << "variant,seed,final_reward,J\n";
  for (const auto& r : rows) {
    s << r.variant << ',' << r.seed << ',' << format_number(r.final_reward) << ',' << format_number(r.objective)
      << '\n';
  }
  write_text(path, s.str());
}

void write_divergence_csv(const fs::path& path, const DivergenceReport& report) {
  std::ostringstream s;
  s << "step,gap,loss\n";
  for (std::size_t i = 0; i < report.gaps.size(); ++i) {
    s << i << ',' << format_number(report.gaps[i]) << ',' << format_number(report.losses[i]) << '\n';
  }
  write_text(path, s.str());
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha256 init failed");
  }
  std::array<char, 1 << 14> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string outs;
  for (unsigned int i = 0; i < len; ++i) {
    outs += hex[digest[i] >> 4];
    outs += hex[digest[i] & 0xf];
  }
  return outs;
}

}  // namespace rlhf
