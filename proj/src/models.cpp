#include "rlhf_lab/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rlhf {
namespace {

// One-hidden-layer tanh MLP over a sparse multi-hot input. Parameter blocks:
// w1 [hidden x inputs], b1 [hidden], w2 [outputs x hidden], b2 [outputs].
struct Mlp {
  static void init(ParamVector& p, std::size_t inputs, std::size_t hidden, std::size_t outputs,
                   const MlpInit& cfg, Rng& rng) {
    p.add_block("w1", {hidden, inputs});
    p.add_block("b1", {hidden});
    p.add_block("w2", {outputs, hidden});
    p.add_block("b2", {outputs});
    for (auto& w : p.block("w1")) w = cfg.input_scale * rng.normal();
    const double s = cfg.output_scale / std::sqrt(static_cast<double>(hidden));
    for (auto& w : p.block("w2")) w = s * rng.normal();
  }

  static void layout(ParamVector& p, std::size_t inputs, std::size_t hidden, std::size_t outputs) {
    p.add_block("w1", {hidden, inputs});
    p.add_block("b1", {hidden});
    p.add_block("w2", {outputs, hidden});
    p.add_block("b2", {outputs});
  }

  static std::vector<double> hidden_act(const ParamVector& p, std::span<const std::size_t> active) {
    const auto& info = p.block_info("w1");
    const std::size_t hidden = info.dims[0];
    const std::size_t inputs = info.dims[1];
    auto w1 = p.block("w1");
    auto b1 = p.block("b1");
    std::vector<double> h(hidden);
    for (std::size_t j = 0; j < hidden; ++j) {
      double a = b1[j];
      for (std::size_t i : active) a += w1[j * inputs + i];
      h[j] = std::tanh(a);
    }
    return h;
  }

  static std::vector<double> output(const ParamVector& p, std::span<const double> h) {
    const auto& info = p.block_info("w2");
    const std::size_t outputs = info.dims[0];
    const std::size_t hidden = info.dims[1];
    auto w2 = p.block("w2");
    auto b2 = p.block("b2");
    std::vector<double> out(outputs);
    for (std::size_t k = 0; k < outputs; ++k) {
      double a = b2[k];
      for (std::size_t j = 0; j < hidden; ++j) a += w2[k * hidden + j] * h[j];
      out[k] = a;
    }
    return out;
  }

  static void backward(const ParamVector& p, std::span<const std::size_t> active,
                       std::span<const double> h, std::span<const double> dout, ParamVector& grad) {
    const auto& info2 = p.block_info("w2");
    const std::size_t outputs = info2.dims[0];
    const std::size_t hidden = info2.dims[1];
    const std::size_t inputs = p.block_info("w1").dims[1];
    auto w2 = p.block("w2");
    auto gw1 = grad.block("w1");
    auto gb1 = grad.block("b1");
    auto gw2 = grad.block("w2");
    auto gb2 = grad.block("b2");
    std::vector<double> dh(hidden, 0.0);
    for (std::size_t k = 0; k < outputs; ++k) {
      const double d = dout[k];
      if (d == 0.0) continue;
      gb2[k] += d;
      for (std::size_t j = 0; j < hidden; ++j) {
        gw2[k * hidden + j] += d * h[j];
        dh[j] += d * w2[k * hidden + j];
      }
    }
    for (std::size_t j = 0; j < hidden; ++j) {
      const double da = dh[j] * (1.0 - h[j] * h[j]);
      gb1[j] += da;
      for (std::size_t i : active) gw1[j * inputs + i] += da;
    }
  }
};

std::size_t ipow(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < exp; ++i) r *= base;
  return r;
}

// Row of a prefix within one prompt's context table: contexts are ordered by
// prefix length, then lexicographically.
std::size_t prefix_index(std::span<const int> prefix, std::size_t vocab) {
  std::size_t offset = 0;
  for (std::size_t l = 0; l < prefix.size(); ++l) offset += ipow(vocab, l);
  std::size_t code = 0;
  for (int tok : prefix) code = code * vocab + static_cast<std::size_t>(tok);
  return offset + code;
}

std::size_t contexts_for(std::size_t vocab, std::size_t max_len) {
  std::size_t total = 0;
  for (std::size_t l = 0; l < max_len; ++l) total += ipow(vocab, l);
  return total;
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Tabular: return "tabular";
    case ModelKind::Mlp: return "mlp";
    case ModelKind::Autoregressive: return "autoregressive-tabular";
  }
  return "unknown";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "tabular") return ModelKind::Tabular;
  if (name == "mlp") return ModelKind::Mlp;
  if (name == "autoregressive-tabular" || name == "autoregressive") return ModelKind::Autoregressive;
  throw std::invalid_argument("unknown model kind: " + name);
}

Policy Policy::tabular(std::size_t num_prompts, std::size_t num_responses) {
  if (num_prompts == 0 || num_responses == 0) throw std::invalid_argument("empty policy space");
  Policy p;
  p.kind_ = ModelKind::Tabular;
  p.num_prompts_ = num_prompts;
  p.num_actions_ = num_responses;
  p.params_.add_block("logits", {num_prompts, num_responses});
  return p;
}

Policy Policy::tabular_from_probs(const Matrix& probs) {
  Policy p = tabular(probs.rows(), probs.cols());
  auto logits = p.params_.block("logits");
  for (std::size_t i = 0; i < probs.data().size(); ++i) {
    const double v = probs.data()[i];
    if (!(v > 0.0)) {
      throw std::invalid_argument(
          "reference probability is zero; apply epsilon smoothing before building a policy");
    }
    logits[i] = std::log(v);
  }
  return p;
}

Policy Policy::mlp(std::size_t num_prompts, std::size_t num_responses, const MlpInit& init,
                   Rng& rng) {
  if (num_prompts == 0 || num_responses == 0 || init.hidden == 0) {
    throw std::invalid_argument("empty mlp policy");
  }
  Policy p;
  p.kind_ = ModelKind::Mlp;
  p.num_prompts_ = num_prompts;
  p.num_actions_ = num_responses;
  p.hidden_ = init.hidden;
  Mlp::init(p.params_, num_prompts, init.hidden, num_responses, init, rng);
  return p;
}

Policy Policy::autoregressive(std::size_t num_prompts, std::size_t vocab, std::size_t max_len) {
  if (num_prompts == 0 || vocab == 0 || max_len == 0) {
    throw std::invalid_argument("empty autoregressive policy");
  }
  Policy p;
  p.kind_ = ModelKind::Autoregressive;
  p.num_prompts_ = num_prompts;
  p.num_actions_ = vocab;
  p.max_len_ = max_len;
  p.params_.add_block("logits", {num_prompts * contexts_for(vocab, max_len), vocab});
  return p;
}

Policy Policy::from_parts(ModelKind kind, std::size_t num_prompts, std::size_t num_actions,
                          std::size_t max_len, std::size_t hidden, std::vector<double> values) {
  Policy p;
  switch (kind) {
    case ModelKind::Tabular: p = tabular(num_prompts, num_actions); break;
    case ModelKind::Autoregressive: p = autoregressive(num_prompts, num_actions, max_len); break;
    case ModelKind::Mlp:
      p.kind_ = ModelKind::Mlp;
      p.num_prompts_ = num_prompts;
      p.num_actions_ = num_actions;
      p.hidden_ = hidden;
      Mlp::layout(p.params_, num_prompts, hidden, num_actions);
      break;
  }
  if (values.size() != p.params_.size()) throw std::invalid_argument("policy parameter count mismatch");
  std::copy(values.begin(), values.end(), p.params_.values().begin());
  return p;
}

double Policy::support_size() const {
  return std::pow(static_cast<double>(num_actions_), static_cast<double>(max_len_));
}

std::size_t Policy::contexts_per_prompt() const { return contexts_for(num_actions_, max_len_); }

void Policy::check_context(std::size_t prompt, std::span<const int> prefix) const {
  if (prompt >= num_prompts_) throw std::out_of_range("policy prompt index out of range");
  if (prefix.size() >= max_len_) throw std::out_of_range("policy prefix too long");
  for (int tok : prefix) {
    if (tok < 0 || static_cast<std::size_t>(tok) >= num_actions_) {
      throw std::out_of_range("policy token out of range");
    }
  }
}

std::size_t Policy::context_row(std::size_t prompt, std::span<const int> prefix) const {
  return prompt * contexts_per_prompt() + prefix_index(prefix, num_actions_);
}

std::vector<double> Policy::logits(std::size_t prompt, std::span<const int> prefix) const {
  check_context(prompt, prefix);
  if (kind_ == ModelKind::Mlp) {
    const std::size_t active[] = {prompt};
    const auto h = Mlp::hidden_act(params_, active);
    return Mlp::output(params_, h);
  }
  auto table = params_.block("logits");
  const std::size_t row = context_row(prompt, prefix);
  return {table.begin() + static_cast<std::ptrdiff_t>(row * num_actions_),
          table.begin() + static_cast<std::ptrdiff_t>((row + 1) * num_actions_)};
}

std::vector<double> Policy::probs(std::size_t prompt, std::span<const int> prefix) const {
  return softmax(logits(prompt, prefix));
}

std::vector<double> Policy::log_probs(std::size_t prompt, std::span<const int> prefix) const {
  return log_softmax(logits(prompt, prefix));
}

void Policy::backprop_logits(std::size_t prompt, std::span<const int> prefix,
                             std::span<const double> dlogits, ParamVector& grad) const {
  check_context(prompt, prefix);
  if (dlogits.size() != num_actions_) throw std::invalid_argument("dlogits has wrong length");
  if (kind_ == ModelKind::Mlp) {
    const std::size_t active[] = {prompt};
    const auto h = Mlp::hidden_act(params_, active);
    Mlp::backward(params_, active, h, dlogits, grad);
    return;
  }
  auto g = grad.block("logits");
  const std::size_t row = context_row(prompt, prefix);
  for (std::size_t a = 0; a < num_actions_; ++a) g[row * num_actions_ + a] += dlogits[a];
}

Matrix Policy::prob_table() const {
  if (!is_bandit()) throw std::invalid_argument("prob_table needs a bandit policy");
  Matrix m(num_prompts_, num_actions_);
  for (std::size_t x = 0; x < num_prompts_; ++x) {
    const auto p = probs(x, {});
    std::copy(p.begin(), p.end(), m.row(x).begin());
  }
  return m;
}

bool Policy::same_binding(const Policy& other) const {
  return kind_ == other.kind_ && num_prompts_ == other.num_prompts_ &&
         num_actions_ == other.num_actions_ && max_len_ == other.max_len_ &&
         hidden_ == other.hidden_ && params_.same_shape(other.params_);
}

double policy_logprob(const Policy& policy, std::size_t prompt, std::span<const int> response) {
  if (response.size() != policy.max_len()) {
    throw std::out_of_range("response length does not match the policy");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < response.size(); ++t) {
    const auto lp = policy.log_probs(prompt, response.first(t));
    const int tok = response[t];
    if (tok < 0 || static_cast<std::size_t>(tok) >= policy.num_actions()) {
      throw std::out_of_range("response token out of range");
    }
    total += lp[static_cast<std::size_t>(tok)];
  }
  return total;
}

double policy_logprob(const Policy& policy, std::size_t prompt, std::size_t response) {
  const int tok[] = {static_cast<int>(response)};
  return policy_logprob(policy, prompt, tok);
}

void accumulate_logprob_grad(const Policy& policy, std::size_t prompt,
                             std::span<const int> response, double scale, ParamVector& grad) {
  for (std::size_t t = 0; t < response.size(); ++t) {
    auto d = policy.probs(prompt, response.first(t));
    for (auto& v : d) v *= -scale;
    d[static_cast<std::size_t>(response[t])] += scale;
    policy.backprop_logits(prompt, response.first(t), d, grad);
  }
}

Tokens policy_sample(const Policy& policy, std::size_t prompt, double temperature,
                     std::size_t top_k, Rng& rng) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (top_k == 0) throw std::invalid_argument("top_k must be at least 1");
  const std::size_t k = std::min(top_k, policy.num_actions());
  Tokens out;
  out.reserve(policy.max_len());
  std::vector<std::size_t> order(policy.num_actions());
  for (std::size_t t = 0; t < policy.max_len(); ++t) {
    auto z = policy.logits(prompt, out);
    for (auto& v : z) v /= temperature;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
    std::vector<double> kept(k);
    for (std::size_t i = 0; i < k; ++i) kept[i] = z[order[i]];
    const auto p = softmax(kept);
    out.push_back(static_cast<int>(order[rng.categorical(p)]));
  }
  return out;
}

void for_each_response(const Policy& policy, std::size_t prompt,
                       const std::function<void(std::span<const int>, double)>& visit,
                       double max_count) {
  if (policy.support_size() > max_count) {
    throw std::runtime_error("response space too large to enumerate");
  }
  Tokens prefix;
  std::function<void(double)> rec = [&](double lp) {
    if (prefix.size() == policy.max_len()) {
      visit(prefix, lp);
      return;
    }
    const auto lps = policy.log_probs(prompt, prefix);
    for (std::size_t a = 0; a < lps.size(); ++a) {
      prefix.push_back(static_cast<int>(a));
      rec(lp + lps[a]);
      prefix.pop_back();
    }
  };
  rec(0.0);
}

KlEstimate policy_kl(const Policy& p, const Policy& q, std::size_t prompt, const KlOptions& opts) {
  if (p.num_prompts() != q.num_prompts() || p.num_actions() != q.num_actions() ||
      p.max_len() != q.max_len()) {
    throw std::invalid_argument("policy_kl: policies bind different spaces");
  }
  KlEstimate est;
  if (p.support_size() <= opts.enumeration_budget) {
    double kl = 0.0;
    for_each_response(
        p, prompt,
        [&](std::span<const int> seq, double lp) {
          kl += std::exp(lp) * (lp - policy_logprob(q, prompt, seq));
        },
        opts.enumeration_budget);
    est.value = kl;
    return est;
  }
  if (!opts.allow_monte_carlo) {
    throw std::runtime_error("policy_kl: enumeration budget exceeded and Monte Carlo disabled");
  }
  Rng rng(opts.mc_seed);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < opts.mc_samples; ++i) {
    const auto seq = policy_sample(p, prompt, 1.0, p.num_actions(), rng);
    const double d = policy_logprob(p, prompt, seq) - policy_logprob(q, prompt, seq);
    sum += d;
    sum_sq += d * d;
  }
  const double n = static_cast<double>(opts.mc_samples);
  est.value = sum / n;
  const double var = std::max(0.0, sum_sq / n - est.value * est.value);
  est.std_error = std::sqrt(var / n);
  est.exact = false;
  return est;
}

double implicit_reward(const Policy& policy, const Policy& reference, std::size_t prompt,
                       std::span<const int> response, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  return beta * (policy_logprob(policy, prompt, response) -
                 policy_logprob(reference, prompt, response));
}

double implicit_reward(const Policy& policy, const Policy& reference, std::size_t prompt,
                       std::size_t response, double beta) {
  const int tok[] = {static_cast<int>(response)};
  return implicit_reward(policy, reference, prompt, tok, beta);
}

Policy ema_blend(const Policy& reference, const Policy& online, double alpha) {
  if (!reference.same_binding(online)) throw std::invalid_argument("ema_blend: policy kind mismatch");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("ema_blend: alpha outside [0, 1]");
  Policy out = reference;
  auto dst = out.params().values();
  auto src = online.params().values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = alpha * dst[i] + (1.0 - alpha) * src[i];
  return out;
}

double policy_entropy(const Policy& policy, std::size_t prompt) {
  double h = 0.0;
  for_each_response(policy, prompt, [&](std::span<const int>, double lp) { h -= std::exp(lp) * lp; });
  return h;
}

// ---------------------------------------------------------------------------

RewardModel RewardModel::tabular(std::size_t num_prompts, std::size_t num_responses) {
  if (num_prompts == 0 || num_responses == 0) throw std::invalid_argument("empty reward space");
  RewardModel rm;
  rm.kind_ = ModelKind::Tabular;
  rm.num_prompts_ = num_prompts;
  rm.num_responses_ = num_responses;
  rm.params_.add_block("table", {num_prompts, num_responses});
  return rm;
}

RewardModel RewardModel::mlp(std::size_t num_prompts, std::size_t num_responses,
                             const MlpInit& init, Rng& rng) {
  if (num_prompts == 0 || num_responses == 0 || init.hidden == 0) {
    throw std::invalid_argument("empty reward mlp");
  }
  RewardModel rm;
  rm.kind_ = ModelKind::Mlp;
  rm.num_prompts_ = num_prompts;
  rm.num_responses_ = num_responses;
  rm.hidden_ = init.hidden;
  Mlp::init(rm.params_, num_prompts + num_responses, init.hidden, 1, init, rng);
  return rm;
}

RewardModel RewardModel::from_parts(ModelKind kind, std::size_t num_prompts,
                                    std::size_t num_responses, std::size_t hidden,
                                    std::vector<double> values) {
  RewardModel rm;
  if (kind == ModelKind::Tabular) {
    rm = tabular(num_prompts, num_responses);
  } else if (kind == ModelKind::Mlp) {
    rm.kind_ = ModelKind::Mlp;
    rm.num_prompts_ = num_prompts;
    rm.num_responses_ = num_responses;
    rm.hidden_ = hidden;
    Mlp::layout(rm.params_, num_prompts + num_responses, hidden, 1);
  } else {
    throw std::invalid_argument("reward models are tabular or mlp");
  }
  if (values.size() != rm.params_.size()) throw std::invalid_argument("reward parameter count mismatch");
  std::copy(values.begin(), values.end(), rm.params_.values().begin());
  return rm;
}

void RewardModel::check(std::size_t prompt, std::size_t response) const {
  if (prompt >= num_prompts_ || response >= num_responses_) {
    throw std::out_of_range("reward model index out of range");
  }
}

double RewardModel::eval(std::size_t prompt, std::size_t response) const {
  check(prompt, response);
  if (kind_ == ModelKind::Tabular) return params_.block("table")[prompt * num_responses_ + response];
  const std::size_t active[] = {prompt, num_prompts_ + response};
  const auto h = Mlp::hidden_act(params_, active);
  return Mlp::output(params_, h)[0];
}

void RewardModel::backprop(std::size_t prompt, std::size_t response, double dout,
                           ParamVector& grad) const {
  check(prompt, response);
  if (kind_ == ModelKind::Tabular) {
    grad.block("table")[prompt * num_responses_ + response] += dout;
    return;
  }
  const std::size_t active[] = {prompt, num_prompts_ + response};
  const auto h = Mlp::hidden_act(params_, active);
  const double d[] = {dout};
  Mlp::backward(params_, active, h, d, grad);
}

Matrix RewardModel::table() const {
  Matrix m(num_prompts_, num_responses_);
  for (std::size_t x = 0; x < num_prompts_; ++x) {
    for (std::size_t y = 0; y < num_responses_; ++y) m(x, y) = eval(x, y);
  }
  return m;
}

double reward_eval(const RewardModel& rm, std::size_t prompt, std::size_t response) {
  return rm.eval(prompt, response);
}

double bt_prob(const RewardModel& rm, std::size_t prompt, std::size_t winner, std::size_t loser) {
  return sigmoid(rm.eval(prompt, winner) - rm.eval(prompt, loser));
}

// ---------------------------------------------------------------------------

void RunningNorm::update(std::span<const double> batch) {
  if (batch.empty()) return;
  const double n = static_cast<double>(batch.size());
  double m = 0.0;
  for (double v : batch) m += v;
  m /= n;
  double s = 0.0;
  for (double v : batch) s += (v - m) * (v - m);
  s /= n;
  if (count == 0.0) {
    mean = m;
    var = s;
    count = n;
    return;
  }
  const double total = count + n;
  const double delta = m - mean;
  const double merged = (var * count + s * n + delta * delta * count * n / total) / total;
  mean += delta * n / total;
  var = merged;
  count = total;
}

double RunningNorm::std() const { return std::sqrt(std::max(var, 0.0)) + 1e-8; }

ValueModel ValueModel::tabular(std::size_t num_prompts, std::size_t vocab, std::size_t max_len) {
  if (num_prompts == 0 || vocab == 0 || max_len == 0) throw std::invalid_argument("empty value model");
  ValueModel v;
  v.kind_ = ModelKind::Tabular;
  v.num_prompts_ = num_prompts;
  v.vocab_ = vocab;
  v.max_len_ = max_len;
  v.params_.add_block("table", {num_prompts * contexts_for(vocab, max_len)});
  return v;
}

ValueModel ValueModel::mlp(std::size_t num_prompts, std::size_t max_len, const MlpInit& init,
                           Rng& rng) {
  if (num_prompts == 0 || max_len == 0 || init.hidden == 0) throw std::invalid_argument("empty value mlp");
  ValueModel v;
  v.kind_ = ModelKind::Mlp;
  v.num_prompts_ = num_prompts;
  v.max_len_ = max_len;
  v.hidden_ = init.hidden;
  const std::size_t inputs = num_prompts + (max_len > 1 ? max_len : 0);
  Mlp::init(v.params_, inputs, init.hidden, 1, init, rng);
  return v;
}

std::size_t ValueModel::row(std::size_t prompt, std::span<const int> prefix) const {
  if (prompt >= num_prompts_ || prefix.size() >= max_len_) {
    throw std::out_of_range("value model context out of range");
  }
  return prompt * contexts_for(vocab_, max_len_) + prefix_index(prefix, vocab_);
}

double ValueModel::raw(std::size_t prompt, std::span<const int> prefix) const {
  if (kind_ == ModelKind::Tabular) return params_.block("table")[row(prompt, prefix)];
  if (prompt >= num_prompts_ || prefix.size() >= max_len_) {
    throw std::out_of_range("value model context out of range");
  }
  std::vector<std::size_t> active = {prompt};
  if (max_len_ > 1) active.push_back(num_prompts_ + prefix.size());
  const auto h = Mlp::hidden_act(params_, active);
  return Mlp::output(params_, h)[0];
}

double ValueModel::value(std::size_t prompt, std::span<const int> prefix) const {
  const double r = raw(prompt, prefix);
  return normalized ? norm.denormalize(r) : r;
}

void ValueModel::backprop(std::size_t prompt, std::span<const int> prefix, double dout,
                          ParamVector& grad) const {
  if (kind_ == ModelKind::Tabular) {
    grad.block("table")[row(prompt, prefix)] += dout;
    return;
  }
  std::vector<std::size_t> active = {prompt};
  if (max_len_ > 1) active.push_back(num_prompts_ + prefix.size());
  const auto h = Mlp::hidden_act(params_, active);
  const double d[] = {dout};
  Mlp::backward(params_, active, h, d, grad);
}

}  // namespace rlhf
