#include "rlhf_lab/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rlhf {

std::size_t ParamBlock::size() const {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t ParamVector::add_block(std::string name, std::vector<std::size_t> dims) {
  for (const auto& b : blocks_) {
    if (b.name == name) throw std::invalid_argument("duplicate parameter block: " + name);
  }
  ParamBlock block{std::move(name), std::move(dims), values_.size()};
  values_.resize(values_.size() + block.size(), 0.0);
  blocks_.push_back(std::move(block));
  return blocks_.back().offset;
}

const ParamBlock& ParamVector::block_info(const std::string& name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) return b;
  }
  throw std::out_of_range("no parameter block named " + name);
}

std::span<double> ParamVector::block(const std::string& name) {
  const auto& b = block_info(name);
  return {values_.data() + b.offset, b.size()};
}

std::span<const double> ParamVector::block(const std::string& name) const {
  const auto& b = block_info(name);
  return {values_.data() + b.offset, b.size()};
}

ParamVector ParamVector::zeros_like() const {
  ParamVector out = *this;
  std::fill(out.values_.begin(), out.values_.end(), 0.0);
  return out;
}

bool ParamVector::same_shape(const ParamVector& other) const {
  return values_.size() == other.values_.size() && blocks_ == other.blocks_;
}

bool ParamVector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void ParamVector::scale(double s) {
  for (auto& v : values_) v *= s;
}

void ParamVector::axpy(double s, const ParamVector& other) {
  if (!same_shape(other)) throw std::invalid_argument("axpy: parameter shape mismatch");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += s * other.values_[i];
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax of empty sequence");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (auto& p : out) p /= total;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("log_softmax of empty sequence");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - mx);
  const double lse = mx + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) {
  // log σ(x) = min(x, 0) - log1p(exp(-|x|))
  return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x)));
}

void adam_step(ParamVector& params, const ParamVector& grad, AdamState& state,
               const AdamConfig& cfg) {
  if (!params.same_shape(grad)) throw std::invalid_argument("adam_step: gradient shape mismatch");
  if (!(cfg.lr > 0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  const std::size_t n = params.size();
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  if (state.m.size() != n || state.v.size() != n) {
    throw std::invalid_argument("adam_step: optimizer state shape mismatch");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

GradCheckReport finite_diff_check(const LossFn& loss_fn, const ParamVector& params,
                                  const ParamVector& analytic_grad, double h) {
  if (!(h > 0)) throw std::invalid_argument("finite_diff_check: h must be positive");
  if (!params.same_shape(analytic_grad)) {
    throw std::invalid_argument("finite_diff_check: gradient shape mismatch");
  }
  GradCheckReport report;
  ParamVector probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = loss_fn(probe);
    probe[i] = orig - h;
    const double down = loss_fn(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::runtime_error("finite_diff_check: non-finite loss when probing coordinate " +
                               std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = analytic_grad[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    const double rel = std::abs(analytic - numeric) / denom;
    if (i == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_coordinate = i;
      report.analytic = analytic;
      report.numeric = numeric;
    }
  }
  return report;
}

}  // namespace rlhf
