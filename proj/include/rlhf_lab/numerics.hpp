#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace rlhf {

/// Dense row-major matrix of doubles. Used for reward tables, probability
/// tables and exported heatmaps.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool operator==(const Matrix&) const = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct ParamBlock {
  std::string name;
  std::vector<std::size_t> dims;
  std::size_t offset = 0;

  std::size_t size() const;
  bool operator==(const ParamBlock&) const = default;
};

/// Flat parameter storage with named logical blocks. Every trainable model
/// (policy logits, MLP weights, reward tables) lives in one of these so the
/// optimizer and the gradient checker can treat them uniformly.
class ParamVector {
public:
  ParamVector() = default;

  /// Appends a zero-initialised block and returns its offset.
  std::size_t add_block(std::string name, std::vector<std::size_t> dims);

  std::size_t size() const { return values_.size(); }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ParamBlock& block_info(const std::string& name) const;

  std::span<double> block(const std::string& name);
  std::span<const double> block(const std::string& name) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  /// Same block layout, all values zero.
  ParamVector zeros_like() const;
  bool same_shape(const ParamVector& other) const;
  bool all_finite() const;

  void scale(double s);
  /// this += s * other
  void axpy(double s, const ParamVector& other);

  bool operator==(const ParamVector&) const = default;

private:
  std::vector<double> values_;
  std::vector<ParamBlock> blocks_;
};

/// Max-subtracted softmax. Throws std::invalid_argument on empty input.
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

double sigmoid(double x);
/// log(sigmoid(x)) evaluated without overflow or -inf for finite x.
double log_sigmoid(double x);

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

/// One bias-corrected Adam update in place. The state is lazily sized on the
/// first call. Throws std::invalid_argument when shapes disagree.
void adam_step(ParamVector& params, const ParamVector& grad, AdamState& state,
               const AdamConfig& cfg);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_coordinate = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

using LossFn = std::function<double(const ParamVector&)>;

/// Central-difference gradient check over every coordinate. The relative
/// error divides by max(|analytic|, |numeric|, 1e-6), so coordinates with no
/// gradient are judged on absolute error instead of round-off.
GradCheckReport finite_diff_check(const LossFn& loss_fn, const ParamVector& params,
                                  const ParamVector& analytic_grad, double h = 1e-5);

}  // namespace rlhf
