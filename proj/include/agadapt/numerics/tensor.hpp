#pragma once

#include <cstddef>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace agadapt {

/// Dense row-major tensor of doubles.
///
/// Rank-1 tensors behave as a single row wherever a matrix view is needed,
/// so `rows()` is 1 and `cols()` is the length.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::vector<double> values);
  static Tensor scalar(double value);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  void fill(double v);
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // Bitwise equality (shape and every payload bit).
  bool bit_equal(const Tensor& other) const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// Named tensor with a trainability flag. Frozen parameters are never touched
/// by an optimizer step.
struct Parameter {
  std::string name;
  Tensor value;
  bool trainable = false;
};

/// Ordered parameter collection with unique names.
class ParameterStore {
 public:
  Parameter& add(std::string name, Tensor value, bool trainable);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::vector<Parameter>& items() { return params_; }
  const std::vector<Parameter>& items() const { return params_; }
  std::size_t size() const { return params_.size(); }

  std::size_t count_values(bool trainable_only) const;

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

using GradientStore = std::map<std::string, Tensor>;

// ---- plain (non-recorded) kernels ----

/// Row-wise softmax. Entries equal to -infinity are masked and map to exactly
/// zero. Throws NumericError("degenerate attention row") if a row is fully
/// masked.
Tensor softmax_rows(const Tensor& m);

/// -sum_n log p[n, target_n] for probability rows. Probabilities below 1e-12
/// are clamped, and each clamp increments `clamp_count` when given.
double cross_entropy(const Tensor& probs, std::span<const int> targets,
                     std::size_t* clamp_count = nullptr);

/// Same loss with explicit one-hot target rows.
double cross_entropy_onehot(const Tensor& probs, const Tensor& onehot,
                            std::size_t* clamp_count = nullptr);

inline constexpr double kProbClamp = 1e-12;

}  // namespace agadapt
