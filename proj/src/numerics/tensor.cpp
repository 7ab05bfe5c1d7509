#include "agadapt/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "agadapt/error.hpp"

namespace agadapt {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw NumericError("tensor dimensions must be positive: " + shape_string(shape_));
  }
  data_.assign(product(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw NumericError("tensor dimensions must be positive: " + shape_string(shape_));
  }
  if (data_.size() != product(shape_)) {
    throw NumericError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Tensor({rows, cols}, fill);
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw NumericError("from_rows: no rows");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw NumericError("from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, std::vector<double>{value}); }

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? 1 : shape_[0];
}

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool Tensor::bit_equal(const Tensor& other) const {
  return shape_ == other.shape_ &&
         std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Parameter& ParameterStore::add(std::string name, Tensor value, bool trainable) {
  if (index_.count(name)) throw NumericError("duplicate parameter name: " + name);
  index_[name] = params_.size();
  params_.push_back(Parameter{std::move(name), std::move(value), trainable});
  return params_.back();
}

Parameter& ParameterStore::at(const std::string& name) {
  auto* p = find(name);
  if (!p) throw NumericError("unknown parameter: " + name);
  return *p;
}

const Parameter& ParameterStore::at(const std::string& name) const {
  const auto* p = find(name);
  if (!p) throw NumericError("unknown parameter: " + name);
  return *p;
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

std::size_t ParameterStore::count_values(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (!trainable_only || p.trainable) n += p.value.size();
  }
  return n;
}

Tensor softmax_rows(const Tensor& m) {
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  Tensor out = m;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.ptr() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, row[c]);
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw NumericError("degenerate attention row");
    }
    if (!std::isfinite(mx)) throw NumericError("softmax_rows: non-finite input");
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = row[c] == -std::numeric_limits<double>::infinity() ? 0.0 : std::exp(row[c] - mx);
      sum += row[c];
    }
    const double inv = 1.0 / sum;
    for (std::size_t c = 0; c < cols; ++c) row[c] *= inv;
  }
  return out;
}

double cross_entropy(const Tensor& probs, std::span<const int> targets, std::size_t* clamp_count) {
  if (targets.size() != probs.rows()) throw NumericError("cross_entropy: target count mismatch");
  double loss = 0.0;
  for (std::size_t n = 0; n < targets.size(); ++n) {
    const int t = targets[n];
    if (t < 0 || static_cast<std::size_t>(t) >= probs.cols()) {
      throw NumericError("cross_entropy: target index out of range");
    }
    double p = probs(n, static_cast<std::size_t>(t));
    if (p < kProbClamp) {
      p = kProbClamp;
      if (clamp_count) ++*clamp_count;
    }
    loss -= std::log(p);
  }
  return loss;
}

double cross_entropy_onehot(const Tensor& probs, const Tensor& onehot, std::size_t* clamp_count) {
  if (!probs.same_shape(onehot)) throw NumericError("cross_entropy: shape mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (onehot[i] == 0.0) continue;
    double p = probs[i];
    if (p < kProbClamp) {
      p = kProbClamp;
      if (clamp_count) ++*clamp_count;
    }
    loss -= onehot[i] * std::log(p);
  }
  return loss;
}

}  // namespace agadapt
