#include "npgrow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace npgrow {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ")";
  return os.str();
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("Tensor::from: " + shape_str(shape) + " does not hold " +
                                std::to_string(values.size()) + " values");
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<std::vector<double>>(std::move(values));
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  if (data_) t.data_ = std::make_shared<std::vector<double>>(*data_);
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != size())
    throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : *data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::min() const { return *std::min_element(data_->begin(), data_->end()); }
double Tensor::max() const { return *std::max_element(data_->begin(), data_->end()); }

double Tensor::sum() const {
  double acc = 0.0;
  for (double v : *data_) acc += v;
  return acc;
}

double Tensor::mean() const { return size() ? sum() / static_cast<double>(size()) : 0.0; }

void Tensor::fill(double value) { std::fill(data_->begin(), data_->end(), value); }

void Tensor::add_(const Tensor& other) {
  if (!same_shape(other)) throw std::invalid_argument("add_: shape mismatch");
  double* a = data();
  const double* b = other.data();
  for (int64_t i = 0; i < size(); ++i) a[i] += b[i];
}

void Tensor::add_scaled_(const Tensor& other, double alpha) {
  if (!same_shape(other)) throw std::invalid_argument("add_scaled_: shape mismatch");
  double* a = data();
  const double* b = other.data();
  for (int64_t i = 0; i < size(); ++i) a[i] += alpha * b[i];
}

void Tensor::scale_(double alpha) {
  for (double& v : *data_) v *= alpha;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace npgrow
