#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace npgrow {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

// Dense row-major tensor of doubles. Copies share the underlying buffer;
// use clone() for an independent copy. Graph values are written once at
// creation and treated as read-only afterwards.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(shape_numel(shape_), 0.0)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from(Shape shape, std::vector<double> values);

  bool defined() const { return data_ != nullptr; }
  int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }

  double& operator[](int64_t i) { return (*data_)[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }

  // 2-d / 3-d convenience accessors.
  double& at(int i, int j) { return (*data_)[static_cast<size_t>(i) * dim(1) + j]; }
  double at(int i, int j) const { return (*data_)[static_cast<size_t>(i) * dim(1) + j]; }
  double& at(int c, int i, int j) {
    return (*data_)[(static_cast<size_t>(c) * dim(1) + i) * dim(2) + j];
  }
  double at(int c, int i, int j) const {
    return (*data_)[(static_cast<size_t>(c) * dim(1) + i) * dim(2) + j];
  }

  Tensor clone() const;
  // Shares the buffer under a new shape of identical element count.
  Tensor reshaped(Shape shape) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  double min() const;
  double max() const;
  double sum() const;
  double mean() const;

  void fill(double value);
  void add_(const Tensor& other);          // in place, same shape
  void add_scaled_(const Tensor& other, double alpha);
  void scale_(double alpha);

  bool shares_buffer(const Tensor& other) const { return data_ == other.data_; }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace npgrow
