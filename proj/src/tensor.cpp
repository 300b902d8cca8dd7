#include "partseg/tensor.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <sstream>

namespace partseg {

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  std::int64_t n = 1;
  for (int d : shape_) {
    if (d <= 0) throw ShapeMismatch("tensor dimension must be positive, got " + shape_str());
    n *= d;
  }
  data_.assign(static_cast<std::size_t>(n), 0.0);
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data) {
  Tensor t(std::move(shape));
  if (t.data_.size() != data.size())
    throw ShapeMismatch("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + t.shape_str());
  t.data_ = std::move(data);
  return t;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::min() const {
  return data_.empty() ? std::numeric_limits<double>::quiet_NaN()
                       : *std::min_element(data_.begin(), data_.end());
}

double Tensor::max() const {
  return data_.empty() ? std::numeric_limits<double>::quiet_NaN()
                       : *std::max_element(data_.begin(), data_.end());
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ',';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeMismatch(std::string(op) + ": shapes differ, " + a.shape_str() + " vs " +
                        b.shape_str());
}

std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

}  // namespace partseg
