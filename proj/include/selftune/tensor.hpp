#ifndef SELFTUNE_TENSOR_HPP
#define SELFTUNE_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "selftune/errors.hpp"

namespace selftune {

// Dense row-major tensor of doubles.  Ranks 1..4 are used in practice
// (vectors, matrices, NCHW image stacks).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(checked_size(shape_), fill) {}

  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_size(shape_)) {
      throw ShapeError("Tensor: data length " + std::to_string(data_.size()) +
                       " does not match shape volume " +
                       std::to_string(checked_size(shape_)));
    }
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  static std::size_t checked_size(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw ShapeError("Tensor: non-positive extent in shape");
      n *= static_cast<std::size_t>(d);
    }
    return shape.empty() ? 0 : n;
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

// A scalar carrying a forward-mode tangent: value plus directional
// derivative with respect to the single meta-parameter.
struct DualScalar {
  double v = 0.0;
  double t = 0.0;

  DualScalar() = default;
  DualScalar(double value, double tangent) : v(value), t(tangent) {}
  static DualScalar constant(double value) { return DualScalar(value, 0.0); }
};

inline DualScalar operator+(DualScalar a, DualScalar b) {
  return {a.v + b.v, a.t + b.t};
}
inline DualScalar operator-(DualScalar a, DualScalar b) {
  return {a.v - b.v, a.t - b.t};
}
inline DualScalar operator-(DualScalar a) { return {-a.v, -a.t}; }
inline DualScalar operator*(DualScalar a, DualScalar b) {
  return {a.v * b.v, a.t * b.v + a.v * b.t};
}
inline DualScalar operator/(DualScalar a, DualScalar b) {
  const double inv = 1.0 / b.v;
  return {a.v * inv, (a.t - a.v * inv * b.t) * inv};
}
inline DualScalar operator*(double a, DualScalar b) { return {a * b.v, a * b.t}; }
inline DualScalar operator*(DualScalar a, double b) { return {a.v * b, a.t * b}; }
inline DualScalar operator+(DualScalar a, double b) { return {a.v + b, a.t}; }
inline DualScalar operator+(double a, DualScalar b) { return {a + b.v, b.t}; }
inline DualScalar operator-(DualScalar a, double b) { return {a.v - b, a.t}; }
inline DualScalar operator-(double a, DualScalar b) { return {a - b.v, -b.t}; }

inline DualScalar exp(DualScalar a) {
  const double e = std::exp(a.v);
  return {e, e * a.t};
}
inline DualScalar log(DualScalar a) { return {std::log(a.v), a.t / a.v}; }
inline DualScalar sqrt(DualScalar a) {
  const double s = std::sqrt(a.v);
  return {s, a.t / (2.0 * s)};
}
inline DualScalar sigmoid(DualScalar a) {
  const double s = 1.0 / (1.0 + std::exp(-a.v));
  return {s, s * (1.0 - s) * a.t};
}
// Integer power by repeated squaring; keeps gamma^k exact and cheap.
inline DualScalar pow_int(DualScalar base, int n) {
  DualScalar acc(1.0, 0.0);
  DualScalar b = base;
  int k = n;
  while (k > 0) {
    if (k & 1) acc = acc * b;
    b = b * b;
    k >>= 1;
  }
  return acc;
}

// A tensor with an optional forward-mode tangent of identical shape.
// Tangent-free tensors behave exactly like plain tensors: no kernel ever
// reads a tangent to produce a value.
struct DualTensor {
  Tensor value;
  std::optional<Tensor> tangent;

  DualTensor() = default;
  explicit DualTensor(Tensor v) : value(std::move(v)) {}
  DualTensor(Tensor v, Tensor t) : value(std::move(v)), tangent(std::move(t)) {
    if (!value.same_shape(*tangent)) {
      throw ShapeError("DualTensor: tangent shape " + tangent->shape_str() +
                       " does not match value shape " + value.shape_str());
    }
  }

  bool has_tangent() const { return tangent.has_value(); }

  // Drops the tangent channel; used to freeze a value against the
  // meta-parameter (e.g. a bootstrap target).
  DualTensor values_only() const { return DualTensor(value); }

  const Tensor& tangent_or_zeros() const {
    static const Tensor kEmpty;
    return tangent ? *tangent : kEmpty;
  }
};

}  // namespace selftune

#endif
