#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfl {

/// Raised when an iterate, gradient or aggregate picks up a NaN or Inf.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense parameter vector shared by models, iterates and control variates.
class ModelVector {
 public:
  ModelVector() = default;
  explicit ModelVector(std::size_t dim, double fill = 0.0) : values_(dim, fill) {}
  ModelVector(std::initializer_list<double> init) : values_(init) {}
  explicit ModelVector(std::vector<double> values) : values_(std::move(values)) {}

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> span() { return values_; }
  std::span<const double> span() const { return values_; }
  const std::vector<double>& values() const { return values_; }

  auto begin() { return values_.begin(); }
  auto end() { return values_.end(); }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  void set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

  // this += a * x
  ModelVector& axpy(double a, const ModelVector& x) {
    require_same_dim(x);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += a * x.values_[i];
    return *this;
  }

  ModelVector& operator+=(const ModelVector& x) { return axpy(1.0, x); }
  ModelVector& operator-=(const ModelVector& x) { return axpy(-1.0, x); }
  ModelVector& operator*=(double a) {
    for (double& v : values_) v *= a;
    return *this;
  }

  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void require_finite(const char* what) const {
    if (!all_finite()) throw NonFiniteError(std::string("non-finite entry in ") + what);
  }

  void require_same_dim(const ModelVector& other) const {
    if (other.size() != size())
      throw DimensionError("dimension mismatch: " + std::to_string(size()) + " vs " +
                           std::to_string(other.size()));
  }

  friend bool operator==(const ModelVector&, const ModelVector&) = default;

 private:
  std::vector<double> values_;
};

inline ModelVector operator+(ModelVector a, const ModelVector& b) { return a += b; }
inline ModelVector operator-(ModelVector a, const ModelVector& b) { return a -= b; }
inline ModelVector operator*(double s, ModelVector a) { return a *= s; }

inline double dot(const ModelVector& a, const ModelVector& b) {
  a.require_same_dim(b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm(const ModelVector& a) { return std::sqrt(dot(a, a)); }

inline double max_abs_diff(const ModelVector& a, const ModelVector& b) {
  a.require_same_dim(b);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace pfl
