#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace bgrto {

using Dims = std::vector<std::size_t>;

std::size_t dims_product(const Dims& dims);
std::string dims_to_string(const Dims& dims);

/// Dense row-major array of doubles. A rank-0 tensor holds one value.
class Tensor {
 public:
  Tensor() : values_(1, 0.0) {}
  explicit Tensor(Dims dims, double fill = 0.0);
  Tensor(Dims dims, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor({}, {value}); }
  static Tensor vector(std::vector<double> values);

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::vector<double>& storage() noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  /// Value of a single-element tensor; throws UsageError otherwise.
  double item() const;

  bool all_finite() const noexcept;

  /// Bitwise equality of dims and values (distinguishes -0.0 and NaN payloads).
  bool bit_equal(const Tensor& other) const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Dims dims_;
  std::vector<double> values_;
};

/// Name -> tensor, iterated in lexicographic name order.
using NamedParams = std::map<std::string, Tensor>;

NamedParams zeros_like(const NamedParams& params);
bool bit_equal(const NamedParams& a, const NamedParams& b) noexcept;
std::size_t total_size(const NamedParams& params) noexcept;

/// Global L2 norm across every tensor.
double global_norm(const NamedParams& params) noexcept;

}  // namespace bgrto
