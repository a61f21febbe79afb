#include "bgrto/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

#include "bgrto/errors.hpp"

namespace bgrto {

std::size_t dims_product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string dims_to_string(const Dims& dims) {
  std::string out = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(dims[i]);
  }
  return out + "]";
}

Tensor::Tensor(Dims dims, double fill)
    : dims_(std::move(dims)), values_(dims_product(dims_), fill) {
  for (auto d : dims_) {
    if (d == 0) throw StructuralError("tensor dims must be positive, got " + dims_to_string(dims_));
  }
}

Tensor::Tensor(Dims dims, std::vector<double> values)
    : dims_(std::move(dims)), values_(std::move(values)) {
  for (auto d : dims_) {
    if (d == 0) throw StructuralError("tensor dims must be positive, got " + dims_to_string(dims_));
  }
  if (dims_product(dims_) != values_.size()) {
    throw StructuralError("tensor dims " + dims_to_string(dims_) + " do not match " +
                          std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::vector(std::vector<double> values) {
  Dims dims{values.size()};
  return Tensor(std::move(dims), std::move(values));
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw UsageError("item() on tensor with dims " + dims_to_string(dims_));
  }
  return values_[0];
}

bool Tensor::all_finite() const noexcept {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::bit_equal(const Tensor& other) const noexcept {
  return dims_ == other.dims_ && values_.size() == other.values_.size() &&
         (values_.empty() ||
          std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(double)) == 0);
}

NamedParams zeros_like(const NamedParams& params) {
  NamedParams out;
  for (const auto& [name, t] : params) out.emplace(name, Tensor(t.dims(), 0.0));
  return out;
}

bool bit_equal(const NamedParams& a, const NamedParams& b) noexcept {
  if (a.size() != b.size()) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first || !ia->second.bit_equal(ib->second)) return false;
  }
  return true;
}

std::size_t total_size(const NamedParams& params) noexcept {
  std::size_t n = 0;
  for (const auto& [_, t] : params) n += t.size();
  return n;
}

double global_norm(const NamedParams& params) noexcept {
  double sq = 0.0;
  for (const auto& [_, t] : params) {
    for (double v : t.values()) sq += v * v;
  }
  return std::sqrt(sq);
}

}  // namespace bgrto
