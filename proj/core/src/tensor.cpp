// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#include "dcp/tensor.hpp"

#include <cmath>
#include <sstream>

#include "dcp/errors.hpp"

namespace dcp {

std::string Shape::str() const {
  std::ostringstream os;
  os << "[" << extents[0] << "," << extents[1] << "," << extents[2] << "," << extents[3] << "]";
  return os.str();
}

Tensor Tensor::zeros(const Shape& s) {
  for (auto e : s.extents) {
    if (e < 0) throw ShapeError("negative extent in shape " + s.str());
  }
  auto st = std::make_shared<Storage>();
  st->shape = s;
  st->values.assign(static_cast<std::size_t>(s.numel()), 0.0);
  return Tensor(std::move(st));
}

Tensor Tensor::full(const Shape& s, double value) {
  Tensor t = zeros(s);
  for (auto& v : t.values()) v = value;
  return t;
}

Tensor Tensor::from(const Shape& s, std::vector<double> values) {
  if (static_cast<std::int64_t>(values.size()) != s.numel()) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + s.str());
  }
  auto st = std::make_shared<Storage>();
  st->shape = s;
  st->values = std::move(values);
  return Tensor(std::move(st));
}

Tensor::Storage& Tensor::storage() {
  if (!data_) throw ShapeError("use of undefined tensor");
  return *data_;
}

const Tensor::Storage& Tensor::storage() const {
  if (!data_) throw ShapeError("use of undefined tensor");
  return *data_;
}

const Shape& Tensor::shape() const { return storage().shape; }

std::span<double> Tensor::values() { return storage().values; }
std::span<const double> Tensor::values() const { return storage().values; }

double& Tensor::at(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) {
  const Shape& s = shape();
  return storage().values[static_cast<std::size_t>(((i * s[1] + j) * s[2] + k) * s[3] + l)];
}

double Tensor::at(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) const {
  const Shape& s = shape();
  return storage().values[static_cast<std::size_t>(((i * s[1] + j) * s[2] + k) * s[3] + l)];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
  return storage().values[0];
}

bool Tensor::requires_grad() const { return storage().requires_grad; }
void Tensor::set_requires_grad(bool b) { storage().requires_grad = b; }

bool Tensor::has_grad() const { return !storage().grad.empty(); }

std::span<double> Tensor::grad() {
  auto& st = storage();
  if (st.grad.empty()) throw ShapeError("grad slot not populated");
  return st.grad;
}

std::span<const double> Tensor::grad() const {
  const auto& st = storage();
  if (st.grad.empty()) throw ShapeError("grad slot not populated");
  return st.grad;
}

void Tensor::ensure_zero_grad() {
  auto& st = storage();
  st.grad.assign(st.values.size(), 0.0);
}

void Tensor::clear_grad() { storage().grad.clear(); }

Tensor Tensor::clone() const {
  const auto& st = storage();
  Tensor out = Tensor::from(st.shape, st.values);
  out.set_requires_grad(st.requires_grad);
  return out;
}

void check_finite(const Tensor& t, const char* what) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value in ") + what);
    }
  }
}

}  // namespace dcp
