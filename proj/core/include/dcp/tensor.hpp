// Copyright 2026 The DCP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dcp {

/// Extents of a dense rank-4 array in (N, C, H, W) order. Lower-rank data
/// is stored with trailing singleton extents.
struct Shape {
  std::array<std::int64_t, 4> extents{0, 0, 0, 0};

  constexpr Shape() = default;
  constexpr Shape(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w)
      : extents{n, c, h, w} {}

  std::int64_t operator[](int i) const { return extents[static_cast<std::size_t>(i)]; }
  std::int64_t n() const { return extents[0]; }
  std::int64_t c() const { return extents[1]; }
  std::int64_t h() const { return extents[2]; }
  std::int64_t w() const { return extents[3]; }

  std::int64_t numel() const { return extents[0] * extents[1] * extents[2] * extents[3]; }

  bool operator==(const Shape&) const = default;

  std::string str() const;
};

/// Dense 64-bit tensor with an optional gradient slot. The handle has
/// shared-storage semantics: copies alias the same values/grad buffers,
/// which is what parameter sharing between a network, a tape and an
/// optimizer requires. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& s);
  static Tensor full(const Shape& s, double value);
  static Tensor from(const Shape& s, std::vector<double> values);
  static Tensor scalar(double value) { return full(Shape(1, 1, 1, 1), value); }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const;
  std::int64_t numel() const { return shape().numel(); }

  std::span<double> values();
  std::span<const double> values() const;

  double& at(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l);
  double at(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) const;

  /// Value of a single-element tensor; throws ShapeError otherwise.
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool b);

  bool has_grad() const;
  std::span<double> grad();
  std::span<const double> grad() const;
  /// Allocates (if needed) and zero-fills the grad slot.
  void ensure_zero_grad();
  void clear_grad();

  /// Deep copy of values; grad slot not copied.
  Tensor clone() const;

  /// Storage identity, used by the tape to recognize tensors.
  const void* id() const { return data_.get(); }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until requested
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> data_;

  explicit Tensor(std::shared_ptr<Storage> s) : data_(std::move(s)) {}
  Storage& storage();
  const Storage& storage() const;
};

/// Throws NumericError if any entry is NaN or infinite.
void check_finite(const Tensor& t, const char* what);

}  // namespace dcp
