#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace fdwave {

struct Index3 {
  std::size_t i = 0;
  std::size_t j = 0;
  std::size_t k = 0;

  friend bool operator==(const Index3&, const Index3&) = default;
};

/// Regular 3D grid. Cell (i, j, k) sits at (i*dx, j*dy, k*dz); x is the
/// fastest-varying axis in memory, then y, then z.
struct Grid {
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::size_t nz = 0;
  double dx = 1.0;
  double dy = 1.0;
  double dz = 1.0;

  std::size_t cells() const noexcept { return nx * ny * nz; }

  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return i + nx * (j + ny * k);
  }

  std::size_t index(const Index3& c) const noexcept { return index(c.i, c.j, c.k); }

  bool contains(const Index3& c) const noexcept {
    return c.i < nx && c.j < ny && c.k < nz;
  }

  bool same_shape(const Grid& o) const noexcept {
    return nx == o.nx && ny == o.ny && nz == o.nz;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

  void validate() const {
    if (nx == 0 || ny == 0 || nz == 0) {
      throw InvalidArgument("grid dimensions must be positive");
    }
    if (!(dx > 0.0) || !(dy > 0.0) || !(dz > 0.0) || !std::isfinite(dx) ||
        !std::isfinite(dy) || !std::isfinite(dz)) {
      throw InvalidArgument("grid spacings must be positive and finite");
    }
  }

  /// Throws unless every axis holds at least one full stencil.
  void require_stencil(std::size_t half_width) const {
    validate();
    const std::size_t need = 2 * half_width + 1;
    if (nx < need || ny < need || nz < need) {
      throw InvalidArgument("grid " + std::to_string(nx) + "x" +
                            std::to_string(ny) + "x" + std::to_string(nz) +
                            " is too small for a stencil of half width " +
                            std::to_string(half_width) + " (need >= " +
                            std::to_string(need) + " cells per axis)");
    }
  }
};

/// Dense scalar volume on a Grid. Used for pressure (WaveField) and
/// propagation speed (VelocityModel).
template <typename T>
class Field {
 public:
  using value_type = T;

  Field() = default;
  explicit Field(const Grid& grid, T fill = T(0))
      : grid_(grid), values_(grid.cells(), fill) {}
  Field(const Grid& grid, std::vector<T> values) : grid_(grid), values_(std::move(values)) {
    if (values_.size() != grid_.cells()) {
      throw InvalidArgument("field value count " + std::to_string(values_.size()) +
                            " does not match grid cell count " +
                            std::to_string(grid_.cells()));
    }
  }

  const Grid& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return values_.size(); }

  T& operator()(std::size_t i, std::size_t j, std::size_t k) noexcept {
    return values_[grid_.index(i, j, k)];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const noexcept {
    return values_[grid_.index(i, j, k)];
  }
  T& operator[](std::size_t n) noexcept { return values_[n]; }
  const T& operator[](std::size_t n) const noexcept { return values_[n]; }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  bool all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  T max_abs() const noexcept {
    T m = T(0);
    for (T v : values_) m = std::max(m, std::abs(v));
    return m;
  }

  template <typename U>
  Field<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    return Field<U>(grid_, std::move(out));
  }

  friend bool operator==(const Field&, const Field&) = default;

 private:
  Grid grid_{};
  std::vector<T> values_;
};

template <typename T>
using WaveField = Field<T>;

template <typename T>
using VelocityModel = Field<T>;

/// Throws unless every speed is positive and finite.
template <typename T>
void validate_velocity(const VelocityModel<T>& v) {
  for (T s : v.values()) {
    if (!(s > T(0)) || !std::isfinite(s)) {
      throw InvalidArgument("velocity values must be positive and finite");
    }
  }
}

/// Infinity-norm of (a - b) divided by the infinity-norm of b.
template <typename T>
double relative_inf_error(const Field<T>& a, const Field<T>& b) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n) {
    num = std::max(num, std::abs(static_cast<double>(a[n]) - static_cast<double>(b[n])));
    den = std::max(den, std::abs(static_cast<double>(b[n])));
  }
  return den > 0.0 ? num / den : num;
}

}  // namespace fdwave
