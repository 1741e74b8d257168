#pragma once

// Central finite-difference weights for d2/dx2 and their dispersion error.
//
// Weights come from the Taylor moment system
//     sum_j w_j * j^k = 2 * [k == 2],   k = 0 .. order,   j = -m .. m
// solved exactly over the rationals, then rounded once to double. The phase
// error is evaluated in 50-digit arithmetic from the exact weights so that
// curves stay monotone well below double-precision cancellation.

#include <boost/math/constants/constants.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace fdwave {

using Rational = boost::multiprecision::cpp_rational;
using Real50 = boost::multiprecision::cpp_bin_float_50;

inline constexpr int kMinOrder = 2;
inline constexpr int kMaxOrder = 16;

inline bool is_supported_order(int order) noexcept {
  return order >= kMinOrder && order <= kMaxOrder && order % 2 == 0;
}

inline std::string supported_orders_text() { return "{2, 4, 6, 8, 10, 12, 14, 16}"; }

inline void require_supported_order(int order) {
  if (!is_supported_order(order)) {
    throw InvalidArgument("unsupported stencil order " + std::to_string(order) +
                          "; accepted orders are " + supported_orders_text());
  }
}

/// Symmetric second-derivative stencil of a given even accuracy order.
/// Weights are dimensionless; divide by h^2 when applying.
class StencilCoefficients {
 public:
  StencilCoefficients(int order, std::vector<Rational> exact)
      : order_(order), half_width_(static_cast<std::size_t>(order / 2)), exact_(std::move(exact)) {
    weights_.reserve(exact_.size());
    for (const auto& w : exact_) weights_.push_back(static_cast<double>(w));
  }

  int order() const noexcept { return order_; }
  std::size_t half_width() const noexcept { return half_width_; }

  /// All 2*half_width+1 weights, index 0 is offset -half_width.
  const std::vector<double>& weights() const noexcept { return weights_; }

  /// Weight at signed offset j in [-half_width, half_width].
  double weight(long j) const noexcept {
    return weights_[static_cast<std::size_t>(j + static_cast<long>(half_width_))];
  }

  const Rational& exact_weight(long j) const noexcept {
    return exact_[static_cast<std::size_t>(j + static_cast<long>(half_width_))];
  }

  const std::vector<Rational>& exact_weights() const noexcept { return exact_; }

  /// Sum of |w_j|; the spectral radius bound used for the CFL limit.
  double abs_sum() const noexcept {
    double s = 0.0;
    for (double w : weights_) s += std::abs(w);
    return s;
  }

 private:
  int order_;
  std::size_t half_width_;
  std::vector<Rational> exact_;
  std::vector<double> weights_;
};

namespace detail {

// Gauss-Jordan elimination over the rationals. The moment matrix is a
// Vandermonde matrix in the integer offsets, so pivots are never zero once a
// nonzero row is swapped in.
inline std::vector<Rational> solve_exact(std::vector<std::vector<Rational>> a,
                                         std::vector<Rational> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    while (pivot < n && a[pivot][col] == 0) ++pivot;
    if (pivot == n) throw std::logic_error("singular moment system");
    std::swap(a[pivot], a[col]);
    std::swap(b[pivot], b[col]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col || a[r][col] == 0) continue;
      const Rational f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<Rational> x(n);
  for (std::size_t r = 0; r < n; ++r) x[r] = b[r] / a[r][r];
  return x;
}

}  // namespace detail

/// Exact rational weights for the given order, offsets -order/2 .. order/2.
inline std::vector<Rational> exact_fd_weights(int order) {
  require_supported_order(order);
  const int m = order / 2;
  const std::size_t n = static_cast<std::size_t>(2 * m + 1);
  std::vector<std::vector<Rational>> a(n, std::vector<Rational>(n));
  std::vector<Rational> b(n, Rational(0));
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t c = 0; c < n; ++c) {
      const long j = static_cast<long>(c) - m;
      boost::multiprecision::cpp_int p = 1;
      for (std::size_t e = 0; e < k; ++e) p *= j;
      a[k][c] = Rational(p);
    }
  }
  b[2] = 2;
  return detail::solve_exact(std::move(a), std::move(b));
}

inline StencilCoefficients fd_coefficients(int order) {
  return StencilCoefficients(order, exact_fd_weights(order));
}

struct DispersionPoint {
  int order = 0;
  double points_per_wavelength = 0.0;
  double phase_error = 0.0;
};

namespace detail {

// |1 - S(kh)/(kh)^2| with S(kh) = -sum_j w_j cos(j kh), in 50 digits.
inline Real50 phase_error_50(const StencilCoefficients& coeffs, const Real50& ppw) {
  const Real50 kh = 2 * boost::math::constants::pi<Real50>() / ppw;
  Real50 symbol = 0;
  const long m = static_cast<long>(coeffs.half_width());
  for (long j = -m; j <= m; ++j) {
    symbol -= Real50(coeffs.exact_weight(j)) * cos(Real50(j) * kh);
  }
  return abs(1 - symbol / (kh * kh));
}

}  // namespace detail

inline DispersionPoint phase_error(const StencilCoefficients& coeffs,
                                   double points_per_wavelength) {
  if (!(points_per_wavelength > 2.0) || !std::isfinite(points_per_wavelength)) {
    throw InvalidArgument("points_per_wavelength must be finite and > 2 (Nyquist), got " +
                          std::to_string(points_per_wavelength));
  }
  const Real50 e = detail::phase_error_50(coeffs, Real50(points_per_wavelength));
  return {coeffs.order(), points_per_wavelength, static_cast<double>(e)};
}

inline constexpr double kPpwBracketMax = 1024.0;
inline constexpr double kBisectionRelTol = 1e-6;

/// Smallest points-per-wavelength in (2, 1024] at which the order meets the
/// tolerance, to a relative bracket width of 1e-6.
inline double min_points_per_wavelength(const StencilCoefficients& coeffs, double tolerance) {
  const Real50 tol(tolerance);
  if (detail::phase_error_50(coeffs, Real50(kPpwBracketMax)) > tol) {
    throw UnreachableTolerance("order " + std::to_string(coeffs.order()) +
                               " cannot reach phase error " + std::to_string(tolerance) +
                               " for points_per_wavelength in (2, 1024]");
  }
  double lo = 2.0;
  double hi = kPpwBracketMax;
  while (hi - lo > kBisectionRelTol * hi) {
    const double mid = 0.5 * (lo + hi);
    if (detail::phase_error_50(coeffs, Real50(mid)) <= tol) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

/// Ratio h_b / h_a of the coarsest spacings at which orders b and a reach
/// the same phase-error tolerance.
inline double spacing_gain(int order_a, int order_b, double tolerance) {
  if (!(tolerance > 0.0 && tolerance < 0.5)) {
    throw InvalidArgument("tolerance must lie in (0, 0.5), got " + std::to_string(tolerance));
  }
  const auto a = fd_coefficients(order_a);
  const auto b = fd_coefficients(order_b);
  return min_points_per_wavelength(a, tolerance) / min_points_per_wavelength(b, tolerance);
}

}  // namespace fdwave
