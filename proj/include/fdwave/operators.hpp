#pragma once

// 3D Laplacian with zero-Dirichlet exterior, computed one axis at a time.
//
// The x and y passes run under one of three strategies:
//   DirectStencil  paired symmetric stencil  w0*f + sum_j w_j*(f[-j] + f[+j])
//   BandMatMul     dense band-diagonal matrix product over block_size tiles,
//                  skipping operator blocks that are entirely zero
//   Conv1D         1D correlation of each line with the weight vector
// The z pass is always the paired element-wise stencil.
//
// Per-cell summation order is fixed by the strategy alone (never by tiling or
// thread count), so results are reproducible bit for bit. The three axis
// contributions are added smallest-first after sorting, which makes the
// result invariant under axis permutations on cubic grids.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#if defined(__SSE__) || defined(_M_X64)
#include <xmmintrin.h>
#endif

#include "errors.hpp"
#include "grid.hpp"
#include "stencil.hpp"

namespace fdwave {

enum class Strategy { DirectStencil, BandMatMul, Conv1D };

enum class Precision { Full, ReducedEmulated };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::DirectStencil: return "direct";
    case Strategy::BandMatMul: return "matmul";
    case Strategy::Conv1D: return "conv";
  }
  throw InvalidArgument("unknown strategy");
}

inline Strategy parse_strategy(const std::string& name) {
  if (name == "direct" || name == "DirectStencil") return Strategy::DirectStencil;
  if (name == "matmul" || name == "BandMatMul") return Strategy::BandMatMul;
  if (name == "conv" || name == "Conv1D") return Strategy::Conv1D;
  throw InvalidArgument("unknown strategy '" + name + "'; expected direct, matmul or conv");
}

inline std::string to_string(Precision p) {
  return p == Precision::Full ? "full" : "reduced";
}

inline Precision parse_precision(const std::string& name) {
  if (name == "full") return Precision::Full;
  if (name == "reduced" || name == "reduced-emulated") return Precision::ReducedEmulated;
  throw InvalidArgument("unknown precision '" + name + "'; expected full or reduced");
}

/// Smallest multiple of block_size that is >= n.
inline std::size_t pad_to_block(std::size_t n, std::size_t block_size) {
  if (n == 0 || block_size == 0) {
    throw InvalidArgument("pad_to_block needs n >= 1 and block_size >= 1");
  }
  return (n + block_size - 1) / block_size * block_size;
}

/// Round to an 8-bit significand (round half to even), keeping the exponent
/// range of T. For float this is exactly bfloat16 rounding.
template <typename T>
T round_to_8bit_mantissa(T x) {
  if (x == T(0) || !std::isfinite(x)) return x;
  int e = 0;
  const T m = std::frexp(x, &e);  // |m| in [0.5, 1)
  return std::ldexp(std::nearbyint(std::ldexp(m, 8)), e - 8);
}

/// Constant band-diagonal second-difference operator, zero padded to a
/// multiple of the block size. Unscaled: divide by h^2 when applying.
template <typename T>
class BandMatrix {
 public:
  BandMatrix() = default;

  BandMatrix(const StencilCoefficients& coeffs, std::size_t n_logical, std::size_t block_size,
             Precision precision = Precision::Full)
      : n_logical_(n_logical), block_size_(block_size), bandwidth_(coeffs.half_width()) {
    if (block_size == 0) throw InvalidArgument("block_size must be >= 1");
    if (n_logical < 2 * bandwidth_ + 1) {
      throw InvalidArgument("axis length " + std::to_string(n_logical) +
                            " is too small for band half width " + std::to_string(bandwidth_));
    }
    n_padded_ = pad_to_block(n_logical, block_size);
    entries_.assign(n_padded_ * n_padded_, T(0));
    const long bw = static_cast<long>(bandwidth_);
    for (std::size_t r = 0; r < n_logical_; ++r) {
      for (long j = -bw; j <= bw; ++j) {
        const long c = static_cast<long>(r) + j;
        if (c < 0 || c >= static_cast<long>(n_logical_)) continue;
        T w = static_cast<T>(coeffs.weight(j));
        if (precision == Precision::ReducedEmulated) w = round_to_8bit_mantissa(w);
        entries_[r * n_padded_ + static_cast<std::size_t>(c)] = w;
      }
    }
    // Block sparsity is a property of the band alone.
    const std::size_t nb = n_padded_ / block_size_;
    block_range_.resize(nb);
    for (std::size_t bi = 0; bi < nb; ++bi) {
      std::size_t lo = nb;
      std::size_t hi = 0;
      for (std::size_t bk = 0; bk < nb; ++bk) {
        if (block_nonzero(bi, bk)) {
          lo = std::min(lo, bk);
          hi = std::max(hi, bk);
        }
      }
      block_range_[bi] = lo == nb ? std::pair<std::size_t, std::size_t>{1, 0}
                                  : std::pair<std::size_t, std::size_t>{lo, hi};
    }
  }

  std::size_t n_logical() const noexcept { return n_logical_; }
  std::size_t n_padded() const noexcept { return n_padded_; }
  std::size_t block_size() const noexcept { return block_size_; }
  std::size_t bandwidth() const noexcept { return bandwidth_; }
  std::size_t blocks_per_axis() const noexcept { return n_padded_ / block_size_; }

  T entry(std::size_t r, std::size_t c) const noexcept { return entries_[r * n_padded_ + c]; }
  const T* row(std::size_t r) const noexcept { return entries_.data() + r * n_padded_; }

  /// Inclusive range of block columns holding nonzeros in block row bi;
  /// first > second when the block row is empty (pure padding).
  std::pair<std::size_t, std::size_t> block_columns(std::size_t bi) const noexcept {
    return block_range_[bi];
  }

  std::size_t nonzero_blocks() const noexcept {
    std::size_t n = 0;
    for (const auto& [lo, hi] : block_range_) n += lo <= hi ? hi - lo + 1 : 0;
    return n;
  }

  /// Number of diagonals carrying at least one nonzero entry.
  std::size_t nonzero_diagonals() const {
    std::size_t n = 0;
    for (long d = -static_cast<long>(n_padded_) + 1; d < static_cast<long>(n_padded_); ++d) {
      for (std::size_t r = 0; r < n_padded_; ++r) {
        const long c = static_cast<long>(r) + d;
        if (c < 0 || c >= static_cast<long>(n_padded_)) continue;
        if (entries_[r * n_padded_ + static_cast<std::size_t>(c)] != T(0)) {
          ++n;
          break;
        }
      }
    }
    return n;
  }

 private:
  bool block_nonzero(std::size_t bi, std::size_t bk) const noexcept {
    // Rows [r0, r1) and columns [c0, c1) intersect the band of logical cells.
    const std::size_t r0 = bi * block_size_;
    const std::size_t r1 = std::min(r0 + block_size_, n_logical_);
    const std::size_t c0 = bk * block_size_;
    const std::size_t c1 = std::min(c0 + block_size_, n_logical_);
    if (r0 >= r1 || c0 >= c1) return false;
    // Closest pair distance between the two index intervals.
    const std::size_t gap = c0 >= r1 ? c0 - (r1 - 1) : (r0 >= c1 ? r0 - (c1 - 1) : 0);
    return gap <= bandwidth_;
  }

  std::size_t n_logical_ = 0;
  std::size_t n_padded_ = 0;
  std::size_t block_size_ = 1;
  std::size_t bandwidth_ = 0;
  std::vector<T> entries_;
  std::vector<std::pair<std::size_t, std::size_t>> block_range_;
};

template <typename T = float>
BandMatrix<T> build_band_matrix(const StencilCoefficients& coeffs, std::size_t n_logical,
                                std::size_t block_size) {
  return BandMatrix<T>(coeffs, n_logical, block_size);
}

namespace detail {

// Flush-to-zero and denormals-are-zero for the calling thread while in scope.
// Decaying wavefronts otherwise fill the domain with subnormal values.
class FlushDenormals {
 public:
#if defined(__SSE__) || defined(_M_X64)
  FlushDenormals() noexcept : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~FlushDenormals() { _mm_setcsr(saved_); }
#else
  FlushDenormals() noexcept = default;
#endif
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;

#if defined(__SSE__) || defined(_M_X64)
 private:
  unsigned int saved_;
#endif
};

// Sum of three values, independent of argument order. Sorting network on
// min/max; equal values differ at most in the sign of zero, which cannot
// change the sum.
template <typename T>
inline T symmetric_sum(T a, T b, T c) noexcept {
  const T lo = std::min(a, b);
  const T hi = std::max(a, b);
  const T top = std::max(hi, c);
  const T mid = std::min(hi, c);
  return (std::min(lo, mid) + std::max(lo, mid)) + top;
}

}  // namespace detail

/// Reusable Laplacian for one grid shape. Operator matrices and their block
/// structure are fixed at construction.
template <typename T>
class LaplacianOperator {
 public:
  LaplacianOperator(const Grid& grid, const StencilCoefficients& coeffs,
                    Strategy strategy = Strategy::DirectStencil, std::size_t block_size = 128,
                    Precision precision = Precision::Full)
      : grid_(grid),
        strategy_(strategy),
        precision_(precision),
        half_width_(coeffs.half_width()),
        block_size_(block_size) {
    grid.require_stencil(half_width_);
    if (block_size == 0) throw InvalidArgument("block_size must be >= 1");
    const long m = static_cast<long>(half_width_);
    for (long j = -m; j <= m; ++j) {
      taps_.push_back(static_cast<T>(coeffs.weight(j)));
    }
    mxu_taps_ = taps_;
    if (precision == Precision::ReducedEmulated) {
      for (T& w : mxu_taps_) w = round_to_8bit_mantissa(w);
    }
    inv_dx2_ = static_cast<T>(1.0 / (grid.dx * grid.dx));
    inv_dy2_ = static_cast<T>(1.0 / (grid.dy * grid.dy));
    inv_dz2_ = static_cast<T>(1.0 / (grid.dz * grid.dz));
    if (strategy == Strategy::BandMatMul) {
      band_x_ = BandMatrix<T>(coeffs, grid.nx, block_size, precision);
      band_y_ = BandMatrix<T>(coeffs, grid.ny, block_size, precision);
    }
  }

  const Grid& grid() const noexcept { return grid_; }
  Strategy strategy() const noexcept { return strategy_; }
  Precision precision() const noexcept { return precision_; }
  std::size_t half_width() const noexcept { return half_width_; }
  std::size_t block_size() const noexcept { return block_size_; }
  const BandMatrix<T>& band_x() const noexcept { return band_x_; }
  const BandMatrix<T>& band_y() const noexcept { return band_y_; }

  /// out = Laplacian(in). out must not alias in.
  void apply(const Field<T>& in, Field<T>& out) const {
    if (!in.grid().same_shape(grid_) || !out.grid().same_shape(grid_)) {
      throw InvalidArgument("field shape does not match the operator grid");
    }
    apply(in.data(), out.data());
  }

  Field<T> operator()(const Field<T>& in) const {
    Field<T> out(in.grid());
    apply(in, out);
    return out;
  }

  /// Raw form over x-fastest arrays of grid().cells() values.
  void apply(const T* in, T* out) const {
    const std::size_t nx = grid_.nx;
    const std::size_t ny = grid_.ny;
    const long nz = static_cast<long>(grid_.nz);
#pragma omp parallel
    {
      const detail::FlushDenormals ftz;
      SliceScratch s;
      s.x.resize(nx * ny);
      s.y.resize(nx * ny);
      s.z.resize(nx * ny);
      if (strategy_ == Strategy::BandMatMul) {
        s.padded.resize(band_x_.n_padded() * band_y_.n_padded());
      } else {
        s.padded.resize(nx + 2 * half_width_);
      }
      if (strategy_ == Strategy::Conv1D) s.rounded.resize(nx * ny);
#pragma omp for schedule(static)
      for (long k = 0; k < nz; ++k) {
        const T* slice = in + static_cast<std::size_t>(k) * nx * ny;
        switch (strategy_) {
          case Strategy::DirectStencil: direct_xy(slice, s); break;
          case Strategy::BandMatMul: matmul_xy(slice, s); break;
          case Strategy::Conv1D: conv_xy(slice, s); break;
        }
        combine_with_z(in, static_cast<std::size_t>(k), s, out);
      }
    }
  }

 private:
  struct SliceScratch {
    std::vector<T> x;
    std::vector<T> y;
    std::vector<T> z;
    std::vector<T> padded;
    std::vector<T> rounded;
  };

  T tap(long j) const noexcept {
    return taps_[static_cast<std::size_t>(j + static_cast<long>(half_width_))];
  }

  T mxu_input(T v) const noexcept {
    return precision_ == Precision::ReducedEmulated ? round_to_8bit_mantissa(v) : v;
  }

  // o = w0*mid + sum_j w_j*(lo_j + hi_j), a missing neighbor line reads zero.
  // Every cell sees the same operation sequence, ascending in j.
  template <typename Line>
  void paired_pass(const T* mid, T* o, std::size_t len, Line&& line) const {
    const T w0 = tap(0);
    for (std::size_t i = 0; i < len; ++i) o[i] = w0 * mid[i];
    for (std::size_t j = 1; j <= half_width_; ++j) {
      const T w = tap(static_cast<long>(j));
      const T* lo = line(-static_cast<long>(j));
      const T* hi = line(static_cast<long>(j));
      if (lo && hi) {
        for (std::size_t i = 0; i < len; ++i) o[i] += w * (lo[i] + hi[i]);
      } else if (lo) {
        for (std::size_t i = 0; i < len; ++i) o[i] += w * (lo[i] + T(0));
      } else if (hi) {
        for (std::size_t i = 0; i < len; ++i) o[i] += w * (T(0) + hi[i]);
      } else {
        for (std::size_t i = 0; i < len; ++i) o[i] += w * (T(0) + T(0));
      }
    }
  }

  void direct_xy(const T* f, SliceScratch& s) const {
    const std::size_t nx = grid_.nx;
    const std::size_t ny = grid_.ny;
    const std::size_t m = half_width_;
    T* line = s.padded.data();
    std::fill(s.padded.begin(), s.padded.end(), T(0));
    for (std::size_t y = 0; y < ny; ++y) {
      std::copy(f + y * nx, f + (y + 1) * nx, line + m);
      const T* c = line + m;
      paired_pass(c, s.x.data() + y * nx, nx, [c](long j) { return c + j; });
    }
    for (std::size_t y = 0; y < ny; ++y) {
      paired_pass(f + y * nx, s.y.data() + y * nx, nx, [&](long j) -> const T* {
        const long q = static_cast<long>(y) + j;
        return q < 0 || q >= static_cast<long>(ny) ? nullptr : f + static_cast<std::size_t>(q) * nx;
      });
    }
  }

  // Slice as an ny x nx matrix F (row y, column x):
  //   x pass  X = F * Dx^T,  y pass  Y = Dy * F,
  // over the zero-padded nyp x nxp tile grid. Each output accumulates its
  // products in ascending column order across the kept blocks.
  void matmul_xy(const T* f, SliceScratch& s) const {
    const std::size_t nx = grid_.nx;
    const std::size_t ny = grid_.ny;
    const std::size_t nxp = band_x_.n_padded();
    const std::size_t bs = block_size_;
    std::fill(s.padded.begin(), s.padded.end(), T(0));
    for (std::size_t y = 0; y < ny; ++y) {
      for (std::size_t i = 0; i < nx; ++i) s.padded[y * nxp + i] = mxu_input(f[y * nx + i]);
    }
    const T* fp = s.padded.data();

    // D is symmetric, so column c of Dx is row c.
    std::fill(s.x.begin(), s.x.end(), T(0));
    for (std::size_t bi = 0; bi < band_x_.blocks_per_axis(); ++bi) {
      const auto [lo, hi] = band_x_.block_columns(bi);
      const std::size_t i0 = bi * bs;
      const std::size_t i1 = std::min(i0 + bs, nx);
      if (i0 >= i1) continue;
      for (std::size_t y = 0; y < ny; ++y) {
        const T* frow = fp + y * nxp;
        T* xo = s.x.data() + y * nx;
        for (std::size_t bk = lo; bk <= hi; ++bk) {
          for (std::size_t c = bk * bs; c < (bk + 1) * bs; ++c) {
            const T fc = frow[c];
            const T* dcol = band_x_.row(c);
            for (std::size_t i = i0; i < i1; ++i) xo[i] += dcol[i] * fc;
          }
        }
      }
    }

    std::fill(s.y.begin(), s.y.end(), T(0));
    for (std::size_t bi = 0; bi < band_y_.blocks_per_axis(); ++bi) {
      const auto [lo, hi] = band_y_.block_columns(bi);
      const std::size_t r_end = std::min((bi + 1) * bs, ny);
      for (std::size_t r = bi * bs; r < r_end; ++r) {
        const T* drow = band_y_.row(r);
        T* yo = s.y.data() + r * nx;
        for (std::size_t bk = lo; bk <= hi; ++bk) {
          for (std::size_t c = bk * bs; c < (bk + 1) * bs; ++c) {
            const T d = drow[c];
            const T* frow = fp + c * nxp;
            for (std::size_t i = 0; i < nx; ++i) yo[i] += d * frow[i];
          }
        }
      }
    }
  }

  void conv_xy(const T* f, SliceScratch& s) const {
    const std::size_t nx = grid_.nx;
    const std::size_t ny = grid_.ny;
    const std::size_t m = half_width_;
    const std::size_t taps = 2 * m + 1;
    for (std::size_t n = 0; n < nx * ny; ++n) s.rounded[n] = mxu_input(f[n]);
    const T* fr = s.rounded.data();
    T* line = s.padded.data();
    std::fill(s.padded.begin(), s.padded.end(), T(0));
    for (std::size_t y = 0; y < ny; ++y) {
      std::copy(fr + y * nx, fr + (y + 1) * nx, line + m);
      T* xo = s.x.data() + y * nx;
      std::fill(xo, xo + nx, T(0));
      for (std::size_t t = 0; t < taps; ++t) {
        const T w = mxu_taps_[t];
        const T* src = line + t;
        for (std::size_t i = 0; i < nx; ++i) xo[i] += w * src[i];
      }
    }
    std::fill(s.y.begin(), s.y.end(), T(0));
    for (std::size_t r = 0; r < ny; ++r) {
      T* yo = s.y.data() + r * nx;
      for (std::size_t t = 0; t < taps; ++t) {
        const long q = static_cast<long>(r + t) - static_cast<long>(m);
        if (q < 0 || q >= static_cast<long>(ny)) continue;
        const T w = mxu_taps_[t];
        const T* frow = fr + static_cast<std::size_t>(q) * nx;
        for (std::size_t i = 0; i < nx; ++i) yo[i] += w * frow[i];
      }
    }
  }

  void combine_with_z(const T* in, std::size_t k, SliceScratch& s, T* out) const {
    const std::size_t plane = grid_.nx * grid_.ny;
    const std::size_t nz = grid_.nz;
    paired_pass(in + k * plane, s.z.data(), plane, [&](long j) -> const T* {
      const long q = static_cast<long>(k) + j;
      return q < 0 || q >= static_cast<long>(nz) ? nullptr : in + static_cast<std::size_t>(q) * plane;
    });
    T* o = out + k * plane;
    for (std::size_t n = 0; n < plane; ++n) {
      o[n] = detail::symmetric_sum(s.x[n] * inv_dx2_, s.y[n] * inv_dy2_, s.z[n] * inv_dz2_);
    }
  }

  Grid grid_;
  Strategy strategy_;
  Precision precision_;
  std::size_t half_width_;
  std::size_t block_size_;
  std::vector<T> taps_;
  std::vector<T> mxu_taps_;
  T inv_dx2_{};
  T inv_dy2_{};
  T inv_dz2_{};
  BandMatrix<T> band_x_;
  BandMatrix<T> band_y_;
};

/// One-shot Laplacian of a field.
template <typename T>
Field<T> laplacian(const Field<T>& field, const StencilCoefficients& coeffs,
                   Strategy strategy = Strategy::DirectStencil, std::size_t block_size = 128,
                   Precision precision = Precision::Full) {
  if (!field.all_finite()) throw InvalidArgument("laplacian input contains non-finite values");
  const LaplacianOperator<T> op(field.grid(), coeffs, strategy, block_size, precision);
  return op(field);
}

}  // namespace fdwave
