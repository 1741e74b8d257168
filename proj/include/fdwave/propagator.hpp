#pragma once

// Second-order leapfrog time stepping of the constant-density acoustic wave
// equation:
//
//   P[n+1] = -P[n-1] + 2 P[n] + v^2 dt^2 Lap(P[n]) + dt^2 s[n]
//
// Source amplitudes are added at single cells. Boundaries are either the
// operator's zero-Dirichlet exterior alone or an additional Cerjan sponge.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acquisition.hpp"
#include "errors.hpp"
#include "grid.hpp"
#include "operators.hpp"
#include "stencil.hpp"

namespace fdwave {

inline constexpr double kCflSafety = 0.9;

/// Largest stable time step for the leapfrog scheme with this stencil.
inline double cfl_max_dt(double v_max, const Grid& grid, const StencilCoefficients& coeffs) {
  if (!(v_max > 0.0)) throw InvalidArgument("v_max must be positive");
  const double s = coeffs.abs_sum();
  const double inv_h2 =
      1.0 / (grid.dx * grid.dx) + 1.0 / (grid.dy * grid.dy) + 1.0 / (grid.dz * grid.dz);
  return 2.0 / (v_max * std::sqrt(s * inv_h2));
}

/// Ricker wavelet with peak frequency f, delayed by t0 = 1.5 / f, sampled at
/// t = n * dt for n = 0 .. n_steps-1.
inline std::vector<double> ricker(double peak_frequency, double dt, std::size_t n_steps) {
  if (!(peak_frequency > 0.0)) throw InvalidArgument("peak frequency must be positive");
  if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
  const double t0 = 1.5 / peak_frequency;
  std::vector<double> w(n_steps);
  for (std::size_t n = 0; n < n_steps; ++n) {
    const double t = static_cast<double>(n) * dt - t0;
    const double a = std::numbers::pi * std::numbers::pi * peak_frequency * peak_frequency * t * t;
    w[n] = (1.0 - 2.0 * a) * std::exp(-a);
  }
  return w;
}

struct SourceTerm {
  Index3 position;
  std::vector<double> wavelet;  // amplitude per step; zero past the end
  double peak_frequency = 0.0;  // informational, 0 for custom wavelets

  double amplitude(std::size_t step) const noexcept {
    return step < wavelet.size() ? wavelet[step] : 0.0;
  }
};

/// A source amplitude for one step.
struct PointSource {
  Index3 position;
  double amplitude = 0.0;
};

struct Boundary {
  enum class Kind { DirichletZero, Sponge };
  Kind kind = Kind::DirichletZero;
  std::size_t width = 20;
  double decay = 0.09;  // (0.015 * 20)^2, the classic Cerjan profile

  static Boundary dirichlet() { return {}; }
  static Boundary sponge(std::size_t width = 20, double decay = 0.09) {
    return {Kind::Sponge, width, decay};
  }
};

/// 1D sponge factors along an axis of n cells: exp(-decay * (depth/width)^2)
/// for the `width` cells next to each face, depth = width at the face.
inline std::vector<double> sponge_profile(std::size_t n, const Boundary& b) {
  std::vector<double> g(n, 1.0);
  if (b.kind != Boundary::Kind::Sponge || b.width == 0) return g;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t dist = std::min(i, n - 1 - i);
    if (dist >= b.width) continue;
    const double depth = static_cast<double>(b.width - dist) / static_cast<double>(b.width);
    g[i] = std::exp(-b.decay * depth * depth);
  }
  return g;
}

struct SimConfig {
  Grid grid;
  int order = 8;
  Strategy strategy = Strategy::DirectStencil;
  std::size_t block_size = 128;
  Precision precision = Precision::Full;
  double dt = 0.0;
  std::size_t n_steps = 0;
  std::vector<SourceTerm> sources;
  std::vector<Index3> receivers;
  Boundary boundary;
  std::size_t snapshot_every = 0;  // 0 disables snapshots
  bool allow_unstable = false;
};

/// Checks everything except the velocity model itself; v_max is the largest
/// propagation speed in the model.
inline void validate_config(const SimConfig& c, double v_max) {
  require_supported_order(c.order);
  c.grid.require_stencil(static_cast<std::size_t>(c.order / 2));
  if (!(c.dt > 0.0) || !std::isfinite(c.dt)) throw InvalidArgument("dt must be positive");
  if (c.n_steps < 1) throw InvalidArgument("n_steps must be >= 1");
  if (c.block_size < 1) throw InvalidArgument("block_size must be >= 1");
  for (const auto& s : c.sources) {
    if (!c.grid.contains(s.position)) throw InvalidArgument("source position outside the grid");
    for (double a : s.wavelet) {
      if (!std::isfinite(a)) throw InvalidArgument("source wavelet is not finite");
    }
  }
  for (const auto& r : c.receivers) {
    if (!c.grid.contains(r)) throw InvalidArgument("receiver position outside the grid");
  }
  if (c.boundary.kind == Boundary::Kind::Sponge && !(c.boundary.decay >= 0.0)) {
    throw InvalidArgument("sponge decay must be non-negative");
  }
  const double limit = kCflSafety * cfl_max_dt(v_max, c.grid, fd_coefficients(c.order));
  if (c.dt > limit && !c.allow_unstable) throw CflViolation(c.dt, limit);
}

/// Source amplitude summed per array cell, in source-list order.
struct CellSource {
  std::size_t index = 0;
  double amplitude = 0.0;
};

inline std::vector<CellSource> aggregate_sources(std::span<const PointSource> sources,
                                                 const Grid& array_grid) {
  std::vector<CellSource> cells;
  for (const auto& s : sources) {
    const std::size_t idx = array_grid.index(s.position);
    auto it = std::find_if(cells.begin(), cells.end(),
                           [idx](const CellSource& c) { return c.index == idx; });
    if (it == cells.end()) {
      cells.push_back({idx, s.amplitude});
    } else {
      it->amplitude += s.amplitude;
    }
  }
  return cells;
}

/// Active (updated) region of an array, full extent in z.
struct ActiveBox {
  std::size_t i0 = 0, i1 = 0;
  std::size_t j0 = 0, j1 = 0;
};

/// Leapfrog update restricted to an active box of an array. Cells outside
/// the box are neither written nor read except through the Laplacian; the
/// distributed driver uses the surrounding ring as halo storage.
template <typename T>
class LeapfrogKernel {
 public:
  /// velocity is on the array grid; taper vectors cover the active box
  /// (x then y) and the full z axis, or are empty for no sponge.
  LeapfrogKernel(const Grid& array_grid, const StencilCoefficients& coeffs, Strategy strategy,
                 std::size_t block_size, Precision precision, const Field<T>& velocity,
                 double dt, ActiveBox box, std::vector<T> taper_x = {},
                 std::vector<T> taper_y = {}, std::vector<T> taper_z = {})
      : op_(array_grid, coeffs, strategy, block_size, precision),
        box_(box),
        dt2_(dt * dt),
        vdt2_(array_grid),
        lap_(array_grid),
        taper_x_(std::move(taper_x)),
        taper_y_(std::move(taper_y)),
        taper_z_(std::move(taper_z)) {
    for (std::size_t n = 0; n < velocity.size(); ++n) {
      const double v = static_cast<double>(velocity[n]);
      vdt2_[n] = static_cast<T>(v * v * dt * dt);
    }
  }

  const Grid& grid() const noexcept { return op_.grid(); }
  const ActiveBox& box() const noexcept { return box_; }
  bool has_sponge() const noexcept { return !taper_z_.empty(); }

  /// next = leapfrog(prev, cur) on the box; with a sponge, next and cur are
  /// then both multiplied by the taper. Throws Diverged on non-finite values.
  void advance(const Field<T>& prev, Field<T>& cur, Field<T>& next,
               std::span<const CellSource> sources, std::size_t step) {
    const detail::FlushDenormals ftz;
    op_.apply(cur, lap_);
    const Grid& g = op_.grid();
    const T two = T(2);
    bool finite = true;
    for (std::size_t k = 0; k < g.nz; ++k) {
      for (std::size_t j = box_.j0; j < box_.j1; ++j) {
        const std::size_t base = g.index(0, j, k);
        for (std::size_t i = box_.i0; i < box_.i1; ++i) {
          const std::size_t n = base + i;
          next[n] = (-prev[n] + two * cur[n]) + vdt2_[n] * lap_[n];
        }
      }
    }
    for (const auto& s : sources) next[s.index] += static_cast<T>(dt2_ * s.amplitude);
    if (has_sponge()) {
      for (std::size_t k = 0; k < g.nz; ++k) {
        for (std::size_t j = box_.j0; j < box_.j1; ++j) {
          const std::size_t base = g.index(0, j, k);
          const T gyz = taper_y_[j - box_.j0] * taper_z_[k];
          for (std::size_t i = box_.i0; i < box_.i1; ++i) {
            const T f = taper_x_[i - box_.i0] * gyz;
            next[base + i] *= f;
            cur[base + i] *= f;
          }
        }
      }
    }
    for (std::size_t k = 0; k < g.nz && finite; ++k) {
      for (std::size_t j = box_.j0; j < box_.j1 && finite; ++j) {
        const std::size_t base = g.index(0, j, k);
        for (std::size_t i = box_.i0; i < box_.i1; ++i) {
          if (!std::isfinite(next[base + i])) {
            finite = false;
            break;
          }
        }
      }
    }
    if (!finite) throw Diverged(step);
  }

 private:
  LaplacianOperator<T> op_;
  ActiveBox box_;
  double dt2_;
  Field<T> vdt2_;
  Field<T> lap_;
  std::vector<T> taper_x_;
  std::vector<T> taper_y_;
  std::vector<T> taper_z_;
};

/// One leapfrog step on whole fields, no sponge. Inputs are not modified.
/// Velocity may be zero here (the Laplacian term then vanishes).
template <typename T>
WaveField<T> step(const WaveField<T>& p_prev, const WaveField<T>& p_curr,
                  const VelocityModel<T>& v, double dt, std::span<const PointSource> sources,
                  const StencilCoefficients& coeffs, Strategy strategy = Strategy::DirectStencil,
                  std::size_t block_size = 128, Precision precision = Precision::Full,
                  std::size_t step_index = 0) {
  const Grid& g = p_curr.grid();
  if (!p_prev.grid().same_shape(g) || !v.grid().same_shape(g)) {
    throw InvalidArgument("step: fields and velocity model must share the grid");
  }
  if (!(dt > 0.0)) throw InvalidArgument("step: dt must be positive");
  for (T s : v.values()) {
    if (!(s >= T(0)) || !std::isfinite(s)) throw InvalidArgument("step: bad velocity value");
  }
  for (const auto& s : sources) {
    if (!g.contains(s.position)) throw InvalidArgument("step: source outside the grid");
  }
  LeapfrogKernel<T> kernel(g, coeffs, strategy, block_size, precision, v, dt,
                           ActiveBox{0, g.nx, 0, g.ny});
  WaveField<T> cur = p_curr;
  WaveField<T> next(g);
  const auto cells = aggregate_sources(sources, g);
  kernel.advance(p_prev, cur, next, cells, step_index);
  return next;
}

template <typename T>
struct Snapshot {
  std::size_t step = 0;  // time level: the field is P[step]
  WaveField<T> field;
};

/// Starting time levels P[-1] and P[0]; zero fields when absent.
template <typename T>
struct InitialState {
  WaveField<T> previous;
  WaveField<T> current;
};

template <typename T>
struct SimResult {
  std::vector<Snapshot<T>> snapshots;
  TraceSet traces;          // sample n holds P[n+1], at time (n+1)*dt
  WaveField<T> previous;    // P[n_steps-1]
  WaveField<T> current;     // P[n_steps]
};

namespace detail {

template <typename T>
std::vector<T> to_working(const std::vector<double>& v) {
  return {v.begin(), v.end()};
}

template <typename T>
std::vector<T> sponge_slice(const std::vector<double>& profile, std::size_t from, std::size_t to) {
  return {profile.begin() + static_cast<long>(from), profile.begin() + static_cast<long>(to)};
}

inline double max_velocity(std::span<const float> v) {
  return v.empty() ? 0.0 : static_cast<double>(*std::max_element(v.begin(), v.end()));
}
inline double max_velocity(std::span<const double> v) {
  return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
}

inline std::vector<PointSource> sources_at(const SimConfig& c, std::size_t step) {
  std::vector<PointSource> out;
  out.reserve(c.sources.size());
  for (const auto& s : c.sources) out.push_back({s.position, s.amplitude(step)});
  return out;
}

}  // namespace detail

/// Single-domain simulation. Construction validates the configuration and
/// builds operators; run() advances config.n_steps steps from the state set
/// by the last reset().
template <typename T>
class Simulation {
 public:
  Simulation(SimConfig config, const VelocityModel<T>& velocity)
      : config_(std::move(config)),
        kernel_(make_kernel(config_, velocity)),
        prev_(config_.grid),
        cur_(config_.grid),
        next_(config_.grid) {}

  const SimConfig& config() const noexcept { return config_; }

  /// Sets P[-1] and P[0]; zero fields when initial is null.
  void reset(const InitialState<T>* initial = nullptr) {
    const Grid& g = config_.grid;
    if (initial == nullptr) {
      prev_.fill(T(0));
      cur_.fill(T(0));
      return;
    }
    if (!initial->previous.grid().same_shape(g) || !initial->current.grid().same_shape(g)) {
      throw InvalidArgument("initial state dimensions differ from the simulation grid");
    }
    prev_ = initial->previous;
    cur_ = initial->current;
  }

  SimResult<T> run() {
    const Grid& g = config_.grid;
    SimResult<T> result;
    result.traces = TraceSet(config_.receivers, config_.dt, config_.n_steps, config_.dt);
    for (std::size_t n = 0; n < config_.n_steps; ++n) {
      const auto sources = detail::sources_at(config_, n);
      const auto cells = aggregate_sources(sources, g);
      kernel_.advance(prev_, cur_, next_, cells, n);
      std::swap(prev_, cur_);
      std::swap(cur_, next_);
      for (std::size_t r = 0; r < config_.receivers.size(); ++r) {
        result.traces.at(r, n) = static_cast<double>(cur_[g.index(config_.receivers[r])]);
      }
      if (config_.snapshot_every > 0 && (n + 1) % config_.snapshot_every == 0) {
        result.snapshots.push_back({n + 1, cur_});
      }
    }
    result.previous = prev_;
    result.current = cur_;
    return result;
  }

 private:
  static LeapfrogKernel<T> make_kernel(const SimConfig& c, const VelocityModel<T>& velocity) {
    const Grid& g = c.grid;
    if (!velocity.grid().same_shape(g)) {
      throw InvalidArgument("velocity model dimensions differ from the simulation grid");
    }
    validate_velocity(velocity);
    validate_config(c, detail::max_velocity(velocity.values()));
    std::vector<T> tx, ty, tz;
    if (c.boundary.kind == Boundary::Kind::Sponge) {
      tx = detail::to_working<T>(sponge_profile(g.nx, c.boundary));
      ty = detail::to_working<T>(sponge_profile(g.ny, c.boundary));
      tz = detail::to_working<T>(sponge_profile(g.nz, c.boundary));
    }
    return LeapfrogKernel<T>(g, fd_coefficients(c.order), c.strategy, c.block_size, c.precision,
                             velocity, c.dt, ActiveBox{0, g.nx, 0, g.ny}, std::move(tx),
                             std::move(ty), std::move(tz));
  }

  SimConfig config_;
  LeapfrogKernel<T> kernel_;
  WaveField<T> prev_;
  WaveField<T> cur_;
  WaveField<T> next_;
};

/// Runs config.n_steps leapfrog steps on a single domain.
template <typename T>
SimResult<T> propagate(const SimConfig& config, const VelocityModel<T>& velocity,
                       const InitialState<T>* initial = nullptr) {
  Simulation<T> sim(config, velocity);
  sim.reset(initial);
  return sim.run();
}

/// Discrete energy between time levels a = P[n] and b = P[n+1]:
///   sum ((b - a)/dt)^2 / v^2  +  sum b * (-Lap a)
/// which the leapfrog scheme conserves exactly in exact arithmetic for a
/// symmetric Laplacian. Evaluated in double precision.
template <typename T>
double discrete_energy(const WaveField<T>& a, const WaveField<T>& b, const VelocityModel<T>& v,
                       double dt, const StencilCoefficients& coeffs) {
  const auto ad = a.template cast<double>();
  const LaplacianOperator<double> op(a.grid(), coeffs, Strategy::DirectStencil);
  const auto lap = op(ad);
  double kinetic = 0.0;
  double potential = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n) {
    const double rate = (static_cast<double>(b[n]) - ad[n]) / dt;
    const double vel = static_cast<double>(v[n]);
    kinetic += rate * rate / (vel * vel);
    potential -= static_cast<double>(b[n]) * lap[n];
  }
  return kinetic + potential;
}

}  // namespace fdwave
