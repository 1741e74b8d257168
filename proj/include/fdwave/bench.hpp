#pragma once

// Throughput measurement in gigacell-updates per second.
//
// Methodology: the source is injected untimed, then n_steps of source-free
// propagation are timed. One warm-up run precedes `repeats` timed runs and
// the median elapsed time is reported. Operator construction, partitioning
// and output are outside the timed window; halo exchange is inside it.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "decomp.hpp"
#include "errors.hpp"
#include "grid.hpp"
#include "operators.hpp"
#include "propagator.hpp"

namespace fdwave {

inline double gcells_per_sec(std::size_t nx, std::size_t ny, std::size_t nz, std::size_t n_steps,
                             double elapsed_s) {
  return static_cast<double>(nx) * static_cast<double>(ny) * static_cast<double>(nz) *
         static_cast<double>(n_steps) / elapsed_s / 1e9;
}

struct BenchReport {
  std::string arch;
  int order = 0;
  std::size_t nx = 0, ny = 0, nz = 0;
  std::size_t mesh_rows = 1, mesh_cols = 1;
  Strategy strategy = Strategy::DirectStencil;
  std::size_t steps = 0;
  double elapsed_s = 0.0;
  double gcells_per_s = 0.0;
  std::size_t halo_bytes_per_step = 0;
  std::vector<double> samples_s;  // every timed repeat, in run order
};

template <typename T>
struct BenchOutcome {
  BenchReport report;
  WaveField<T> final_field;  // P[n_steps] of the last timed run
};

inline constexpr const char* kBenchCsvHeader =
    "arch,order,nx,ny,nz,mesh,strategy,steps,elapsed_s,gcells_per_s,halo_bytes_per_step";

inline void write_bench_csv(std::ostream& os, const std::vector<BenchReport>& reports) {
  os << kBenchCsvHeader << '\n';
  char buf[64];
  for (const auto& r : reports) {
    os << r.arch << ',' << r.order << ',' << r.nx << ',' << r.ny << ',' << r.nz << ','
       << r.mesh_rows << 'x' << r.mesh_cols << ',' << to_string(r.strategy) << ',' << r.steps
       << ',';
    std::snprintf(buf, sizeof buf, "%.9g", r.elapsed_s);
    os << buf << ',';
    std::snprintf(buf, sizeof buf, "%.9g", r.gcells_per_s);
    os << buf << ',' << r.halo_bytes_per_step << '\n';
  }
}

inline void write_bench_csv(const std::string& path, const std::vector<BenchReport>& reports) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_bench_csv(os, reports);
}

namespace detail {

// Steps needed until every wavelet has decayed to a negligible level.
inline std::size_t injection_steps(const SimConfig& c) {
  std::size_t last = 0;
  for (const auto& s : c.sources) {
    double peak = 0.0;
    for (double a : s.wavelet) peak = std::max(peak, std::abs(a));
    for (std::size_t n = 0; n < s.wavelet.size(); ++n) {
      if (std::abs(s.wavelet[n]) > 1e-7 * peak) last = std::max(last, n + 1);
    }
  }
  return last;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Times config.n_steps source-free steps on the given mesh after an
/// untimed injection phase driven by config.sources.
template <typename T>
BenchOutcome<T> bench_run(const SimConfig& config, const VelocityModel<T>& velocity,
                          std::size_t mesh_rows, std::size_t mesh_cols, std::size_t repeats,
                          const std::string& arch = "host") {
  if (repeats < 1) throw InvalidArgument("repeats must be >= 1");

  InitialState<T> state{WaveField<T>(config.grid), WaveField<T>(config.grid)};
  const std::size_t inject = detail::injection_steps(config);
  if (inject > 0) {
    SimConfig prime = config;
    prime.n_steps = inject;
    prime.receivers.clear();
    prime.snapshot_every = 0;
    auto primed = propagate(prime, velocity);
    state.previous = std::move(primed.previous);
    state.current = std::move(primed.current);
  }

  SimConfig timed = config;
  timed.sources.clear();
  timed.receivers.clear();
  timed.snapshot_every = 0;

  BenchOutcome<T> out;
  BenchReport& rep = out.report;
  rep.arch = arch;
  rep.order = config.order;
  rep.nx = config.grid.nx;
  rep.ny = config.grid.ny;
  rep.nz = config.grid.nz;
  rep.mesh_rows = mesh_rows;
  rep.mesh_cols = mesh_cols;
  rep.strategy = config.strategy;
  rep.steps = config.n_steps;

  using Clock = std::chrono::steady_clock;
  DistributedSimulation<T> sim(timed, velocity, mesh_rows, mesh_cols);
  for (std::size_t r = 0; r <= repeats; ++r) {
    sim.reset(&state);
    const auto t0 = Clock::now();
    auto res = sim.run();
    const auto t1 = Clock::now();
    if (r == 0) continue;  // warm-up
    rep.samples_s.push_back(std::chrono::duration<double>(t1 - t0).count());
    if (r == repeats) out.final_field = std::move(res.current);
  }
  rep.elapsed_s = detail::median(rep.samples_s);
  rep.gcells_per_s = gcells_per_sec(rep.nx, rep.ny, rep.nz, rep.steps, rep.elapsed_s);
  rep.halo_bytes_per_step = sim.stats().halo_bytes_per_step;
  return out;
}

}  // namespace fdwave
