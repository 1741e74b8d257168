#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "fdwave/propagator.hpp"

using namespace fdwave;

namespace {

SimConfig base_config(std::size_t n, int order = 8, double v = 1500.0, double h = 10.0) {
  SimConfig c;
  c.grid = Grid{n, n, n, h, h, h};
  c.order = order;
  c.dt = 0.5 * cfl_max_dt(v, c.grid, fd_coefficients(order));
  c.n_steps = 20;
  return c;
}

SourceTerm ricker_at(Index3 p, double f, double dt, std::size_t n) {
  return SourceTerm{p, ricker(f, dt, n), f};
}

// Applies one of the 48 symmetries of the cube (axis permutation + sign flips).
Index3 transform(const Index3& c, std::size_t n, const std::array<int, 3>& perm, int flips) {
  const std::size_t src[3] = {c.i, c.j, c.k};
  std::size_t out[3];
  for (int a = 0; a < 3; ++a) {
    const std::size_t v = src[perm[a]];
    out[a] = (flips >> a) & 1 ? n - 1 - v : v;
  }
  return {out[0], out[1], out[2]};
}

}  // namespace

TEST(Cfl, SecondOrderClosedForm) {
  const Grid g{8, 8, 8, 5.0, 5.0, 5.0};
  const double v = 2000.0;
  EXPECT_NEAR(v * cfl_max_dt(v, g, fd_coefficients(2)) / 5.0, 1.0 / std::sqrt(3.0), 1e-12);
}

TEST(Cfl, EighthOrderClosedForm) {
  const Grid g{16, 16, 16, 1.0, 1.0, 1.0};
  const double s = 205.0 / 72 + 2 * (8.0 / 5 + 1.0 / 5 + 8.0 / 315 + 1.0 / 560);
  const double oracle = 2.0 / std::sqrt(3.0 * s);
  EXPECT_NEAR(cfl_max_dt(1.0, g, fd_coefficients(8)), oracle, 1e-12);
  EXPECT_NEAR(oracle, 0.4529, 5e-5);
}

TEST(Cfl, InverselyProportionalToVelocity) {
  const Grid g{16, 16, 16, 4.0, 5.0, 6.0};
  const auto c = fd_coefficients(8);
  EXPECT_DOUBLE_EQ(cfl_max_dt(3000.0, g, c), 0.5 * cfl_max_dt(1500.0, g, c));
  EXPECT_THROW(cfl_max_dt(0.0, g, c), InvalidArgument);
}

TEST(Ricker, PeakAtDelay) {
  const double f = 25.0, dt = 1e-3;
  const auto w = ricker(f, dt, 200);
  ASSERT_EQ(w.size(), 200u);
  const std::size_t n0 = static_cast<std::size_t>(std::lround(1.5 / f / dt));
  EXPECT_NEAR(w[n0], 1.0, 1e-12);
  for (double v : w) EXPECT_LE(v, 1.0 + 1e-12);
}

TEST(Ricker, RootsWhereTheQuadraticFactorVanishes) {
  const double f = 10.0;
  const double t0 = 1.5 / f;
  const double root = 1.0 / (std::numbers::pi * f * std::numbers::sqrt2);
  for (double t : {t0 - root, t0 + root}) {
    const std::size_t n = 64;
    const auto w = ricker(f, t / n, n + 1);
    EXPECT_NEAR(w[n], 0.0, 1e-12);
    // Sign change across the root.
    EXPECT_LT(ricker(f, t / n * 0.999, n + 1)[n] * ricker(f, t / n * 1.001, n + 1)[n], 0.0);
  }
}

TEST(Ricker, DecaysAwayFromThePeak) {
  const double f = 20.0, dt = 2e-4;
  const auto w = ricker(f, dt, 5000);
  for (std::size_t n = 0; n < w.size(); ++n) {
    const double t = n * dt - 1.5 / f;
    if (std::abs(t) > 6.0 / f) EXPECT_LT(std::abs(w[n]), 1e-6) << n;
  }
  EXPECT_THROW(ricker(0.0, dt, 10), InvalidArgument);
}

TEST(Step, ZeroStaysZero) {
  const Grid g{12, 12, 12, 1, 1, 1};
  const auto c = fd_coefficients(4);
  const WaveField<float> z(g);
  const auto next = step(z, z, VelocityModel<float>(g, 1.0f), 0.1, {}, c);
  EXPECT_EQ(next, z);
}

TEST(Step, ZeroVelocityIsPureExtrapolation) {
  const Grid g{12, 11, 10, 1, 1, 1};
  std::mt19937 rng(4);
  std::uniform_real_distribution<float> u(-1, 1);
  WaveField<float> prev(g), cur(g);
  for (auto& v : prev.values()) v = u(rng);
  for (auto& v : cur.values()) v = u(rng);
  const auto prev_copy = prev, cur_copy = cur;
  for (Strategy s : {Strategy::DirectStencil, Strategy::BandMatMul, Strategy::Conv1D}) {
    const auto next = step(prev, cur, VelocityModel<float>(g, 0.0f), 1e-3, {}, fd_coefficients(8),
                           s, 8);
    for (std::size_t n = 0; n < g.cells(); ++n) ASSERT_EQ(next[n], 2 * cur[n] - prev[n]);
  }
  EXPECT_EQ(prev, prev_copy);
  EXPECT_EQ(cur, cur_copy);
}

TEST(Step, SourceAddsDtSquaredAmplitude) {
  const Grid g{9, 9, 9, 1, 1, 1};
  const WaveField<double> z(g);
  const PointSource src{{4, 4, 4}, 3.0};
  const auto next = step(z, z, VelocityModel<double>(g, 1.0), 0.25, {&src, 1}, fd_coefficients(2));
  EXPECT_EQ(next(4, 4, 4), 0.0625 * 3.0);
  EXPECT_EQ(next.max_abs(), 0.0625 * 3.0);
}

TEST(Step, Errors) {
  const Grid g{9, 9, 9, 1, 1, 1};
  const WaveField<float> a(g), b(Grid{9, 9, 10, 1, 1, 1});
  const auto c = fd_coefficients(2);
  EXPECT_THROW(step(a, b, VelocityModel<float>(g, 1.0f), 0.1, {}, c), InvalidArgument);
  EXPECT_THROW(step(a, a, VelocityModel<float>(g, 1.0f), 0.0, {}, c), InvalidArgument);
  WaveField<float> huge(g, 3e38f);
  EXPECT_THROW(step(a, huge, VelocityModel<float>(g, 1.0f), 0.1, {}, c), Diverged);
}

TEST(Propagate, ImpulseStaysCubeSymmetric) {
  const std::size_t n = 21;
  for (Strategy s : {Strategy::DirectStencil, Strategy::BandMatMul, Strategy::Conv1D}) {
    auto c = base_config(n);
    c.strategy = s;
    c.block_size = 8;
    c.n_steps = 12;
    c.snapshot_every = 1;
    c.sources.push_back({{10, 10, 10}, {1.0, -0.5, 0.25}, 0.0});
    const auto res = propagate(c, VelocityModel<float>(c.grid, 1500.0f));
    ASSERT_EQ(res.snapshots.size(), 12u);
    const std::array<std::array<int, 3>, 6> perms = {
        {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
    for (const auto& snap : res.snapshots) {
      const auto& f = snap.field;
      double worst = 0.0;
      for (const auto& p : perms) {
        for (int flips = 0; flips < 8; ++flips) {
          for (std::size_t k = 0; k < n; ++k) {
            for (std::size_t j = 0; j < n; ++j) {
              for (std::size_t i = 0; i < n; ++i) {
                const Index3 t = transform({i, j, k}, n, p, flips);
                const double d = std::abs(double(f(i, j, k)) - double(f(t.i, t.j, t.k)));
                worst = std::max(worst, d);
              }
            }
          }
        }
      }
      // Paired summation makes the direct stencil exactly reflection
      // invariant; the ascending matmul/conv sums are symmetric to rounding.
      if (s == Strategy::DirectStencil) {
        EXPECT_EQ(worst, 0.0) << "step " << snap.step;
      } else {
        EXPECT_LE(worst, 1e-6 * f.max_abs()) << to_string(s) << " step " << snap.step;
      }
    }
  }
}

TEST(Propagate, TwoHalfSourcesEqualOneFull) {
  auto one = base_config(24);
  one.n_steps = 40;
  one.receivers = {{5, 6, 7}, {12, 12, 12}};
  auto w = ricker(30.0, one.dt, one.n_steps);
  one.sources.push_back({{12, 12, 12}, w, 30.0});
  auto two = one;
  for (double& a : w) a *= 0.5;
  two.sources = {{{12, 12, 12}, w, 30.0}, {{12, 12, 12}, w, 30.0}};
  const VelocityModel<float> v(one.grid, 1500.0f);
  const auto a = propagate(one, v);
  const auto b = propagate(two, v);
  EXPECT_EQ(a.current, b.current);
  EXPECT_EQ(a.traces, b.traces);
}

TEST(Propagate, NoSourcesGiveZeros) {
  auto c = base_config(16);
  c.snapshot_every = 5;
  c.receivers = {{1, 2, 3}};
  const auto res = propagate(c, VelocityModel<float>(c.grid, 2000.0f));
  ASSERT_EQ(res.snapshots.size(), 4u);
  for (const auto& s : res.snapshots) EXPECT_EQ(s.field.max_abs(), 0.0f);
  for (double v : res.traces.data()) EXPECT_EQ(v, 0.0);
}

TEST(Propagate, TracesRecordTheNewTimeLevel) {
  auto c = base_config(16);
  c.n_steps = 6;
  c.snapshot_every = 1;
  c.receivers = {{8, 8, 8}, {3, 8, 8}};
  c.sources.push_back({{8, 8, 8}, {1.0, 2.0}, 0.0});
  const auto res = propagate(c, VelocityModel<float>(c.grid, 1500.0f));
  ASSERT_EQ(res.traces.n_steps(), 6u);
  for (std::size_t n = 0; n < 6; ++n) {
    EXPECT_EQ(res.snapshots[n].step, n + 1);
    EXPECT_DOUBLE_EQ(res.traces.time(n), (n + 1) * c.dt);
    for (std::size_t r = 0; r < 2; ++r) {
      EXPECT_EQ(res.traces.at(r, n), res.snapshots[n].field[c.grid.index(c.receivers[r])]);
    }
  }
  EXPECT_EQ(res.traces.at(0, 0), static_cast<float>(c.dt * c.dt * 1.0));
}

TEST(Propagate, IsDeterministic) {
  auto c = base_config(24);
  c.strategy = Strategy::BandMatMul;
  c.block_size = 16;
  c.n_steps = 30;
  c.boundary = Boundary::sponge(5);
  c.receivers = {{3, 4, 5}};
  c.sources.push_back(ricker_at({11, 12, 13}, 40.0, c.dt, c.n_steps));
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> u(1500, 3000);
  VelocityModel<float> v(c.grid);
  for (auto& s : v.values()) s = u(rng);
  c.dt = 0.5 * cfl_max_dt(3000.0, c.grid, fd_coefficients(8));
  const auto a = propagate(c, v);
  const auto b = propagate(c, v);
  EXPECT_EQ(a.current, b.current);
  EXPECT_EQ(a.traces, b.traces);
}

TEST(Propagate, RefusesUnstableTimeStep) {
  auto c = base_config(16);
  const double limit = kCflSafety * cfl_max_dt(1500.0, c.grid, fd_coefficients(8));
  c.dt = 1.01 * limit;
  const VelocityModel<float> v(c.grid, 1500.0f);
  try {
    propagate(c, v);
    FAIL() << "accepted an unstable dt";
  } catch (const CflViolation& e) {
    EXPECT_DOUBLE_EQ(e.dt(), c.dt);
    EXPECT_DOUBLE_EQ(e.dt_max(), limit);
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(c.dt)), std::string::npos);
    EXPECT_NE(msg.find(std::to_string(limit)), std::string::npos);
  }
  c.allow_unstable = true;
  EXPECT_NO_THROW(propagate(c, v));
}

TEST(Propagate, ReportsDivergenceStep) {
  auto c = base_config(16);
  c.dt = 3.0 * cfl_max_dt(1500.0, c.grid, fd_coefficients(8));
  c.allow_unstable = true;
  c.n_steps = 5000;
  c.sources.push_back({{8, 8, 8}, {1.0}, 0.0});
  try {
    propagate(c, VelocityModel<float>(c.grid, 1500.0f));
    FAIL() << "unstable run did not diverge";
  } catch (const Diverged& e) {
    EXPECT_GT(e.step(), 0u);
    EXPECT_LT(e.step(), c.n_steps);
  }
}

TEST(Propagate, RejectsBadConfigs) {
  const VelocityModel<float> v(Grid{16, 16, 16, 10, 10, 10}, 1500.0f);
  auto c = base_config(16);
  auto bad = c;
  bad.n_steps = 0;
  EXPECT_THROW(propagate(bad, v), InvalidArgument);
  bad = c;
  bad.receivers = {{16, 0, 0}};
  EXPECT_THROW(propagate(bad, v), InvalidArgument);
  bad = c;
  bad.order = 7;
  EXPECT_THROW(propagate(bad, v), InvalidArgument);
  VelocityModel<float> neg(c.grid, 1500.0f);
  neg[3] = -1.0f;
  EXPECT_THROW(propagate(c, neg), InvalidArgument);
}

TEST(Sponge, ProfileShape) {
  const auto g = sponge_profile(50, Boundary::sponge(10, 0.09));
  EXPECT_DOUBLE_EQ(g[0], std::exp(-0.09));
  EXPECT_DOUBLE_EQ(g[49], std::exp(-0.09));
  EXPECT_DOUBLE_EQ(g[9], std::exp(-0.09 * 0.01));
  EXPECT_EQ(g[10], 1.0);
  EXPECT_EQ(g[39], 1.0);
  for (std::size_t i = 1; i < 10; ++i) EXPECT_GT(g[i], g[i - 1]);
  for (double v : sponge_profile(50, Boundary::dirichlet())) EXPECT_EQ(v, 1.0);
}

TEST(Sponge, AbsorbsOutgoingEnergy) {
  auto c = base_config(48);
  c.n_steps = 400;
  c.sources.push_back(ricker_at({24, 24, 24}, 25.0, c.dt, c.n_steps));
  const VelocityModel<float> v(c.grid, 1500.0f);
  const auto hard = propagate(c, v);
  c.boundary = Boundary::sponge(12);
  const auto soft = propagate(c, v);
  EXPECT_LT(soft.current.max_abs(), 0.2f * hard.current.max_abs());
}

TEST(Propagate, StaysBoundedOnRandomVelocity) {
  auto c = base_config(32);
  std::mt19937 rng(17);
  std::uniform_real_distribution<float> u(1500, 4500);
  VelocityModel<float> v(c.grid);
  for (auto& s : v.values()) s = u(rng);
  c.dt = kCflSafety * cfl_max_dt(4500.0, c.grid, fd_coefficients(8));
  c.n_steps = 50;
  c.sources.push_back(ricker_at({16, 16, 16}, 60.0, c.dt, c.n_steps));
  Simulation<float> sim(c, v);
  sim.reset();
  const auto early = sim.run();
  const float ref = early.current.max_abs();
  ASSERT_GT(ref, 0.0f);
  c.sources.clear();
  c.n_steps = 300;
  InitialState<float> st{early.previous, early.current};
  const auto late = propagate(c, v, &st);
  EXPECT_LT(late.current.max_abs(), 10.0f * ref);
}

TEST(Energy, ConservedInHomogeneousDirichletMedium) {
  auto c = base_config(32);
  c.dt = 0.5 * cfl_max_dt(1500.0, c.grid, fd_coefficients(8));
  c.n_steps = 120;
  c.sources.push_back(ricker_at({16, 15, 14}, 40.0, c.dt, c.n_steps));
  const VelocityModel<float> v(c.grid, 1500.0f);
  const auto coeffs = fd_coefficients(8);
  const auto primed = propagate(c, v);
  c.sources.clear();
  c.n_steps = 50;
  InitialState<float> st{primed.previous, primed.current};
  const double e0 = discrete_energy(st.previous, st.current, v, c.dt, coeffs);
  ASSERT_GT(e0, 0.0);
  double worst = 0.0;
  for (int block = 0; block < 4; ++block) {
    const auto r = propagate(c, v, &st);
    worst = std::max(worst, std::abs(discrete_energy(r.previous, r.current, v, c.dt, coeffs) - e0));
    st = {r.previous, r.current};
  }
  EXPECT_LT(worst / e0, 1e-2);
}

TEST(Energy, ExactForDoublePrecisionUpdate) {
  auto c = base_config(20);
  c.n_steps = 60;
  c.sources.push_back(ricker_at({10, 10, 10}, 50.0, c.dt, c.n_steps));
  const VelocityModel<double> v(c.grid, 1500.0);
  const auto coeffs = fd_coefficients(8);
  const auto primed = propagate(c, v);
  c.sources.clear();
  c.n_steps = 100;
  InitialState<double> st{primed.previous, primed.current};
  const double e0 = discrete_energy(st.previous, st.current, v, c.dt, coeffs);
  const auto r = propagate(c, v, &st);
  EXPECT_NEAR(discrete_energy(r.previous, r.current, v, c.dt, coeffs) / e0, 1.0, 1e-9);
}
