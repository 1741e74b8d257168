#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdwave/acquisition.hpp"
#include "fdwave/bench.hpp"
#include "fdwave/decomp.hpp"
#include "fdwave/io.hpp"
#include "fdwave/stencil.hpp"

using namespace fdwave;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check_order(int order) {
  if (!is_supported_order(order)) {
    throw UsageError("unsupported order " + std::to_string(order) + "; accepted orders are " +
                     supported_orders_text());
  }
}

void check_mesh(const std::string& mesh) {
  try {
    parse_mesh(mesh);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void run_coeffs(int order) {
  const auto c = fd_coefficients(order);
  const long m = static_cast<long>(c.half_width());
  std::cout << "offset,weight\n";
  for (long j = -m; j <= m; ++j) std::cout << j << ',' << g17(c.weight(j)) << '\n';
}

void run_dispersion(const std::vector<int>& orders, double ppw_min, double ppw_max,
                    std::size_t samples) {
  if (!(ppw_min > 2.0)) throw InvalidArgument("--ppw-min must exceed 2 (Nyquist)");
  if (!(ppw_max >= ppw_min)) throw InvalidArgument("--ppw-max must be >= --ppw-min");
  if (samples < 1) throw InvalidArgument("--samples must be >= 1");
  std::cout << "order,ppw,phase_error\n";
  for (int order : orders) {
    const auto c = fd_coefficients(order);
    for (std::size_t s = 0; s < samples; ++s) {
      const double f = samples == 1 ? 0.0 : static_cast<double>(s) / static_cast<double>(samples - 1);
      const double ppw = ppw_min * std::pow(ppw_max / ppw_min, f);
      std::cout << order << ',' << g9(ppw) << ',' << g9(phase_error(c, ppw).phase_error) << '\n';
    }
  }
}

template <typename T>
void simulate_as(const RunConfig& rc, std::size_t rows, std::size_t cols) {
  const auto v = rc.velocity<T>();
  const std::size_t steps = rc.sim.n_steps;
  DistributedOptions opt;
  std::size_t next_report = 0;
  opt.after_compute = [&](std::size_t worker, std::size_t n) {
    if (worker != 0) return;
    const std::size_t pct = (n + 1) * 100 / steps;
    if (pct >= next_report) {
      std::cerr << "\rstep " << (n + 1) << "/" << steps << " (" << pct << "%)" << std::flush;
      next_report = pct + 10;
    }
  };
  DistributedStats stats;
  const auto res = propagate_distributed(rc.sim, v, rows, cols, opt, &stats);
  std::cerr << '\n';

  std::cout << "grid " << rc.sim.grid.nx << "x" << rc.sim.grid.ny << "x" << rc.sim.grid.nz
            << " order " << rc.sim.order << " strategy " << to_string(rc.sim.strategy)
            << " dt " << g9(rc.sim.dt) << (rc.dt_auto ? " (auto)" : "") << " steps " << steps
            << '\n';
  std::cout << "mesh " << rows << "x" << cols << " halo_bytes_per_step "
            << stats.halo_bytes_per_step << '\n';

  if (!rc.outputs.traces.empty()) {
    write_traces_csv(rc.outputs.traces, res.traces);
    std::cout << "traces " << rc.outputs.traces << '\n';
  }
  if (!rc.outputs.final_field.empty()) {
    write_volume(rc.outputs.final_field, res.current);
    std::cout << "final " << rc.outputs.final_field << '\n';
  }
  if (!res.snapshots.empty()) {
    const std::string prefix =
        rc.outputs.snapshot_prefix.empty() ? "snapshot_" : rc.outputs.snapshot_prefix;
    for (const auto& s : res.snapshots) {
      write_volume(prefix + std::to_string(s.step) + ".wvf", s.field);
    }
    std::cout << "snapshots " << res.snapshots.size() << " with prefix " << prefix << '\n';
  }
}

void run_simulate(const std::string& config_path, const std::string& mesh) {
  const RunConfig rc = parse_config(config_path);
  std::size_t rows = rc.mesh_rows, cols = rc.mesh_cols;
  if (!mesh.empty()) std::tie(rows, cols) = parse_mesh(mesh);
  if (rc.working == WorkingPrecision::Float64) {
    simulate_as<double>(rc, rows, cols);
  } else {
    simulate_as<float>(rc, rows, cols);
  }
}

void run_misfit(const std::string& mod_path, const std::string& obs_path) {
  const auto m = misfit(read_traces_csv(mod_path), read_traces_csv(obs_path));
  std::cout << "misfit " << g17(m.value) << '\n';
  for (std::size_t r = 0; r < m.per_receiver.size(); ++r) {
    std::cout << "recv_" << r << ' ' << g17(m.per_receiver[r]) << '\n';
  }
}

struct BenchArgs {
  std::size_t nx = 128, ny = 128, nz = 128, steps = 100, repeats = 3, block_size = 128;
  int order = 8;
  std::string strategy = "direct", mesh = "1x1", out, arch = "host", precision = "full";
  double velocity = 2000.0, spacing = 10.0;
};

void run_bench(const BenchArgs& a) {
  const auto [rows, cols] = parse_mesh(a.mesh);
  SimConfig c;
  c.grid = Grid{a.nx, a.ny, a.nz, a.spacing, a.spacing, a.spacing};
  c.order = a.order;
  c.block_size = a.block_size;
  c.precision = parse_precision(a.precision);
  c.dt = kCflSafety * cfl_max_dt(a.velocity, c.grid, fd_coefficients(a.order));
  c.n_steps = a.steps;
  // Roughly ten points per wavelength at the peak frequency.
  const double freq = a.velocity / (10.0 * a.spacing);
  const double t_end = 3.0 / freq;
  c.sources.push_back({{a.nx / 2, a.ny / 2, a.nz / 2},
                       ricker(freq, c.dt, static_cast<std::size_t>(std::ceil(t_end / c.dt)) + 1),
                       freq});
  const VelocityModel<float> v(c.grid, static_cast<float>(a.velocity));

  std::vector<Strategy> strategies;
  if (a.strategy == "all") {
    strategies = {Strategy::DirectStencil, Strategy::BandMatMul, Strategy::Conv1D};
  } else {
    strategies = {parse_strategy(a.strategy)};
  }
  std::vector<BenchReport> reports;
  std::vector<WaveField<float>> finals;
  for (Strategy s : strategies) {
    c.strategy = s;
    std::cerr << "bench " << to_string(s) << " ..." << std::flush;
    auto out = bench_run(c, v, rows, cols, a.repeats, a.arch);
    std::cerr << " " << g9(out.report.gcells_per_s) << " Gcells/s\n";
    reports.push_back(out.report);
    finals.push_back(std::move(out.final_field));
  }
  for (std::size_t i = 1; i < finals.size(); ++i) {
    const double err = relative_inf_error(finals[i], finals[0]);
    std::cerr << "cross-check " << to_string(strategies[i]) << " vs "
              << to_string(strategies[0]) << ": relative inf error " << g9(err) << '\n';
    if (!(err <= 1e-4)) {
      throw std::runtime_error("strategies disagree: relative inf error " + g9(err));
    }
  }
  write_bench_csv(std::cout, reports);
  if (!a.out.empty()) write_bench_csv(a.out, reports);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D acoustic finite-difference wave modeling"};
  app.require_subcommand(1);

  int coeff_order = 8;
  auto* coeffs = app.add_subcommand("coeffs", "Print central second-derivative weights");
  coeffs->add_option("--order", coeff_order, "Accuracy order (2..16, even)")->required();

  std::vector<int> disp_orders{2, 4, 8, 16};
  double ppw_min = 2.5, ppw_max = 32.0;
  std::size_t samples = 40;
  auto* disp = app.add_subcommand("dispersion", "Tabulate phase error against points per wavelength");
  disp->add_option("--orders", disp_orders, "Comma-separated orders")
      ->delimiter(',')
      ->capture_default_str();
  disp->add_option("--ppw-min", ppw_min, "Smallest points per wavelength (> 2)")->capture_default_str();
  disp->add_option("--ppw-max", ppw_max, "Largest points per wavelength")->capture_default_str();
  disp->add_option("--samples", samples, "Log-spaced samples per order")->capture_default_str();

  std::string config_path, sim_mesh;
  auto* sim = app.add_subcommand("simulate", "Run a forward simulation from a config file");
  sim->add_option("--config", config_path, "Config file (key = value)")->required();
  sim->add_option("--mesh", sim_mesh, "Worker mesh RxC, overrides the config");

  std::string mod_path, obs_path;
  auto* mis = app.add_subcommand("misfit", "Squared L2 misfit between two trace CSVs");
  mis->add_option("--mod", mod_path, "Modeled traces")->required();
  mis->add_option("--obs", obs_path, "Observed traces")->required();

  BenchArgs b;
  auto* bench = app.add_subcommand("bench", "Measure throughput in Gcells/s");
  bench->add_option("--nx", b.nx)->capture_default_str();
  bench->add_option("--ny", b.ny)->capture_default_str();
  bench->add_option("--nz", b.nz)->capture_default_str();
  bench->add_option("--steps", b.steps, "Timed source-free steps")->capture_default_str();
  bench->add_option("--order", b.order)->capture_default_str();
  bench->add_option("--strategy", b.strategy, "direct | matmul | conv | all")
      ->check(CLI::IsMember({"direct", "matmul", "conv", "all"}))
      ->capture_default_str();
  bench->add_option("--mesh", b.mesh, "Worker mesh RxC")->capture_default_str();
  bench->add_option("--repeats", b.repeats, "Timed repeats after one warm-up")
      ->capture_default_str();
  bench->add_option("--out", b.out, "Also write the report CSV here");
  bench->add_option("--arch", b.arch, "Free-text architecture label")->capture_default_str();
  bench->add_option("--block-size", b.block_size, "Band-matrix block size")->capture_default_str();
  bench->add_option("--precision", b.precision, "full | reduced")
      ->check(CLI::IsMember({"full", "reduced"}))
      ->capture_default_str();
  bench->add_option("--velocity", b.velocity, "Constant velocity (m/s)")->capture_default_str();
  bench->add_option("--spacing", b.spacing, "Grid spacing (m)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*coeffs) check_order(coeff_order);
    if (*disp) {
      for (int o : disp_orders) check_order(o);
      if (!(ppw_min > 2.0)) throw UsageError("--ppw-min must exceed 2 (Nyquist)");
      if (!(ppw_max >= ppw_min)) throw UsageError("--ppw-max must be >= --ppw-min");
      if (samples < 1) throw UsageError("--samples must be >= 1");
    }
    if (*sim && !sim_mesh.empty()) check_mesh(sim_mesh);
    if (*bench) {
      check_order(b.order);
      check_mesh(b.mesh);
      if (b.repeats < 1 || b.steps < 1) throw UsageError("--steps and --repeats must be >= 1");
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*coeffs) run_coeffs(coeff_order);
    if (*disp) run_dispersion(disp_orders, ppw_min, ppw_max, samples);
    if (*sim) run_simulate(config_path, sim_mesh);
    if (*mis) run_misfit(mod_path, obs_path);
    if (*bench) run_bench(b);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
