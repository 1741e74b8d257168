#include <gtest/gtest.h>
#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "fdwave/acquisition.hpp"
#include "fdwave/bench.hpp"
#include "fdwave/io.hpp"

using namespace fdwave;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("fdwave_test_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  os << text;
}

const char* kMinimal =
    "nx = 24\nny = 20\nnz = 16\n"
    "dx = 10\ndy = 10\ndz = 10\n"
    "v_const = 1500\n"
    "order = 8\n"
    "steps = 40\n"
    "source = 12 10 8 25\n"
    "receiver = 16 10 8\n";

std::string expect_config_error(const std::string& text) {
  try {
    parse_config_text(text, "test.cfg");
  } catch (const ConfigError& e) {
    return e.what();
  }
  ADD_FAILURE() << "config accepted:\n" << text;
  return {};
}

}  // namespace

TEST(Volume, RoundTripIsBitwise) {
  TempDir dir;
  const Grid g{8, 8, 8, 2.5, 3.0, 12.5};
  std::vector<float> values(g.cells());
  std::mt19937 rng(9);
  std::uniform_real_distribution<float> u(-1e3f, 1e3f);
  for (auto& v : values) v = u(rng);
  values[5] = -0.0f;
  values[6] = std::numeric_limits<float>::denorm_min();
  write_volume(dir.file("v.wvf"), g, values);
  const auto back = read_volume(dir.file("v.wvf"));
  EXPECT_EQ(back.grid.nx, 8u);
  EXPECT_EQ(back.grid.dy, 3.0);
  EXPECT_EQ(back.grid.dz, 12.5);
  ASSERT_EQ(back.values.size(), values.size());
  EXPECT_EQ(std::memcmp(back.values.data(), values.data(), 4 * values.size()), 0);
}

TEST(Volume, ZeroCubeFileSize) {
  TempDir dir;
  const Grid g{2, 2, 2, 1, 1, 1};
  write_volume(dir.file("z.wvf"), WaveField<float>(g));
  EXPECT_EQ(fs::file_size(dir.file("z.wvf")), 60u);
  const auto bytes = slurp(dir.file("z.wvf"));
  EXPECT_EQ(bytes.substr(0, 4), "WVF1");
  EXPECT_EQ(bytes[4], 2);
  EXPECT_EQ(bytes[5], 0);
}

TEST(Volume, FormatErrorsCarryOffsets) {
  const Grid g{3, 2, 2, 1, 1, 1};
  const auto good = encode_volume(g, std::vector<float>(12, 1.0f));
  auto offset_of = [](std::vector<unsigned char> bytes) -> std::size_t {
    try {
      decode_volume(bytes);
    } catch (const FormatError& e) {
      return e.offset();
    }
    ADD_FAILURE() << "decoded";
    return 0;
  };
  auto zero_nx = good;
  zero_nx[4] = 0;
  EXPECT_EQ(offset_of(zero_nx), 4u);
  auto zero_nz = good;
  zero_nz[12] = 0;
  EXPECT_EQ(offset_of(zero_nz), 12u);
  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(offset_of(magic), 0u);
  EXPECT_EQ(offset_of({good.begin(), good.begin() + 10}), 10u);
  EXPECT_EQ(offset_of({good.begin(), good.end() - 3}), good.size() - 3);
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(offset_of(trailing), good.size());
  auto huge = good;
  for (int b = 4; b < 16; ++b) huge[static_cast<std::size_t>(b)] = 0xFF;
  EXPECT_EQ(offset_of(huge), 4u);
  auto bad_spacing = good;
  std::fill(bad_spacing.begin() + 20, bad_spacing.begin() + 24, 0);
  EXPECT_EQ(offset_of(bad_spacing), 20u);
}

TEST(Config, MinimalDerivesDt) {
  const auto rc = parse_config_text(kMinimal);
  EXPECT_TRUE(rc.dt_auto);
  const double expected = 0.9 * cfl_max_dt(1500.0, rc.sim.grid, fd_coefficients(8));
  EXPECT_DOUBLE_EQ(rc.sim.dt, expected);
  EXPECT_EQ(rc.sim.grid.nx, 24u);
  EXPECT_EQ(rc.sim.n_steps, 40u);
  ASSERT_EQ(rc.sim.sources.size(), 1u);
  EXPECT_EQ(rc.sim.sources[0].wavelet, ricker(25.0, expected, 40));
  ASSERT_EQ(rc.sim.receivers.size(), 1u);
  EXPECT_EQ(rc.sim.receivers[0], (Index3{16, 10, 8}));
  EXPECT_EQ(rc.sim.strategy, Strategy::DirectStencil);
  EXPECT_EQ(rc.working, WorkingPrecision::Float32);
  EXPECT_EQ(*rc.v_const, 1500.0);
  EXPECT_EQ(parse_config_text(std::string(kMinimal) + "dt = auto  # derived\n").sim.dt, expected);
}

TEST(Config, OptionalKeys) {
  const auto rc = parse_config_text(std::string(kMinimal) +
                                    "strategy = conv\nprecision = reduced\nblock_size = 16\n"
                                    "working_precision = 64\nmesh = 2x3\n"
                                    "boundary = sponge 6 0.2\nsnapshot_every = 10\n"
                                    "receiver = 0 0 0\nsource = 1 1 1 30 -2.5\n");
  EXPECT_EQ(rc.sim.strategy, Strategy::Conv1D);
  EXPECT_EQ(rc.sim.precision, Precision::ReducedEmulated);
  EXPECT_EQ(rc.sim.block_size, 16u);
  EXPECT_EQ(rc.working, WorkingPrecision::Float64);
  EXPECT_EQ(rc.mesh_rows, 2u);
  EXPECT_EQ(rc.mesh_cols, 3u);
  EXPECT_EQ(rc.sim.boundary.kind, Boundary::Kind::Sponge);
  EXPECT_EQ(rc.sim.boundary.width, 6u);
  EXPECT_EQ(rc.sim.boundary.decay, 0.2);
  EXPECT_EQ(rc.sim.receivers.size(), 2u);
  ASSERT_EQ(rc.sim.sources.size(), 2u);
  EXPECT_EQ(rc.sim.sources[1].wavelet[20], -2.5 * ricker(30.0, rc.sim.dt, 40)[20]);
}

TEST(Config, UnsupportedOrderNamesTheSet) {
  std::string text = kMinimal;
  text.replace(text.find("order = 8"), 9, "order = 7");
  const auto msg = expect_config_error(text);
  EXPECT_NE(msg.find("{2, 4, 6, 8, 10, 12, 14, 16}"), std::string::npos) << msg;
  EXPECT_NE(msg.find("test.cfg:8"), std::string::npos) << msg;
}

TEST(Config, UnstableDtRefusedWithBothValues) {
  const auto rc = parse_config_text(kMinimal);
  const double limit = rc.sim.dt;
  char dt_text[64];
  std::snprintf(dt_text, sizeof dt_text, "dt = %.9g\n", 1.5 * limit);
  const auto msg = expect_config_error(std::string(kMinimal) + dt_text);
  char a[32], b[32];
  std::snprintf(a, sizeof a, "%.9g", 1.5 * limit);
  std::snprintf(b, sizeof b, "%.9g", limit);
  EXPECT_NE(msg.find(a), std::string::npos) << msg;
  EXPECT_NE(msg.find(b), std::string::npos) << msg;
  const auto ok = parse_config_text(std::string(kMinimal) + dt_text + "allow_unstable = true\n");
  EXPECT_NEAR(ok.sim.dt, 1.5 * limit, 1e-9 * limit);
}

TEST(Config, RejectsMistakes) {
  const std::string base = kMinimal;
  EXPECT_NE(expect_config_error(base + "stpes = 4\n").find("unknown key 'stpes'"),
            std::string::npos);
  EXPECT_NE(expect_config_error(base + "nx = 30\n").find("nx"), std::string::npos);
  std::string no_steps = base;
  no_steps.erase(no_steps.find("steps = 40\n"), 11);
  EXPECT_NE(expect_config_error(no_steps).find("steps"), std::string::npos);
  std::string no_v = base;
  no_v.erase(no_v.find("v_const = 1500\n"), 15);
  expect_config_error(no_v);
  expect_config_error(base + "receiver = 24 0 0\n");
  expect_config_error(base + "source = 1 1 1\n");
  expect_config_error(base + "strategy = fft\n");
  expect_config_error(base + "boundary = pml\n");
  expect_config_error(base + "mesh = 2by2\n");
  expect_config_error(base + "working_precision = 16\n");
  expect_config_error(base + "velocity_file = /nonexistent.wvf\n");
  expect_config_error(base + "just some words\n");
  EXPECT_THROW(parse_config("/nonexistent/config.cfg"), ConfigError);
}

TEST(Config, VelocityFileMustMatchGrid) {
  TempDir dir;
  std::string text = kMinimal;
  text.erase(text.find("v_const = 1500\n"), 15);
  write_volume(dir.file("v.wvf"), VelocityModel<float>(Grid{24, 20, 16, 10, 10, 10}, 3000.0f));
  write_volume(dir.file("w.wvf"), VelocityModel<float>(Grid{24, 20, 15, 10, 10, 10}, 3000.0f));
  const auto rc = parse_config_text(text + "velocity_file = " + dir.file("v.wvf") + "\n");
  EXPECT_EQ(rc.v_max, 3000.0);
  EXPECT_EQ(rc.velocity<double>().values()[7], 3000.0);
  expect_config_error(text + "velocity_file = " + dir.file("w.wvf") + "\n");
}

TEST(Config, MeshParsing) {
  EXPECT_EQ(parse_mesh("2x3"), (std::pair<std::size_t, std::size_t>{2, 3}));
  EXPECT_EQ(parse_mesh("4*1"), (std::pair<std::size_t, std::size_t>{4, 1}));
  EXPECT_THROW(parse_mesh("0x2"), InvalidArgument);
  EXPECT_THROW(parse_mesh("2"), InvalidArgument);
  EXPECT_THROW(parse_mesh("ax2"), InvalidArgument);
}

#ifdef FDWAVE_CLI_PATH

namespace {

struct Run {
  int code;
  std::string out;
};

Run cli(const std::string& args, const TempDir& dir) {
  const std::string out = dir.file("stdout.txt");
  const std::string cmd = std::string("cd '") + dir.path().string() + "' && '" + FDWAVE_CLI_PATH +
                          "' " + args + " > '" + out + "' 2> '" + dir.file("stderr.txt") + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out)};
}

}  // namespace

TEST(Cli, ExitCodes) {
  TempDir dir;
  EXPECT_EQ(cli("coeffs --order 8", dir).code, 0);
  EXPECT_EQ(cli("coeffs --order 7", dir).code, 1);
  EXPECT_EQ(cli("coeffs --order 8 --frobnicate", dir).code, 1);
  EXPECT_EQ(cli("", dir).code, 1);
  EXPECT_EQ(cli("nonsense", dir).code, 1);
  EXPECT_EQ(cli("dispersion --ppw-min 1.5", dir).code, 1);
  EXPECT_EQ(cli("bench --mesh 2by2", dir).code, 1);
  EXPECT_EQ(cli("simulate --config missing.cfg", dir).code, 2);
  spit(dir.file("bad.cfg"), std::string(kMinimal) + "dt = 1\n");
  EXPECT_EQ(cli("simulate --config bad.cfg", dir).code, 2);
  spit(dir.file("a.csv"), "t,recv_0\n0.1,1\n");
  spit(dir.file("b.csv"), "t,recv_0,recv_1\n0.1,1,2\n");
  EXPECT_EQ(cli("misfit --mod a.csv --obs b.csv", dir).code, 2);
}

TEST(Cli, HelpListsEveryFlag) {
  TempDir dir;
  const std::map<std::string, std::vector<std::string>> flags = {
      {"coeffs", {"--order"}},
      {"dispersion", {"--orders", "--ppw-min", "--ppw-max", "--samples"}},
      {"simulate", {"--config", "--mesh"}},
      {"misfit", {"--mod", "--obs"}},
      {"bench",
       {"--nx", "--ny", "--nz", "--steps", "--order", "--strategy", "--mesh", "--repeats", "--out",
        "--arch", "--block-size", "--precision"}},
  };
  for (const auto& [sub, names] : flags) {
    const auto r = cli(sub + " --help", dir);
    EXPECT_EQ(r.code, 0) << sub;
    for (const auto& f : names) EXPECT_NE(r.out.find(f), std::string::npos) << sub << " " << f;
  }
}

TEST(Cli, CoeffsCsv) {
  TempDir dir;
  const auto r = cli("coeffs --order 2", dir);
  EXPECT_EQ(r.out, "offset,weight\n-1,1\n0,-2\n1,1\n");
}

TEST(Cli, DispersionCsv) {
  TempDir dir;
  const auto r = cli("dispersion --orders 4,16 --ppw-min 3 --ppw-max 12 --samples 3", dir);
  ASSERT_EQ(r.code, 0);
  std::istringstream is(r.out);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "order,ppw,phase_error");
  std::vector<std::string> rows;
  while (std::getline(is, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_EQ(rows[1].substr(0, 4), "4,6,");
  EXPECT_EQ(rows[5].substr(0, 6), "16,12,");
}

TEST(Cli, SimulateIsReproducibleAndMeshIndependent) {
  TempDir dir;
  spit(dir.file("run.cfg"), std::string(kMinimal) +
                                "boundary = sponge 4\nsnapshot_every = 20\nsnapshot_prefix = s_\n"
                                "traces_out = t.csv\nfinal_out = f.wvf\n");
  const auto first = cli("simulate --config run.cfg", dir);
  ASSERT_EQ(first.code, 0) << slurp(dir.file("stderr.txt"));
  EXPECT_NE(first.out.find("halo_bytes_per_step 0"), std::string::npos) << first.out;
  const std::string traces = slurp(dir.file("t.csv"));
  const std::string final_field = slurp(dir.file("f.wvf"));
  EXPECT_EQ(traces.substr(0, 9), "t,recv_0\n");
  EXPECT_EQ(final_field.size(), 28u + 4u * 24 * 20 * 16);
  EXPECT_TRUE(fs::exists(dir.file("s_20.wvf")));
  EXPECT_TRUE(fs::exists(dir.file("s_40.wvf")));

  ASSERT_EQ(cli("simulate --config run.cfg", dir).code, 0);
  EXPECT_EQ(slurp(dir.file("t.csv")), traces);
  EXPECT_EQ(slurp(dir.file("f.wvf")), final_field);

  const auto meshed = cli("simulate --config run.cfg --mesh 2x2", dir);
  ASSERT_EQ(meshed.code, 0);
  EXPECT_NE(meshed.out.find("halo_bytes_per_step " + std::to_string(2 * 2 * 4 * 4 * 16 * 22)),
            std::string::npos)
      << meshed.out;
  EXPECT_EQ(slurp(dir.file("t.csv")), traces);
  EXPECT_EQ(slurp(dir.file("f.wvf")), final_field);

  std::filesystem::copy_file(dir.file("t.csv"), dir.file("obs.csv"));
  const auto m = cli("misfit --mod t.csv --obs obs.csv", dir);
  EXPECT_EQ(m.code, 0);
  EXPECT_EQ(m.out, "misfit 0\nrecv_0 0\n");
}

TEST(Cli, WorkingPrecision64) {
  TempDir dir;
  spit(dir.file("a.cfg"), std::string(kMinimal) + "traces_out = a.csv\n");
  spit(dir.file("b.cfg"), std::string(kMinimal) + "traces_out = b.csv\nworking_precision = 64\n");
  ASSERT_EQ(cli("simulate --config a.cfg", dir).code, 0);
  ASSERT_EQ(cli("simulate --config b.cfg", dir).code, 0);
  const auto a = read_traces_csv(dir.file("a.csv")), b = read_traces_csv(dir.file("b.csv"));
  EXPECT_NE(a, b);
  double peak = 0.0;
  for (double v : b.data()) peak = std::max(peak, std::abs(v));
  EXPECT_GT(peak, 0.0);
  EXPECT_LE(std::sqrt(misfit(a, b).value), 1e-4 * peak * std::sqrt(double(b.data().size())));
}

TEST(Cli, BenchWritesReport) {
  TempDir dir;
  const auto r = cli(
      "bench --nx 24 --ny 24 --nz 24 --steps 5 --order 8 --strategy all --mesh 1x2 "
      "--repeats 1 --arch testbox --out r.csv",
      dir);
  ASSERT_EQ(r.code, 0) << slurp(dir.file("stderr.txt"));
  const auto csv = slurp(dir.file("r.csv"));
  EXPECT_EQ(csv, r.out);
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, kBenchCsvHeader);
  int rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    EXPECT_EQ(line.substr(0, 23), "testbox,8,24,24,24,1x2,");
  }
  EXPECT_EQ(rows, 3);
}

#endif
