#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "errors.hpp"
#include "grid.hpp"
#include "operators.hpp"
#include "propagator.hpp"
#include "stencil.hpp"

namespace fdwave {

// ---------------------------------------------------------------------------
// Volume files
//
//   offset  size  content
//        0     4  magic "WVF1"
//        4    12  nx, ny, nz      uint32 little-endian
//       16    12  dx, dy, dz      float32 little-endian, meters
//       28  4*N   samples         float32 little-endian, x fastest, then y, z
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> kVolumeMagic = {'W', 'V', 'F', '1'};
inline constexpr std::size_t kVolumeHeaderBytes = 28;

struct Volume {
  Grid grid;
  std::vector<float> values;
};

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>((v >> (8 * b)) & 0xFFu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::vector<unsigned char> encode_volume(const Grid& grid, std::span<const float> values) {
  if (values.size() != grid.cells()) {
    throw InvalidArgument("volume value count does not match the grid");
  }
  constexpr auto u32max = std::numeric_limits<std::uint32_t>::max();
  if (grid.nx > u32max || grid.ny > u32max || grid.nz > u32max) {
    throw InvalidArgument("volume dimension exceeds 32 bits");
  }
  std::vector<unsigned char> out;
  out.reserve(kVolumeHeaderBytes + 4 * values.size());
  out.insert(out.end(), kVolumeMagic.begin(), kVolumeMagic.end());
  detail::put_u32(out, static_cast<std::uint32_t>(grid.nx));
  detail::put_u32(out, static_cast<std::uint32_t>(grid.ny));
  detail::put_u32(out, static_cast<std::uint32_t>(grid.nz));
  for (double h : {grid.dx, grid.dy, grid.dz}) {
    detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(h)));
  }
  for (float v : values) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline Volume decode_volume(std::span<const unsigned char> bytes) {
  if (bytes.size() < kVolumeHeaderBytes) {
    throw FormatError("truncated volume header: " + std::to_string(bytes.size()) + " of " +
                          std::to_string(kVolumeHeaderBytes) + " bytes",
                      bytes.size());
  }
  if (!std::equal(kVolumeMagic.begin(), kVolumeMagic.end(), bytes.begin())) {
    throw FormatError("bad magic, expected WVF1", 0);
  }
  const unsigned char* p = bytes.data();
  std::array<std::uint64_t, 3> n{};
  for (std::size_t a = 0; a < 3; ++a) {
    n[a] = detail::get_u32(p + 4 + 4 * a);
    if (n[a] == 0) throw FormatError("volume dimension is zero", 4 + 4 * a);
  }
  std::array<float, 3> h{};
  for (std::size_t a = 0; a < 3; ++a) {
    h[a] = std::bit_cast<float>(detail::get_u32(p + 16 + 4 * a));
    if (!(h[a] > 0.0f) || !std::isfinite(h[a])) {
      throw FormatError("volume spacing must be positive and finite", 16 + 4 * a);
    }
  }
  // 3 x 32-bit dimensions fit in 96 bits; reject anything beyond size_t.
  const std::uint64_t limit = std::numeric_limits<std::size_t>::max() / 4;
  if (n[0] > limit / n[1] || n[0] * n[1] > limit / n[2]) {
    throw FormatError("volume dimensions overflow", 4);
  }
  const std::size_t cells = static_cast<std::size_t>(n[0] * n[1] * n[2]);
  const std::size_t payload = bytes.size() - kVolumeHeaderBytes;
  if (payload < 4 * cells) {
    throw FormatError("truncated payload: expected " + std::to_string(4 * cells) +
                          " bytes, found " + std::to_string(payload),
                      bytes.size());
  }
  if (payload > 4 * cells) {
    throw FormatError("trailing bytes after payload", kVolumeHeaderBytes + 4 * cells);
  }
  Volume v;
  v.grid = Grid{static_cast<std::size_t>(n[0]), static_cast<std::size_t>(n[1]),
                static_cast<std::size_t>(n[2]), h[0], h[1], h[2]};
  v.values.resize(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    v.values[c] = std::bit_cast<float>(detail::get_u32(p + kVolumeHeaderBytes + 4 * c));
  }
  return v;
}

inline void write_volume(const std::string& path, const Grid& grid, std::span<const float> values) {
  const auto bytes = encode_volume(grid, values);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing '" + path + "'");
}

template <typename T>
void write_volume(const std::string& path, const Field<T>& field) {
  if constexpr (std::is_same_v<T, float>) {
    write_volume(path, field.grid(), field.values());
  } else {
    std::vector<float> v(field.values().begin(), field.values().end());
    write_volume(path, field.grid(), v);
  }
}

inline Volume read_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open volume '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  return decode_volume(bytes);
}

// ---------------------------------------------------------------------------
// Simulation config files: `key = value` lines, `#` starts a comment.
// ---------------------------------------------------------------------------

enum class WorkingPrecision { Float32, Float64 };

struct OutputPaths {
  std::string traces;           // trace CSV
  std::string final_field;      // volume of the last time level
  std::string snapshot_prefix;  // <prefix><step>.wvf per snapshot
};

/// A parsed config file: the validated SimConfig plus what is needed to
/// build the velocity model and write outputs.
struct RunConfig {
  SimConfig sim;
  std::optional<double> v_const;
  std::string velocity_file;
  std::vector<float> velocity_values;  // loaded from velocity_file
  WorkingPrecision working = WorkingPrecision::Float32;
  std::size_t mesh_rows = 1;
  std::size_t mesh_cols = 1;
  OutputPaths outputs;
  double v_max = 0.0;
  bool dt_auto = false;

  template <typename T>
  VelocityModel<T> velocity() const {
    if (v_const) return VelocityModel<T>(sim.grid, static_cast<T>(*v_const));
    std::vector<T> v(velocity_values.begin(), velocity_values.end());
    return VelocityModel<T>(sim.grid, std::move(v));
  }
};

inline constexpr std::array<const char*, 24> kConfigKeys = {
    "nx",           "ny",         "nz",         "dx",          "dy",
    "dz",           "v_const",    "velocity_file", "order",    "strategy",
    "block_size",   "precision",  "working_precision", "dt",   "steps",
    "source",       "receiver",   "boundary",   "snapshot_every", "snapshot_prefix",
    "traces_out",   "final_out",  "allow_unstable", "mesh"};

/// Parses "RxC" (also accepts "R*C").
inline std::pair<std::size_t, std::size_t> parse_mesh(const std::string& text) {
  const auto sep = text.find_first_of("xX*");
  try {
    if (sep == std::string::npos) throw std::invalid_argument(text);
    std::size_t used = 0;
    const std::string a = text.substr(0, sep);
    const std::string b = text.substr(sep + 1);
    const long r = std::stol(a, &used);
    if (used != a.size()) throw std::invalid_argument(a);
    const long c = std::stol(b, &used);
    if (used != b.size()) throw std::invalid_argument(b);
    if (r < 1 || c < 1) throw std::invalid_argument(text);
    return {static_cast<std::size_t>(r), static_cast<std::size_t>(c)};
  } catch (const std::exception&) {
    throw InvalidArgument("mesh must look like RxC with R, C >= 1, got '" + text + "'");
  }
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> words(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

struct ConfigLine {
  std::size_t line = 0;
  std::string value;
};

class ConfigReader {
 public:
  ConfigReader(std::string source, std::multimap<std::string, ConfigLine> entries)
      : source_(std::move(source)), entries_(std::move(entries)) {}

  [[noreturn]] void fail(const ConfigLine& at, const std::string& msg) const {
    throw ConfigError(source_ + ":" + std::to_string(at.line) + ": " + msg);
  }
  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(source_ + ": " + msg); }

  std::optional<ConfigLine> single(const std::string& key) const {
    const auto n = entries_.count(key);
    if (n == 0) return std::nullopt;
    auto it = entries_.find(key);
    if (n > 1) fail(std::next(it)->second, "key '" + key + "' given more than once");
    return it->second;
  }

  std::vector<ConfigLine> all(const std::string& key) const {
    std::vector<ConfigLine> out;
    auto [b, e] = entries_.equal_range(key);
    for (auto it = b; it != e; ++it) out.push_back(it->second);
    return out;
  }

  ConfigLine required(const std::string& key) const {
    auto v = single(key);
    if (!v) fail("missing required key '" + key + "'");
    return *v;
  }

  double to_double(const ConfigLine& at, const std::string& text, const std::string& what) const {
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
      return v;
    } catch (const std::exception&) {
      fail(at, "invalid number for " + what + ": '" + text + "'");
    }
  }

  std::size_t to_size(const ConfigLine& at, const std::string& text, const std::string& what) const {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(text, &used);
      if (used != text.size() || v < 0) throw std::invalid_argument(text);
      return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      fail(at, "invalid non-negative integer for " + what + ": '" + text + "'");
    }
  }

  bool to_bool(const ConfigLine& at, const std::string& text) const {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    fail(at, "expected true or false, got '" + text + "'");
  }

 private:
  std::string source_;
  std::multimap<std::string, ConfigLine> entries_;
};

}  // namespace detail

/// Parses and validates a config. `source` names the input in messages.
inline RunConfig parse_config_text(const std::string& text, const std::string& source = "<config>") {
  std::multimap<std::string, detail::ConfigLine> entries;
  const std::set<std::string> known(kConfigKeys.begin(), kConfigKeys.end());
  {
    std::istringstream is(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(is, raw)) {
      ++line_no;
      const auto hash = raw.find('#');
      const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
      }
      const std::string key = detail::trim(line.substr(0, eq));
      const std::string value = detail::trim(line.substr(eq + 1));
      if (!known.count(key)) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
      }
      if (value.empty()) {
        throw ConfigError(source + ":" + std::to_string(line_no) + ": empty value for '" + key +
                          "'");
      }
      entries.emplace(key, detail::ConfigLine{line_no, value});
    }
  }
  const detail::ConfigReader in(source, std::move(entries));
  RunConfig rc;
  SimConfig& sim = rc.sim;

  const auto size_key = [&](const char* key) {
    const auto l = in.required(key);
    return in.to_size(l, l.value, key);
  };
  const auto double_key = [&](const char* key) {
    const auto l = in.required(key);
    return in.to_double(l, l.value, key);
  };
  sim.grid = Grid{size_key("nx"), size_key("ny"), size_key("nz"), double_key("dx"),
                  double_key("dy"), double_key("dz")};
  try {
    sim.grid.validate();
  } catch (const InvalidArgument& e) {
    in.fail(e.what());
  }

  {
    const auto l = in.required("order");
    long order = 0;
    try {
      std::size_t used = 0;
      order = std::stol(l.value, &used);
      if (used != l.value.size()) throw std::invalid_argument(l.value);
    } catch (const std::exception&) {
      in.fail(l, "invalid order '" + l.value + "'; accepted orders are " + supported_orders_text());
    }
    if (!is_supported_order(static_cast<int>(order))) {
      in.fail(l, "unsupported order " + l.value + "; accepted orders are " +
                     supported_orders_text());
    }
    sim.order = static_cast<int>(order);
  }
  sim.n_steps = size_key("steps");
  if (sim.n_steps < 1) in.fail(in.required("steps"), "steps must be >= 1");

  try {
    if (auto l = in.single("strategy")) sim.strategy = parse_strategy(l->value);
    if (auto l = in.single("precision")) sim.precision = parse_precision(l->value);
    if (auto l = in.single("mesh")) std::tie(rc.mesh_rows, rc.mesh_cols) = parse_mesh(l->value);
  } catch (const InvalidArgument& e) {
    in.fail(e.what());
  }
  if (auto l = in.single("block_size")) {
    sim.block_size = in.to_size(*l, l->value, "block_size");
    if (sim.block_size < 1) in.fail(*l, "block_size must be >= 1");
  }
  if (auto l = in.single("working_precision")) {
    if (l->value == "32" || l->value == "float32") {
      rc.working = WorkingPrecision::Float32;
    } else if (l->value == "64" || l->value == "float64") {
      rc.working = WorkingPrecision::Float64;
    } else {
      in.fail(*l, "working_precision must be 32 or 64");
    }
  }
  if (auto l = in.single("allow_unstable")) sim.allow_unstable = in.to_bool(*l, l->value);
  if (auto l = in.single("snapshot_every")) {
    sim.snapshot_every = in.to_size(*l, l->value, "snapshot_every");
  }
  if (auto l = in.single("snapshot_prefix")) rc.outputs.snapshot_prefix = l->value;
  if (auto l = in.single("traces_out")) rc.outputs.traces = l->value;
  if (auto l = in.single("final_out")) rc.outputs.final_field = l->value;

  if (auto l = in.single("boundary")) {
    const auto w = detail::words(l->value);
    if (w[0] == "dirichlet" || w[0] == "dirichlet_zero") {
      if (w.size() != 1) in.fail(*l, "dirichlet takes no parameters");
      sim.boundary = Boundary::dirichlet();
    } else if (w[0] == "sponge") {
      if (w.size() > 3) in.fail(*l, "usage: boundary = sponge [width [decay]]");
      sim.boundary = Boundary::sponge();
      if (w.size() > 1) sim.boundary.width = in.to_size(*l, w[1], "sponge width");
      if (w.size() > 2) sim.boundary.decay = in.to_double(*l, w[2], "sponge decay");
    } else {
      in.fail(*l, "boundary must be 'dirichlet' or 'sponge [width [decay]]'");
    }
  }

  const auto vc = in.single("v_const");
  const auto vf = in.single("velocity_file");
  if (vc && vf) in.fail(*vf, "give either v_const or velocity_file, not both");
  if (!vc && !vf) in.fail("missing velocity: set v_const or velocity_file");
  if (vc) {
    const double v = in.to_double(*vc, vc->value, "v_const");
    if (!(v > 0.0)) in.fail(*vc, "v_const must be positive");
    rc.v_const = v;
    rc.v_max = v;
  } else {
    rc.velocity_file = vf->value;
    Volume vol;
    try {
      vol = read_volume(vf->value);
    } catch (const std::exception& e) {
      in.fail(*vf, e.what());
    }
    if (!vol.grid.same_shape(sim.grid)) {
      in.fail(*vf, "velocity volume is " + std::to_string(vol.grid.nx) + "x" +
                       std::to_string(vol.grid.ny) + "x" + std::to_string(vol.grid.nz) +
                       ", grid is " + std::to_string(sim.grid.nx) + "x" +
                       std::to_string(sim.grid.ny) + "x" + std::to_string(sim.grid.nz));
    }
    for (float v : vol.values) {
      if (!(v > 0.0f) || !std::isfinite(v)) in.fail(*vf, "velocity values must be positive");
      rc.v_max = std::max(rc.v_max, static_cast<double>(v));
    }
    rc.velocity_values = std::move(vol.values);
  }

  const auto coeffs = fd_coefficients(sim.order);
  try {
    sim.grid.require_stencil(coeffs.half_width());
  } catch (const InvalidArgument& e) {
    in.fail(e.what());
  }
  const double dt_limit = kCflSafety * cfl_max_dt(rc.v_max, sim.grid, coeffs);
  const auto dt_line = in.single("dt");
  if (!dt_line || dt_line->value == "auto") {
    sim.dt = dt_limit;
    rc.dt_auto = true;
  } else {
    sim.dt = in.to_double(*dt_line, dt_line->value, "dt");
    if (!(sim.dt > 0.0)) in.fail(*dt_line, "dt must be positive");
    if (sim.dt > dt_limit && !sim.allow_unstable) {
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "dt = %.9g s exceeds the stable limit 0.9 * cfl_max_dt = %.9g s "
                    "(set allow_unstable = true to override)",
                    sim.dt, dt_limit);
      in.fail(*dt_line, buf);
    }
  }

  const auto index3 = [&](const detail::ConfigLine& l, const std::vector<std::string>& w,
                          const char* what) {
    const Index3 c{in.to_size(l, w[0], what), in.to_size(l, w[1], what), in.to_size(l, w[2], what)};
    if (!sim.grid.contains(c)) in.fail(l, std::string(what) + " position outside the grid");
    return c;
  };
  for (const auto& l : in.all("source")) {
    const auto w = detail::words(l.value);
    if (w.size() < 4 || w.size() > 5) {
      in.fail(l, "usage: source = i j k peak_frequency_hz [amplitude]");
    }
    SourceTerm s;
    s.position = index3(l, w, "source");
    s.peak_frequency = in.to_double(l, w[3], "source frequency");
    if (!(s.peak_frequency > 0.0)) in.fail(l, "source frequency must be positive");
    const double amp = w.size() == 5 ? in.to_double(l, w[4], "source amplitude") : 1.0;
    s.wavelet = ricker(s.peak_frequency, sim.dt, sim.n_steps);
    for (double& a : s.wavelet) a *= amp;
    sim.sources.push_back(std::move(s));
  }
  for (const auto& l : in.all("receiver")) {
    const auto w = detail::words(l.value);
    if (w.size() != 3) in.fail(l, "usage: receiver = i j k");
    sim.receivers.push_back(index3(l, w, "receiver"));
  }

  try {
    validate_config(sim, rc.v_max);
  } catch (const CflViolation&) {
    throw;
  } catch (const InvalidArgument& e) {
    in.fail(e.what());
  }
  return rc;
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace fdwave
