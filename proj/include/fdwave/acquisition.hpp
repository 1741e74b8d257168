#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "grid.hpp"

namespace fdwave {

/// Receiver recordings: one row per receiver, one column per recorded step.
/// Sample n is taken at time t0 + n*dt.
class TraceSet {
 public:
  TraceSet() = default;
  TraceSet(std::vector<Index3> receivers, double dt, std::size_t n_steps, double t0 = 0.0)
      : receivers_(std::move(receivers)),
        rows_(receivers_.size()),
        steps_(n_steps),
        dt_(dt),
        t0_(t0),
        data_(rows_ * n_steps, 0.0) {}

  /// Receivers whose cell positions are unknown (e.g. loaded from CSV).
  static TraceSet anonymous(std::size_t n_receivers, double dt, std::size_t n_steps,
                            double t0 = 0.0) {
    TraceSet t;
    t.rows_ = n_receivers;
    t.steps_ = n_steps;
    t.dt_ = dt;
    t.t0_ = t0;
    t.data_.assign(n_receivers * n_steps, 0.0);
    return t;
  }

  const std::vector<Index3>& receivers() const noexcept { return receivers_; }
  std::size_t n_receivers() const noexcept { return rows_; }
  std::size_t n_steps() const noexcept { return steps_; }
  double dt() const noexcept { return dt_; }
  double t0() const noexcept { return t0_; }
  double time(std::size_t n) const noexcept { return t0_ + static_cast<double>(n) * dt_; }

  double& at(std::size_t r, std::size_t n) noexcept { return data_[r * steps_ + n]; }
  double at(std::size_t r, std::size_t n) const noexcept { return data_[r * steps_ + n]; }

  std::vector<double> trace(std::size_t r) const {
    return {data_.begin() + static_cast<long>(r * steps_),
            data_.begin() + static_cast<long>((r + 1) * steps_)};
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool all_finite() const noexcept {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const TraceSet&, const TraceSet&) = default;

 private:
  std::vector<Index3> receivers_;
  std::size_t rows_ = 0;
  std::size_t steps_ = 0;
  double dt_ = 0.0;
  double t0_ = 0.0;
  std::vector<double> data_;
};

struct MisfitResult {
  double value = 0.0;
  std::vector<double> per_receiver;
};

/// Squared L2 data misfit, sum over all samples of (d_mod - d_obs)^2.
inline MisfitResult misfit(const TraceSet& d_mod, const TraceSet& d_obs) {
  if (d_mod.n_receivers() != d_obs.n_receivers() || d_mod.n_steps() != d_obs.n_steps()) {
    throw InvalidArgument("trace shapes differ: " + std::to_string(d_mod.n_receivers()) + "x" +
                          std::to_string(d_mod.n_steps()) + " vs " +
                          std::to_string(d_obs.n_receivers()) + "x" +
                          std::to_string(d_obs.n_steps()));
  }
  if (!d_mod.receivers().empty() && !d_obs.receivers().empty() &&
      d_mod.receivers() != d_obs.receivers()) {
    throw InvalidArgument("receiver positions differ between trace sets");
  }
  const double scale = std::max(std::abs(d_mod.dt()), std::abs(d_obs.dt()));
  if (std::abs(d_mod.dt() - d_obs.dt()) > 1e-6 * scale) {
    throw InvalidArgument("trace sampling intervals differ: " + std::to_string(d_mod.dt()) +
                          " vs " + std::to_string(d_obs.dt()));
  }
  MisfitResult out;
  out.per_receiver.resize(d_mod.n_receivers(), 0.0);
  for (std::size_t r = 0; r < d_mod.n_receivers(); ++r) {
    double s = 0.0;
    for (std::size_t n = 0; n < d_mod.n_steps(); ++n) {
      const double d = d_mod.at(r, n) - d_obs.at(r, n);
      s += d * d;
    }
    out.per_receiver[r] = s;
    out.value += s;
  }
  return out;
}

/// CSV with header `t,recv_0,recv_1,...`, one row per sample, 9 significant
/// digits, LF line endings.
inline void write_traces_csv(std::ostream& os, const TraceSet& traces) {
  os << 't';
  for (std::size_t r = 0; r < traces.n_receivers(); ++r) os << ",recv_" << r;
  os << '\n';
  char buf[64];
  for (std::size_t n = 0; n < traces.n_steps(); ++n) {
    std::snprintf(buf, sizeof buf, "%.9g", traces.time(n));
    os << buf;
    for (std::size_t r = 0; r < traces.n_receivers(); ++r) {
      std::snprintf(buf, sizeof buf, "%.9g", traces.at(r, n));
      os << ',' << buf;
    }
    os << '\n';
  }
}

inline void write_traces_csv(const std::string& path, const TraceSet& traces) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_traces_csv(os, traces);
  if (!os) throw std::runtime_error("failed writing '" + path + "'");
}

inline TraceSet read_traces_csv(std::istream& is, const std::string& name = "<stream>") {
  std::string line;
  if (!std::getline(is, line)) throw InvalidArgument(name + ": empty trace file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.empty() || header[0] != "t") {
    throw InvalidArgument(name + ": header must start with 't'");
  }
  for (std::size_t r = 1; r < header.size(); ++r) {
    if (header[r] != "recv_" + std::to_string(r - 1)) {
      throw InvalidArgument(name + ": unexpected column '" + header[r] + "'");
    }
  }
  const std::size_t n_recv = header.size() - 1;
  std::vector<double> times;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw InvalidArgument(name + ": line " + std::to_string(line_no) + ": bad number '" +
                              cell + "'");
      }
    }
    if (vals.size() != n_recv + 1) {
      throw InvalidArgument(name + ": line " + std::to_string(line_no) + " has " +
                            std::to_string(vals.size()) + " columns, expected " +
                            std::to_string(n_recv + 1));
    }
    times.push_back(vals[0]);
    rows.emplace_back(vals.begin() + 1, vals.end());
  }
  const std::size_t n = rows.size();
  const double t0 = n > 0 ? times.front() : 0.0;
  const double dt = n > 1 ? (times.back() - times.front()) / static_cast<double>(n - 1) : t0;
  TraceSet out = TraceSet::anonymous(n_recv, dt, n, t0);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t r = 0; r < n_recv; ++r) out.at(r, s) = rows[s][r];
  }
  return out;
}

inline TraceSet read_traces_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open trace file '" + path + "'");
  return read_traces_csv(is, path);
}

}  // namespace fdwave
