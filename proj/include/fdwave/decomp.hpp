#pragma once

// Domain decomposition over an R x C worker mesh. Mesh columns split the x
// axis, mesh rows split the y axis; z is never split. Each worker is a thread
// owning a local array with a ghost ring of `halo width` cells on its four
// x/y sides. Halo slabs travel only as messages through per-worker mailboxes,
// and a barrier separates consecutive steps.

#include <algorithm>
#include <array>
#include <atomic>
#include <barrier>
#include <condition_variable>
#include <cstddef>
#include <cstring>
#include <deque>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "acquisition.hpp"
#include "errors.hpp"
#include "grid.hpp"
#include "operators.hpp"
#include "propagator.hpp"
#include "stencil.hpp"

namespace fdwave {

struct AxisRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end - begin; }
  bool contains(std::size_t v) const noexcept { return v >= begin && v < end; }
  friend bool operator==(const AxisRange&, const AxisRange&) = default;
};

struct WorkerExtent {
  std::size_t row = 0;  // mesh coordinate along y
  std::size_t col = 0;  // mesh coordinate along x
  AxisRange x;
  AxisRange y;
  AxisRange z;
};

class MeshPartition {
 public:
  MeshPartition() = default;
  MeshPartition(const Grid& grid, std::size_t rows, std::size_t cols, std::size_t half_width,
                std::vector<AxisRange> x_splits, std::vector<AxisRange> y_splits)
      : grid_(grid),
        rows_(rows),
        cols_(cols),
        half_width_(half_width),
        x_splits_(std::move(x_splits)),
        y_splits_(std::move(y_splits)) {}

  const Grid& grid() const noexcept { return grid_; }
  std::size_t mesh_rows() const noexcept { return rows_; }
  std::size_t mesh_cols() const noexcept { return cols_; }
  std::size_t workers() const noexcept { return rows_ * cols_; }
  std::size_t half_width() const noexcept { return half_width_; }
  const std::vector<AxisRange>& x_splits() const noexcept { return x_splits_; }
  const std::vector<AxisRange>& y_splits() const noexcept { return y_splits_; }

  /// Row-major worker id.
  std::size_t id(std::size_t row, std::size_t col) const noexcept { return row * cols_ + col; }

  WorkerExtent worker(std::size_t id) const noexcept {
    const std::size_t r = id / cols_;
    const std::size_t c = id % cols_;
    return {r, c, x_splits_[c], y_splits_[r], AxisRange{0, grid_.nz}};
  }

  /// Worker whose subdomain holds the global cell.
  std::size_t owner(const Index3& cell) const noexcept {
    std::size_t c = 0;
    while (!x_splits_[c].contains(cell.i)) ++c;
    std::size_t r = 0;
    while (!y_splits_[r].contains(cell.j)) ++r;
    return id(r, c);
  }

 private:
  Grid grid_{};
  std::size_t rows_ = 1;
  std::size_t cols_ = 1;
  std::size_t half_width_ = 0;
  std::vector<AxisRange> x_splits_;
  std::vector<AxisRange> y_splits_;
};

namespace detail {

// Even split; the first n % parts pieces get one extra cell.
inline std::vector<AxisRange> split_axis(std::size_t n, std::size_t parts) {
  std::vector<AxisRange> out;
  const std::size_t base = n / parts;
  const std::size_t extra = n % parts;
  std::size_t at = 0;
  for (std::size_t p = 0; p < parts; ++p) {
    const std::size_t len = base + (p < extra ? 1 : 0);
    out.push_back({at, at + len});
    at += len;
  }
  return out;
}

}  // namespace detail

inline MeshPartition partition(const Grid& grid, std::size_t mesh_rows, std::size_t mesh_cols,
                               std::size_t half_width) {
  grid.validate();
  if (mesh_rows == 0 || mesh_cols == 0) throw PartitionError("mesh shape must be at least 1x1");
  auto xs = detail::split_axis(grid.nx, mesh_cols);
  auto ys = detail::split_axis(grid.ny, mesh_rows);
  const std::size_t min_cells = std::max<std::size_t>(half_width, 1);
  const auto thin = [&](const std::vector<AxisRange>& s) {
    return std::any_of(s.begin(), s.end(),
                       [&](const AxisRange& r) { return r.size() < min_cells; });
  };
  if ((mesh_cols > 1 && thin(xs)) || (mesh_rows > 1 && thin(ys))) {
    throw PartitionError("mesh " + std::to_string(mesh_rows) + "x" + std::to_string(mesh_cols) +
                         " leaves subdomains thinner than the halo width " +
                         std::to_string(half_width) + " on grid " + std::to_string(grid.nx) +
                         "x" + std::to_string(grid.ny) + "x" + std::to_string(grid.nz));
  }
  return MeshPartition(grid, mesh_rows, mesh_cols, half_width, std::move(xs), std::move(ys));
}

enum class Face : std::size_t { XMinus = 0, XPlus = 1, YMinus = 2, YPlus = 3 };

inline Face opposite(Face f) noexcept {
  switch (f) {
    case Face::XMinus: return Face::XPlus;
    case Face::XPlus: return Face::XMinus;
    case Face::YMinus: return Face::YPlus;
    case Face::YPlus: return Face::YMinus;
  }
  return f;
}

inline constexpr std::array<Face, 4> kFaces = {Face::XMinus, Face::XPlus, Face::YMinus,
                                               Face::YPlus};

struct HaloSpec {
  std::size_t width = 0;
  std::array<std::optional<std::size_t>, 4> neighbor;  // indexed by Face

  std::size_t neighbor_count() const noexcept {
    std::size_t n = 0;
    for (const auto& f : neighbor) n += f.has_value() ? 1 : 0;
    return n;
  }
};

inline HaloSpec halo_spec(const MeshPartition& p, std::size_t worker) {
  const WorkerExtent e = p.worker(worker);
  HaloSpec h;
  h.width = p.workers() > 1 ? p.half_width() : 0;
  if (e.col > 0) h.neighbor[0] = p.id(e.row, e.col - 1);
  if (e.col + 1 < p.mesh_cols()) h.neighbor[1] = p.id(e.row, e.col + 1);
  if (e.row > 0) h.neighbor[2] = p.id(e.row - 1, e.col);
  if (e.row + 1 < p.mesh_rows()) h.neighbor[3] = p.id(e.row + 1, e.col);
  return h;
}

/// A worker's storage: interior cells surrounded by a ghost ring of
/// halo.width cells in x and y. Ghosts on global-domain faces stay zero.
template <typename T>
struct Subdomain {
  std::size_t id = 0;
  WorkerExtent extent;
  HaloSpec halo;
  Grid local;             // array grid, interior plus ghost ring
  std::size_t step = 0;   // index of the step whose halos are exchanged next
  WaveField<T> current;

  Subdomain() = default;
  Subdomain(const MeshPartition& p, std::size_t worker)
      : id(worker), extent(p.worker(worker)), halo(halo_spec(p, worker)) {
    const Grid& g = p.grid();
    const std::size_t w = halo.width;
    local = Grid{extent.x.size() + 2 * w, extent.y.size() + 2 * w, g.nz, g.dx, g.dy, g.dz};
    current = WaveField<T>(local);
  }

  /// Local array index of a global cell owned by this worker.
  std::size_t local_index(const Index3& c) const noexcept {
    return local.index(c.i - extent.x.begin + halo.width, c.j - extent.y.begin + halo.width, c.k);
  }

  ActiveBox interior() const noexcept {
    const std::size_t w = halo.width;
    return {w, w + extent.x.size(), w, w + extent.y.size()};
  }
};

struct HaloMessage {
  std::size_t from = 0;
  std::size_t step = 0;
  Face face = Face::XMinus;  // ghost face of the receiver
  std::vector<unsigned char> payload;
};

/// Unbounded FIFO of halo messages addressed to one worker.
class Mailbox {
 public:
  void push(HaloMessage m) {
    {
      std::lock_guard lock(mu_);
      queue_.push_back(std::move(m));
    }
    cv_.notify_all();
  }

  /// Blocks for the next message; empty once the run is cancelled.
  std::optional<HaloMessage> pop(const std::atomic<bool>& cancelled) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !queue_.empty() || cancelled.load(); });
    if (queue_.empty()) return std::nullopt;
    HaloMessage m = std::move(queue_.front());
    queue_.pop_front();
    return m;
  }

  // Taking the lock orders the cancel flag against a waiter's predicate check.
  void wake() {
    { std::lock_guard lock(mu_); }
    cv_.notify_all();
  }

  std::size_t pending() const {
    std::lock_guard lock(mu_);
    return queue_.size();
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<HaloMessage> queue_;
};

/// Message transport between the workers of one partition.
class HaloNetwork {
 public:
  explicit HaloNetwork(std::size_t workers) : boxes_(workers) {}

  Mailbox& mailbox(std::size_t worker) { return boxes_[worker]; }
  std::atomic<bool>& cancelled() noexcept { return cancelled_; }

  void cancel() {
    cancelled_ = true;
    for (auto& b : boxes_) b.wake();
  }

  void count_bytes(std::size_t n) noexcept { bytes_ += n; }
  std::size_t bytes() const noexcept { return bytes_.load(); }

 private:
  std::vector<Mailbox> boxes_;
  std::atomic<bool> cancelled_{false};
  std::atomic<std::size_t> bytes_{0};
};

namespace detail {

struct SlabBox {
  std::size_t i0, i1, j0, j1;
};

// Interior slab adjacent to a face (what is sent across it).
template <typename T>
SlabBox send_slab(const Subdomain<T>& s, Face f) {
  const std::size_t w = s.halo.width;
  const std::size_t nx = s.extent.x.size();
  const std::size_t ny = s.extent.y.size();
  switch (f) {
    case Face::XMinus: return {w, 2 * w, w, w + ny};
    case Face::XPlus: return {nx, nx + w, w, w + ny};
    case Face::YMinus: return {w, w + nx, w, 2 * w};
    case Face::YPlus: return {w, w + nx, ny, ny + w};
  }
  return {};
}

// Ghost slab beyond a face (what is received for it).
template <typename T>
SlabBox ghost_slab(const Subdomain<T>& s, Face f) {
  const std::size_t w = s.halo.width;
  const std::size_t nx = s.extent.x.size();
  const std::size_t ny = s.extent.y.size();
  switch (f) {
    case Face::XMinus: return {0, w, w, w + ny};
    case Face::XPlus: return {w + nx, 2 * w + nx, w, w + ny};
    case Face::YMinus: return {w, w + nx, 0, w};
    case Face::YPlus: return {w, w + nx, w + ny, 2 * w + ny};
  }
  return {};
}

}  // namespace detail

/// Sends this worker's boundary slabs to every neighbor, tagged with its
/// current step. Returns the payload bytes sent.
template <typename T>
std::size_t post_halos(const Subdomain<T>& s, HaloNetwork& net) {
  std::size_t sent = 0;
  for (Face f : kFaces) {
    const auto& nb = s.halo.neighbor[static_cast<std::size_t>(f)];
    if (!nb) continue;
    const auto b = detail::send_slab(s, f);
    std::vector<T> data;
    data.reserve((b.i1 - b.i0) * (b.j1 - b.j0) * s.local.nz);
    for (std::size_t k = 0; k < s.local.nz; ++k) {
      for (std::size_t j = b.j0; j < b.j1; ++j) {
        for (std::size_t i = b.i0; i < b.i1; ++i) data.push_back(s.current(i, j, k));
      }
    }
    HaloMessage m{s.id, s.step, opposite(f), {}};
    m.payload.resize(data.size() * sizeof(T));
    std::memcpy(m.payload.data(), data.data(), m.payload.size());
    sent += m.payload.size();
    net.mailbox(*nb).push(std::move(m));
  }
  net.count_bytes(sent);
  return sent;
}

namespace detail {
struct Cancelled {};
}  // namespace detail

/// Receives one message per neighbor and copies it into the ghost ring.
/// Throws ProtocolError if a message belongs to a different step.
template <typename T>
void receive_halos(Subdomain<T>& s, HaloNetwork& net) {
  for (std::size_t n = 0; n < s.halo.neighbor_count(); ++n) {
    auto m = net.mailbox(s.id).pop(net.cancelled());
    if (!m) throw detail::Cancelled{};
    if (m->step != s.step) {
      throw ProtocolError("worker " + std::to_string(s.id) + " at step " + std::to_string(s.step) +
                          " received a halo for step " + std::to_string(m->step) +
                          " from worker " + std::to_string(m->from));
    }
    const auto b = detail::ghost_slab(s, m->face);
    const std::size_t count = (b.i1 - b.i0) * (b.j1 - b.j0) * s.local.nz;
    if (m->payload.size() != count * sizeof(T)) {
      throw ProtocolError("halo payload size mismatch at worker " + std::to_string(s.id));
    }
    std::vector<T> data(count);
    std::memcpy(data.data(), m->payload.data(), m->payload.size());
    std::size_t at = 0;
    for (std::size_t k = 0; k < s.local.nz; ++k) {
      for (std::size_t j = b.j0; j < b.j1; ++j) {
        for (std::size_t i = b.i0; i < b.i1; ++i) s.current(i, j, k) = data[at++];
      }
    }
  }
}

/// Exchanges halos among all subdomains from the calling thread. Returns the
/// bytes exchanged. All workers must be at the same step.
template <typename T>
std::size_t halo_exchange(std::vector<Subdomain<T>>& workers, const MeshPartition& p) {
  if (workers.size() != p.workers()) {
    throw ProtocolError("halo exchange needs one subdomain per mesh worker");
  }
  for (const auto& w : workers) {
    if (w.step != workers.front().step) {
      throw ProtocolError("step index mismatch: worker " + std::to_string(w.id) + " is at step " +
                          std::to_string(w.step) + ", worker " +
                          std::to_string(workers.front().id) + " at step " +
                          std::to_string(workers.front().step));
    }
  }
  HaloNetwork net(workers.size());
  std::size_t bytes = 0;
  for (const auto& w : workers) bytes += post_halos(w, net);
  for (auto& w : workers) receive_halos(w, net);
  return bytes;
}

/// Test and instrumentation hooks, called from worker threads.
struct DistributedOptions {
  std::function<void(std::size_t worker, std::size_t step)> before_compute;
  std::function<void(std::size_t worker, std::size_t step)> after_compute;
};

struct DistributedStats {
  std::size_t workers = 1;
  std::size_t halo_bytes_total = 0;
  std::size_t halo_bytes_per_step = 0;
};

namespace detail {

template <typename T>
struct WorkerState {
  Subdomain<T> sub;
  WaveField<T> prev;
  WaveField<T> next;
  std::optional<LeapfrogKernel<T>> kernel;
  std::vector<std::size_t> receivers;  // indices into config.receivers
  std::vector<std::size_t> sources;    // indices into config.sources
  TraceSet traces;
  std::vector<Snapshot<T>> snapshots;  // local layout
  std::exception_ptr error;
};

template <typename T>
void scatter(const WaveField<T>& global, const Subdomain<T>& s, WaveField<T>& local) {
  const auto box = s.interior();
  for (std::size_t k = 0; k < s.local.nz; ++k) {
    for (std::size_t j = box.j0; j < box.j1; ++j) {
      for (std::size_t i = box.i0; i < box.i1; ++i) {
        local(i, j, k) = global(s.extent.x.begin + i - box.i0, s.extent.y.begin + j - box.j0, k);
      }
    }
  }
}

template <typename T>
void gather(const WaveField<T>& local, const Subdomain<T>& s, WaveField<T>& global) {
  const auto box = s.interior();
  for (std::size_t k = 0; k < s.local.nz; ++k) {
    for (std::size_t j = box.j0; j < box.j1; ++j) {
      for (std::size_t i = box.i0; i < box.i1; ++i) {
        global(s.extent.x.begin + i - box.i0, s.extent.y.begin + j - box.j0, k) = local(i, j, k);
      }
    }
  }
}

}  // namespace detail

/// Simulation over a mesh_rows x mesh_cols worker mesh, one thread per
/// worker. Per step every worker exchanges halos, advances its interior and
/// waits at a barrier. Assembled outputs equal the single-domain Simulation.
template <typename T>
class DistributedSimulation {
 public:
  DistributedSimulation(SimConfig config, const VelocityModel<T>& velocity,
                        std::size_t mesh_rows, std::size_t mesh_cols,
                        DistributedOptions options = {})
      : config_(std::move(config)), options_(std::move(options)) {
    const Grid& g = config_.grid;
    if (!velocity.grid().same_shape(g)) {
      throw InvalidArgument("velocity model dimensions differ from the simulation grid");
    }
    validate_velocity(velocity);
    validate_config(config_, detail::max_velocity(velocity.values()));
    const auto coeffs = fd_coefficients(config_.order);
    part_ = partition(g, mesh_rows, mesh_cols, coeffs.half_width());

    const auto px = sponge_profile(g.nx, config_.boundary);
    const auto py = sponge_profile(g.ny, config_.boundary);
    const auto pz = sponge_profile(g.nz, config_.boundary);
    const bool sponge = config_.boundary.kind == Boundary::Kind::Sponge;

    workers_.resize(part_.workers());
    for (std::size_t w = 0; w < workers_.size(); ++w) {
      auto& st = workers_[w];
      st.sub = Subdomain<T>(part_, w);
      const Grid& lg = st.sub.local;
      st.prev = WaveField<T>(lg);
      st.next = WaveField<T>(lg);
      VelocityModel<T> lv(lg, T(0));
      detail::scatter(velocity, st.sub, lv);
      const auto& e = st.sub.extent;
      std::vector<T> tx, ty, tz;
      if (sponge) {
        tx = detail::sponge_slice<T>(px, e.x.begin, e.x.end);
        ty = detail::sponge_slice<T>(py, e.y.begin, e.y.end);
        tz = detail::to_working<T>(pz);
      }
      st.kernel.emplace(lg, coeffs, config_.strategy, config_.block_size, config_.precision, lv,
                        config_.dt, st.sub.interior(), std::move(tx), std::move(ty),
                        std::move(tz));
    }
    for (std::size_t r = 0; r < config_.receivers.size(); ++r) {
      workers_[part_.owner(config_.receivers[r])].receivers.push_back(r);
    }
    for (std::size_t s = 0; s < config_.sources.size(); ++s) {
      workers_[part_.owner(config_.sources[s].position)].sources.push_back(s);
    }
  }

  const SimConfig& config() const noexcept { return config_; }
  const MeshPartition& mesh() const noexcept { return part_; }
  const DistributedStats& stats() const noexcept { return stats_; }

  /// Sets P[-1] and P[0] on every worker; zero fields when initial is null.
  void reset(const InitialState<T>* initial = nullptr) {
    const Grid& g = config_.grid;
    if (initial != nullptr &&
        (!initial->previous.grid().same_shape(g) || !initial->current.grid().same_shape(g))) {
      throw InvalidArgument("initial state dimensions differ from the simulation grid");
    }
    for (auto& st : workers_) {
      st.prev.fill(T(0));
      st.sub.current.fill(T(0));
      st.sub.step = 0;
      if (initial != nullptr) {
        detail::scatter(initial->previous, st.sub, st.prev);
        detail::scatter(initial->current, st.sub, st.sub.current);
      }
    }
  }

  SimResult<T> run() {
    const std::size_t nw = workers_.size();
    for (auto& st : workers_) {
      std::vector<Index3> pos;
      for (std::size_t r : st.receivers) pos.push_back(config_.receivers[r]);
      st.traces = TraceSet(std::move(pos), config_.dt, config_.n_steps, config_.dt);
      st.snapshots.clear();
      st.error = nullptr;
    }
    HaloNetwork net(nw);
    bool stop = false;
    Barrier sync(static_cast<std::ptrdiff_t>(nw), PhaseEnd{&net, &stop});
    const auto body = [&](std::size_t w) { run_worker(w, net, sync, stop); };
    if (nw == 1) {
      body(0);
    } else {
      std::vector<std::jthread> threads;
      threads.reserve(nw);
      for (std::size_t w = 0; w < nw; ++w) threads.emplace_back(body, w);
    }
    for (const auto& st : workers_) {
      if (st.error) std::rethrow_exception(st.error);
    }
    stats_.workers = nw;
    stats_.halo_bytes_total = net.bytes();
    stats_.halo_bytes_per_step = net.bytes() / config_.n_steps;
    return assemble();
  }

 private:
  // Samples the cancel flag once per phase, before any worker is released,
  // so all workers agree on the step after which they stop.
  struct PhaseEnd {
    HaloNetwork* net;
    bool* stop;
    void operator()() noexcept { *stop = net->cancelled().load(); }
  };
  using Barrier = std::barrier<PhaseEnd>;

  void run_worker(std::size_t w, HaloNetwork& net, Barrier& sync, const bool& stop) {
    auto& st = workers_[w];
    auto& sub = st.sub;
    const std::size_t hw = sub.halo.width;
    for (std::size_t n = 0; n < config_.n_steps; ++n) {
      if (!net.cancelled()) {
        try {
          sub.step = n;
          post_halos(sub, net);
          receive_halos(sub, net);
          if (options_.before_compute) options_.before_compute(w, n);
          std::vector<PointSource> src;
          for (std::size_t s : st.sources) {
            const auto& term = config_.sources[s];
            const Index3 at{term.position.i - sub.extent.x.begin + hw,
                            term.position.j - sub.extent.y.begin + hw, term.position.k};
            src.push_back({at, term.amplitude(n)});
          }
          const auto cells = aggregate_sources(std::span<const PointSource>(src), sub.local);
          st.kernel->advance(st.prev, sub.current, st.next, cells, n);
          std::swap(st.prev, sub.current);
          std::swap(sub.current, st.next);
          for (std::size_t r = 0; r < st.receivers.size(); ++r) {
            st.traces.at(r, n) = static_cast<double>(
                sub.current[sub.local_index(config_.receivers[st.receivers[r]])]);
          }
          if (config_.snapshot_every > 0 && (n + 1) % config_.snapshot_every == 0) {
            st.snapshots.push_back({n + 1, sub.current});
          }
          if (options_.after_compute) options_.after_compute(w, n);
        } catch (const detail::Cancelled&) {
        } catch (...) {
          st.error = std::current_exception();
          net.cancel();
        }
      }
      sync.arrive_and_wait();
      if (stop) break;
    }
  }

  SimResult<T> assemble() const {
    const Grid& g = config_.grid;
    SimResult<T> result;
    result.traces = TraceSet(config_.receivers, config_.dt, config_.n_steps, config_.dt);
    result.previous = WaveField<T>(g);
    result.current = WaveField<T>(g);
    for (const auto& st : workers_) {
      for (std::size_t r = 0; r < st.receivers.size(); ++r) {
        for (std::size_t n = 0; n < config_.n_steps; ++n) {
          result.traces.at(st.receivers[r], n) = st.traces.at(r, n);
        }
      }
      detail::gather(st.prev, st.sub, result.previous);
      detail::gather(st.sub.current, st.sub, result.current);
    }
    const std::size_t n_snap = workers_.front().snapshots.size();
    for (std::size_t s = 0; s < n_snap; ++s) {
      Snapshot<T> snap{workers_.front().snapshots[s].step, WaveField<T>(g)};
      for (const auto& st : workers_) detail::gather(st.snapshots[s].field, st.sub, snap.field);
      result.snapshots.push_back(std::move(snap));
    }
    return result;
  }

  SimConfig config_;
  DistributedOptions options_;
  MeshPartition part_;
  std::vector<detail::WorkerState<T>> workers_;
  DistributedStats stats_;
};

/// Runs the simulation on a mesh_rows x mesh_cols worker mesh.
template <typename T>
SimResult<T> propagate_distributed(const SimConfig& config, const VelocityModel<T>& velocity,
                                   std::size_t mesh_rows, std::size_t mesh_cols,
                                   const DistributedOptions& options = {},
                                   DistributedStats* stats = nullptr,
                                   const InitialState<T>* initial = nullptr) {
  DistributedSimulation<T> sim(config, velocity, mesh_rows, mesh_cols, options);
  sim.reset(initial);
  auto result = sim.run();
  if (stats != nullptr) *stats = sim.stats();
  return result;
}

}  // namespace fdwave
