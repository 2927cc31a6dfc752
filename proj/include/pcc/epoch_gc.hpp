#pragma once

#include <cstdint>
#include <functional>
#include <mutex>
#include <vector>

#include "pcc/mem.hpp"
#include "pcc/runtime.hpp"

namespace pcc {

struct GarbageEntry {
  Addr addr = 0;
  std::size_t bytes = 0;
  std::uint64_t node_id = 0;
};

/// How workers observe the epoch and when garbage becomes reclaimable.
///   Direct:           every epoch read is a bypass load of the one global
///                     cell; reclaim when tag < min(local epochs).
///   Replicated:       epoch reads go through per-worker replicas that lag
///                     the global by at most one advance; reclaim only when
///                     tag < min(local epochs) - 1.
///   ReplicatedUnsafe: replicas with the Direct reclamation rule. Negative
///                     control; admits use-after-reclaim.
enum class GcMode { Direct, Replicated, ReplicatedUnsafe };

/// Epoch-based reclamation over the simulated shared memory. All epoch
/// cells are sync-data on dedicated cachelines. Epochs start at 1;
/// kIdle marks a worker outside any critical region.
class EpochGc {
 public:
  static constexpr std::uint64_t kIdle = ~0ULL;
  /// enter() re-reads the epoch source only every Nth time and pins the
  /// cached value in between. A stale pin is always lower than the current
  /// epoch, so it can only delay reclamation, never admit it early.
  static constexpr unsigned kEnterRefresh = 5;

  EpochGc(Runtime& rt, HostId setup_host, unsigned workers, GcMode mode);

  GcMode mode() const { return mode_; }
  unsigned workers() const { return workers_; }

  /// Maps a worker to the host whose liveness gates its epoch. Defaults to
  /// the setup host for every worker.
  void bind_worker(unsigned w, HostId host);

  void enter(unsigned w, HostId h);
  void exit(unsigned w, HostId h);
  /// Tags the entry with the retiring worker's current view of the epoch.
  void retire(unsigned w, HostId h, GarbageEntry g);

  /// Reclaims every eligible entry; returns how many were reclaimed.
  std::size_t collect(HostId h);

  void advance(HostId h);  // bump the global and refresh every replica
  void advance_global(HostId h);
  void propagate_replica(HostId h, unsigned w);

  std::uint64_t global_epoch(HostId h) const;
  std::uint64_t local_epoch(HostId h, unsigned w) const;
  std::uint64_t replica_epoch(HostId h, unsigned w) const;

  Addr global_addr() const { return global_; }

  using Reclaimer = std::function<void(const GarbageEntry&)>;
  /// Default reclaimer hands extents back through the deferred allocator.
  void set_reclaimer(Reclaimer fn) { reclaim_ = std::move(fn); }

  std::size_t retired_count() const;
  std::uint64_t reclaimed_count() const { return reclaimed_; }

 private:
  std::uint64_t read_epoch(unsigned w, HostId h) const;
  Addr local_addr(unsigned w) const { return locals_ + w * kCachelineBytes; }
  Addr replica_addr(unsigned w) const {
    return replicas_ + w * kCachelineBytes;
  }

  struct EnterView {
    std::uint64_t value = 0;
    unsigned left = 0;  // enters until the next refresh
  };

  Runtime& rt_;
  GcMode mode_;
  unsigned workers_;
  mutable std::vector<EnterView> views_;
  Addr global_;
  Addr locals_;
  Addr replicas_;
  std::vector<HostId> worker_host_;
  Reclaimer reclaim_;

  mutable std::mutex mu_;
  struct Retired {
    GarbageEntry entry;
    std::uint64_t epoch;
  };
  std::vector<Retired> retired_;
  std::uint64_t reclaimed_ = 0;
};

}  // namespace pcc
