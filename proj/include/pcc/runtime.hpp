#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "pcc/mem.hpp"

namespace pcc {

/// Simulation-wide virtual time in nanoseconds. Advanced explicitly by
/// retry loops and the harness; never tied to wall-clock time.
class VirtualClock {
 public:
  std::uint64_t now() const { return ns_.load(std::memory_order_relaxed); }
  void advance(std::uint64_t d) { ns_.fetch_add(d, std::memory_order_relaxed); }

 private:
  std::atomic<std::uint64_t> ns_{0};
};

/// Liveness controller: tracks host heartbeats and releases recoverable
/// locks held by dead hosts. A host that crashed stops heartbeating; it is
/// marked dead once the heartbeat gap exceeds the threshold. Dead hosts
/// never come back within a run.
class Controller {
 public:
  Controller(PccMemory& mem, VirtualClock& clock,
             std::uint64_t heartbeat_period_ns = 100'000,
             unsigned missed_beats = 10)
      : mem_(mem),
        clock_(clock),
        death_threshold_ns_(heartbeat_period_ns * missed_beats) {}

  void heartbeat(HostId h);
  void on_crash(HostId h);  // wired to PccMemory's crash callback
  bool is_alive(HostId h) const;
  bool marked_dead(HostId h) const;

  /// Clears a recoverable lock word whose recorded owner is dead.
  /// Returns true when the word was released.
  bool release_if_dead(Addr lock_addr);

  std::uint64_t death_threshold_ns() const { return death_threshold_ns_; }

 private:
  PccMemory& mem_;
  VirtualClock& clock_;
  std::uint64_t death_threshold_ns_;
  mutable std::mutex mu_;
  mutable std::unordered_map<HostId, std::uint64_t> crash_time_;
  mutable std::unordered_set<HostId> dead_;
};

struct BusMessage {
  std::uint64_t req_id;
  std::vector<Addr> lines;             // cacheline base addresses to flush
  std::vector<std::uint64_t> node_ids; // cached-table entries to null
};

/// In-process per-host message bus used for flush/invalidate broadcasts.
/// Delivery happens when an inbox is pumped; any thread may pump on behalf
/// of a host's background daemon. Messages to dead hosts are auto-acked.
class MessageBus {
 public:
  MessageBus(PccMemory& mem, Controller& ctl) : mem_(mem), ctl_(ctl) {}

  using Invalidator = std::function<void(const std::vector<std::uint64_t>&)>;
  void add_invalidator(HostId h, Invalidator fn);

  std::uint64_t broadcast_flush(std::vector<Addr> lines,
                                std::vector<std::uint64_t> node_ids);
  bool complete(std::uint64_t req_id) const;
  void await_acks(std::uint64_t req_id);
  bool pump(HostId h);  // deliver one message; true if one was processed
  void pump_all();

 private:
  void ack(std::uint64_t req_id, HostId h);
  void drain_dead(HostId h);

  PccMemory& mem_;
  Controller& ctl_;
  mutable std::mutex mu_;
  std::unordered_map<HostId, std::deque<BusMessage>> inboxes_;
  std::unordered_map<HostId, std::vector<Invalidator>> invalidators_;
  struct Request {
    std::unordered_set<HostId> pending;
  };
  std::unordered_map<std::uint64_t, Request> requests_;
  std::uint64_t next_req_ = 1;
};

/// Cacheline-granular shared-memory allocator with deferred reuse: a freed
/// extent re-enters the free lists only after every alive host has flushed
/// its lines (and nulled any cached node-table entries), so reallocation can
/// never be observed through a stale cache.
class DeferredAllocator {
 public:
  static constexpr Addr kStateAddr = 64;  // persisted bump pointer
  static constexpr Addr kHeapBase = 128;

  DeferredAllocator(PccMemory& mem, MessageBus& bus, bool recover = false);

  Addr alloc(std::size_t bytes);
  void free_deferred(Addr a, std::size_t bytes,
                     std::vector<std::uint64_t> node_ids = {});
  /// Negative-control path: immediate reuse without the flush broadcast.
  void unsafe_free(Addr a, std::size_t bytes);
  void poll();

  std::size_t pending_extents() const;
  std::uint64_t bump() const;

 private:
  Addr take(std::size_t lines);
  void zero_extent(Addr a, std::size_t lines);

  PccMemory& mem_;
  MessageBus& bus_;
  mutable std::mutex mu_;
  std::map<std::size_t, std::vector<Addr>> free_;  // line count -> extents
  struct Pending {
    std::uint64_t req_id;
    Addr addr;
    std::size_t lines;
  };
  std::vector<Pending> pending_;
  std::unordered_set<Addr> fresh_;  // extents never handed out before
};

/// Bundles the shared simulation services one deployment needs.
struct Runtime {
  PccMemory& mem;
  VirtualClock clock;
  Controller controller;
  MessageBus bus;
  DeferredAllocator alloc;

  explicit Runtime(PccMemory& m, bool recover = false)
      : mem(m),
        controller(m, clock),
        bus(m, controller),
        alloc(m, bus, recover) {
    mem.on_crash([this](HostId h) { controller.on_crash(h); });
  }

  HostId attach_host() { return mem.attach_next_host(); }
  void crash_host(HostId h) { mem.crash_host(h); }
};

}  // namespace pcc
