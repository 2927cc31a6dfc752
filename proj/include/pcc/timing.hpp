#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "pcc/mem.hpp"

namespace pcc {

enum class OpKind { LoadHit, LoadMiss, PLoad, PStore, PCas, Flush, Clwb };

struct TimingConfig {
  bool enabled = false;
  std::uint64_t lat_cache_hit_ns = 10;
  std::uint64_t lat_pload_ns = 400;
  std::uint64_t lat_pstore_ns = 400;
  std::uint64_t lat_pcas_ns = 474;
  std::uint64_t lat_flush_ns = 100;
  std::uint32_t queue_count = 4096;
};

/// Per-logical-worker virtual clock. Bound to the executing thread via
/// TimingModel::set_timeline so the memory model can charge costs without
/// plumbing a worker id through every call.
struct Timeline {
  std::uint64_t now_ns = 0;
  std::uint64_t ops = 0;
  std::vector<std::uint64_t>* record = nullptr;  // optional per-op latencies
};

/// Discrete latency model. Bypass operations are serialized through one of
/// `queue_count` controller queues selected by address hash, so concurrent
/// bypass loads of one address queue behind each other while loads of
/// distinct addresses proceed in parallel. Cache hits bypass the queues.
class TimingModel {
 public:
  explicit TimingModel(TimingConfig cfg);

  const TimingConfig& config() const { return cfg_; }

  static void set_timeline(Timeline* tl);
  static Timeline* timeline();

  /// Enqueue one op issued at `now`; returns its completion time.
  std::uint64_t cost(OpKind kind, Addr a, std::uint64_t now);

  /// Charge the current thread's timeline (no-op when none bound or the
  /// model is disabled).
  void charge(OpKind kind, Addr a);

  struct ScheduledOp {
    unsigned worker;
    OpKind kind;
    Addr addr;
  };
  struct RunMetrics {
    std::uint64_t ops = 0;
    double seconds = 0.0;
    double throughput_ops_per_s = 0.0;
    std::uint64_t p50_ns = 0;
    std::uint64_t p99_ns = 0;
  };
  /// Replays a deterministic schedule (ops issued round-robin per worker in
  /// the given order) and aggregates completion times.
  RunMetrics simulate_run(const std::vector<ScheduledOp>& schedule,
                          unsigned workers);

  void reset();

 private:
  std::uint64_t service_ns(OpKind kind) const;
  bool queued(OpKind kind) const;

  TimingConfig cfg_;
  std::vector<std::atomic<std::uint64_t>> tails_;
};

}  // namespace pcc
