#pragma once

#include <cstdint>
#include <string>

#include "pcc/harness/bench.hpp"
#include "pcc/harness/linearize.hpp"

namespace pcc::harness {

struct LinReport {
  std::uint64_t histories = 0;
  std::uint64_t violations = 0;
  std::uint64_t sync_violations = 0;
};

enum class LinTarget { CLevelHash, BwTree, Replica };

/// Randomized small concurrent histories (≤ 4 threads, ≤ 12 ops) recorded
/// against a real instance and fed to the brute-force checker.
LinReport run_lin_suite(LinTarget target, std::uint64_t trials,
                        std::uint64_t seed);

/// Negative control: replica reads with bit-0 blocking disabled. Returns
/// the 1-based trial at which a new-then-old violation fired, 0 if never.
std::uint64_t replica_anomaly_trials(std::uint64_t max_trials,
                                     std::uint64_t seed);

/// Negative control: epoch GC with replica-lagged epoch reads under the
/// plain reclamation rule. Returns the 1-based trial at which a reader
/// observed reclaimed memory, 0 if never. The safe rule must return 0.
std::uint64_t gc_uaf_trials(std::uint64_t max_trials, std::uint64_t seed,
                            bool safe_rule);

/// Negative control: reallocation without the flush broadcast plus a forced
/// pre-cached line. True when the stale read was detected.
bool prealloc_stale_read();

struct LockReport {
  std::uint64_t trials = 0;
  std::uint64_t acquired_in_time = 0;  // within 2x the virtual timeout
  std::uint64_t max_wait_ns = 0;
  bool mutual_exclusion = true;  // exhaustive 2-host schedules
};
LockReport run_lock_suite(std::uint64_t trials, std::uint64_t seed);

}  // namespace pcc::harness
