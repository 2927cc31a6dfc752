#pragma once

#include <cstdint>
#include <string>

#include "pcc/harness/bench.hpp"

namespace pcc::harness {

struct CrashReport {
  unsigned points_tested = 0;
  unsigned failures = 0;
  std::uint64_t window_ops = 0;  // memory ops available as crash points
  std::string first_failure;
};

/// Durable-linearizability check by crash-point enumeration: a fixed op
/// window (inserts driving splits/expansion, removes driving merges/drains)
/// is replayed once per crash point, the host is crashed after exactly that
/// many memory operations, and the reopened image is compared against the
/// acknowledged prefix. The in-flight op may be present or absent but never
/// torn.
CrashReport run_crash_enumeration(IndexKind kind, unsigned max_points,
                                  std::uint64_t seed = 42);

}  // namespace pcc::harness
