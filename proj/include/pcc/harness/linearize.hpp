#pragma once

#include <atomic>
#include <cstdint>
#include <vector>

#include "pcc/mem.hpp"
#include "pcc/op_status.hpp"

namespace pcc::harness {

/// One completed operation of a concurrent history.
struct HistoryOp {
  enum class Kind { Get, Insert, Upsert, Remove, RegRead, RegPublish };

  unsigned thread = 0;
  std::uint64_t invoke_ts = 0;
  std::uint64_t response_ts = 0;
  Kind kind = Kind::Get;
  Word key = 0;
  Word value = 0;     // written value / publish desired
  Word expected = 0;  // publish expected

  // observed outcome
  bool found = false;              // Get
  Word read_value = 0;             // Get / RegRead
  OpStatus status = OpStatus::Ok;  // Insert / Remove
  bool ok = false;                 // RegPublish
};

/// Sequential models the checker replays against.
///   KvMap:     insert is create-only (Ok/Duplicate), remove Ok/NotFound.
///   UpsertMap: set always succeeds and overwrites.
///   Register:  single word with read and compare-and-publish.
enum class ModelKind { KvMap, UpsertMap, Register };

/// Memoized exhaustive linearizability check (Wing & Gong style): searches
/// for a total order consistent with real time under which every recorded
/// outcome matches the sequential model. History must be complete and small
/// (≤ 16 ops).
bool check_linearizable(const std::vector<HistoryOp>& history, ModelKind m,
                        Word register_init = 0);

/// Independent reference: plain recursive enumeration of all real-time
/// respecting orders, no memoization. Exponential; for histories ≤ 9 ops.
bool check_linearizable_naive(const std::vector<HistoryOp>& history,
                              ModelKind m, Word register_init = 0);

/// Timestamps from one global monotonic counter plus a bounded wait-free
/// append log.
class HistoryRecorder {
 public:
  explicit HistoryRecorder(std::size_t capacity)
      : slots_(capacity) {}

  std::uint64_t tick() { return clock_.fetch_add(1, std::memory_order_acq_rel); }

  void append(HistoryOp op) {
    const auto i = count_.fetch_add(1, std::memory_order_acq_rel);
    if (i >= slots_.size()) throw Error("history log full");
    slots_[i] = op;
  }

  std::vector<HistoryOp> take() {
    std::vector<HistoryOp> out(slots_.begin(),
                               slots_.begin() + count_.load());
    return out;
  }

 private:
  std::atomic<std::uint64_t> clock_{1};
  std::atomic<std::size_t> count_{0};
  std::vector<HistoryOp> slots_;
};

}  // namespace pcc::harness
