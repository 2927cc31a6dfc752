#pragma once

#include <cstdint>
#include <vector>

#include "pcc/mem.hpp"
#include "pcc/runtime.hpp"

namespace pcc {

/// A shared variable replicated into one bypass-only cell per participant,
/// so the hot-path read is a bypass load of a private address instead of
/// everyone hammering one shared cell.
///
/// Values must keep bit 0 clear; the protocol uses it as the in-transition
/// flag. A publisher first flags every replica with the new value (bit 0
/// set), then clears the flags. A reader that finds its replica flagged
/// helps finish the propagation before returning, which blocks the
/// new-then-old anomaly: once any reader can return the new value, no
/// replica still holds the old one unflagged.
///
/// `set_blocking(false)` drops the flag/help discipline (plain stores, no
/// helping) and serves as the negative control that reproduces the anomaly.
class ReplicatedVar {
 public:
  ReplicatedVar() = default;

  /// Wraps existing cells: `global` is the authoritative cell, replica slot
  /// i lives at `slots_base + i * kCachelineBytes`.
  ReplicatedVar(PccMemory& mem, Addr global, Addr slots_base,
                std::size_t nslots)
      : mem_(&mem), global_(global), slots_(slots_base), nslots_(nslots) {}

  ReplicatedVar(const ReplicatedVar& o)
      : mem_(o.mem_),
        global_(o.global_),
        slots_(o.slots_),
        nslots_(o.nslots_),
        blocking_(o.blocking_),
        helps_(o.helps_.load()) {}
  ReplicatedVar& operator=(const ReplicatedVar& o) {
    mem_ = o.mem_;
    global_ = o.global_;
    slots_ = o.slots_;
    nslots_ = o.nslots_;
    blocking_ = o.blocking_;
    helps_.store(o.helps_.load());
    return *this;
  }

  /// Allocates a global cell plus `nslots` replica cells on dedicated
  /// cachelines, registers them as sync-data, and seeds them with `init`.
  static ReplicatedVar create(Runtime& rt, HostId h, std::size_t nslots,
                              Word init);

  Addr global_addr() const { return global_; }
  Addr slot_addr(std::size_t slot) const {
    return slots_ + slot * kCachelineBytes;
  }
  std::size_t slots() const { return nslots_; }

  void set_blocking(bool b) { blocking_ = b; }
  bool blocking() const { return blocking_; }

  /// Reads through the caller's replica; helps finish an in-flight publish
  /// when the replica is flagged.
  Word read(HostId h, std::size_t slot);

  /// Bypass load of the authoritative cell (slow path / verification).
  Word read_global(HostId h) const { return mem_->p_load(h, global_); }

  /// CAS the authoritative cell, then propagate on success.
  bool publish(HostId h, Word expected, Word desired);
  /// Unconditional store to the authoritative cell, then propagate.
  void force_publish(HostId h, Word desired);

  /// Drives the current global value into every replica slot. Safe to call
  /// concurrently; restarts if the global moves mid-propagation.
  void help(HostId h);

  std::uint64_t helps() const { return helps_.load(); }

 private:
  void propagate_plain(HostId h);

  PccMemory* mem_ = nullptr;
  Addr global_ = 0;
  Addr slots_ = 0;
  std::size_t nslots_ = 0;
  bool blocking_ = true;
  std::atomic<std::uint64_t> helps_{0};
};

}  // namespace pcc
