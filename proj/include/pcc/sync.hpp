#pragma once

#include <cstdint>
#include <optional>

#include "pcc/mem.hpp"
#include "pcc/runtime.hpp"

namespace pcc {

/// 64-bit lock/version word layout shared by the recoverable lock and the
/// OLC versioned lock:
///   bit 0      delete flag
///   bits 1-16  owner (HostId + 1; 0 means unowned)
///   bit 17     lock bit
///   bits 18-63 version
namespace lockword {

inline constexpr Word kDeleteBit = 1ULL << 0;
inline constexpr Word kLockBit = 1ULL << 17;
inline constexpr unsigned kOwnerShift = 1;
inline constexpr Word kOwnerMask = 0xFFFFULL << kOwnerShift;
inline constexpr unsigned kVersionShift = 18;

inline Word make(std::uint64_t version, bool locked = false,
                 std::optional<HostId> owner = std::nullopt,
                 bool deleted = false) {
  Word w = version << kVersionShift;
  if (locked) w |= kLockBit;
  if (owner) w |= (Word(*owner) + 1) << kOwnerShift;
  if (deleted) w |= kDeleteBit;
  return w;
}

inline bool locked(Word w) { return (w & kLockBit) != 0; }
inline bool deleted(Word w) { return (w & kDeleteBit) != 0; }
inline std::uint64_t version(Word w) { return w >> kVersionShift; }
inline std::optional<HostId> owner(Word w) {
  const Word enc = (w & kOwnerMask) >> kOwnerShift;
  if (enc == 0) return std::nullopt;
  return static_cast<HostId>(enc - 1);
}

}  // namespace lockword

/// An 8-byte sync-data slot: accessed only through bypass operations.
struct AtomicWordCell {
  PccMemory* mem = nullptr;
  Addr addr = 0;

  Word load(HostId h) const { return mem->p_load(h, addr); }
  void store(HostId h, Word v) const { mem->p_store(h, addr, v); }
  CasResult cas(HostId h, Word e, Word d) const {
    return mem->p_cas(h, addr, e, d);
  }
  /// Bypass fetch-and-add built from a p_cas loop.
  Word fetch_add(HostId h, Word d) const {
    for (;;) {
      Word cur = load(h);
      if (cas(h, cur, cur + d).success) return cur;
    }
  }
};

/// Recoverable lock: one bypass CAS to acquire; waiters that exceed the
/// virtual-time timeout ask the controller to clear the word when the
/// recorded owner is dead.
class RecoverableLock {
 public:
  static constexpr std::uint64_t kDefaultTimeoutNs = 1'000'000;  // 1 ms

  RecoverableLock(PccMemory& mem, Addr addr) : mem_(&mem), addr_(addr) {}

  Addr addr() const { return addr_; }

  /// Spins until acquired. `max_attempts` bounds the retry loop (0 means
  /// unbounded); returns false only when the bound is hit.
  bool acquire(HostId me, Runtime& rt,
               std::uint64_t timeout_ns = kDefaultTimeoutNs,
               std::uint64_t max_attempts = 0);
  bool try_acquire(HostId me);
  void release(HostId me);

  Word peek(HostId h) const { return mem_->p_load(h, addr_); }

 private:
  PccMemory* mem_;
  Addr addr_;
};

enum class OlcResult { Ok, Restart };

/// Versioned optimistic lock over a node stored in dedicated cachelines.
/// Readers invalidate the node's lines between the two version loads;
/// writers write the lines back before publishing the new version.
class OlcLock {
 public:
  OlcLock(PccMemory& mem, Addr lock_addr, Addr node_addr,
          std::size_t node_bytes)
      : mem_(&mem),
        lock_addr_(lock_addr),
        node_addr_(node_addr),
        node_bytes_(node_bytes) {}

  /// On success returns the version snapshot; the node's cachelines have
  /// been invalidated so subsequent loads fetch fresh data.
  std::optional<Word> read_lock_or_restart(HostId h) const;
  OlcResult read_unlock_or_restart(HostId h, Word snapshot) const;
  OlcResult write_lock(HostId me) const;
  void write_unlock(HostId me) const;

  Addr lock_addr() const { return lock_addr_; }

 private:
  void for_each_line(auto&& fn) const {
    for (Addr a = line_base(node_addr_);
         a < node_addr_ + node_bytes_; a += kCachelineBytes) {
      fn(a);
    }
  }

  PccMemory* mem_;
  Addr lock_addr_;
  Addr node_addr_;
  std::size_t node_bytes_;
};

/// Allocates whole dedicated cachelines for a node so independent
/// write-backs can never corrupt a neighbour.
Addr place_node(DeferredAllocator& alloc, std::size_t bytes);

}  // namespace pcc
