#include "pcc/replica.hpp"

namespace pcc {

namespace {
inline constexpr Word kFlag = 1;
}

ReplicatedVar ReplicatedVar::create(Runtime& rt, HostId h, std::size_t nslots,
                                    Word init) {
  if (init & kFlag) throw Error("replicated value must keep bit 0 clear");
  const std::size_t bytes = (1 + nslots) * kCachelineBytes;
  const Addr base = rt.alloc.alloc(bytes);
  rt.mem.register_sync(base, bytes);
  ReplicatedVar v(rt.mem, base, base + kCachelineBytes, nslots);
  rt.mem.p_store(h, v.global_, init);
  for (std::size_t i = 0; i < nslots; ++i) {
    rt.mem.p_store(h, v.slot_addr(i), init);
  }
  return v;
}

Word ReplicatedVar::read(HostId h, std::size_t slot) {
  const Addr mine = slot_addr(slot);
  for (;;) {
    const Word v = mem_->p_load(h, mine);
    if (!blocking_ || (v & kFlag) == 0) return v & ~kFlag;
    helps_.fetch_add(1, std::memory_order_relaxed);
    help(h);
  }
}

bool ReplicatedVar::publish(HostId h, Word expected, Word desired) {
  if (desired & kFlag) throw Error("replicated value must keep bit 0 clear");
  if (!mem_->p_cas(h, global_, expected, desired).success) return false;
  if (blocking_) {
    help(h);
  } else {
    propagate_plain(h);
  }
  return true;
}

void ReplicatedVar::force_publish(HostId h, Word desired) {
  if (desired & kFlag) throw Error("replicated value must keep bit 0 clear");
  mem_->p_store(h, global_, desired);
  if (blocking_) {
    help(h);
  } else {
    propagate_plain(h);
  }
}

void ReplicatedVar::help(HostId h) {
  for (;;) {
    const Word g = mem_->p_load(h, global_);
    // Pass 1: flag every replica with the new value before any replica is
    // allowed to show it unflagged.
    for (std::size_t i = 0; i < nslots_; ++i) {
      const Addr a = slot_addr(i);
      for (;;) {
        const Word cur = mem_->p_load(h, a);
        if (cur == g || cur == (g | kFlag)) break;
        if (mem_->p_cas(h, a, cur, g | kFlag).success) break;
      }
    }
    if (mem_->p_load(h, global_) != g) continue;  // overtaken, redo
    // Pass 2: clear the flags.
    for (std::size_t i = 0; i < nslots_; ++i) {
      const Addr a = slot_addr(i);
      mem_->p_cas(h, a, g | kFlag, g);
    }
    if (mem_->p_load(h, global_) == g) return;
  }
}

void ReplicatedVar::propagate_plain(HostId h) {
  const Word g = mem_->p_load(h, global_);
  for (std::size_t i = 0; i < nslots_; ++i) {
    mem_->p_store(h, slot_addr(i), g);
  }
}

}  // namespace pcc
