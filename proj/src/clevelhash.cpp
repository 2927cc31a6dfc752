#include "pcc/clevelhash.hpp"

#include <algorithm>
#include <set>

#include "pcc/sync.hpp"

namespace pcc {

namespace {

constexpr Word kMagic = 0x68736c766c30312eULL;
constexpr Addr kCtxFirst = 0;
constexpr Addr kCtxResize = 8;
constexpr Addr kCtxLock = 16;
constexpr Addr kCtxSize = 32;
constexpr Addr kCtxExpansions = 40;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Pins an epoch for the duration of one operation.
struct EpochGuard {
  EpochGc* gc;
  unsigned w;
  HostId h;
  EpochGuard(EpochGc* g, unsigned worker, HostId host)
      : gc(g), w(worker), h(host) {
    if (gc) gc->enter(w, h);
  }
  ~EpochGuard() {
    if (gc) {
      try {
        gc->exit(w, h);
      } catch (const Error&) {
        // the host died mid-operation; the controller will unpin it
      }
    }
  }
};

}  // namespace

CLevelHash::CLevelHash(Runtime& rt, HostId h, Config cfg)
    : rt_(rt),
      mem_(rt.mem),
      seed_(cfg.seed),
      initial_bits_(cfg.initial_bucket_bits),
      accel_(cfg.accel) {
  sb_ = rt_.alloc.alloc(kCachelineBytes);
  ctx_ = rt_.alloc.alloc(kCachelineBytes);
  const Addr slots = rt_.alloc.alloc(cfg.workers * kCachelineBytes);
  mem_.register_sync(sb_, kCachelineBytes);
  mem_.register_sync(ctx_, kCachelineBytes);
  mem_.register_sync(slots, cfg.workers * kCachelineBytes);

  const Addr lvl = make_level(h, Word(1) << cfg.initial_bucket_bits, 0);
  mem_.p_store(h, ctx_ + kCtxFirst, lvl);

  mem_.p_store(h, sb_ + 0, kMagic);
  mem_.p_store(h, sb_ + 8, ctx_);
  mem_.p_store(h, sb_ + 16, seed_);
  mem_.p_store(h, sb_ + 24, initial_bits_);
  mem_.p_store(h, sb_ + 32, accel_ ? 1 : 0);
  mem_.p_store(h, sb_ + 40, slots);
  mem_.p_store(h, sb_ + 48, cfg.workers);

  first_rv_ = ReplicatedVar(mem_, ctx_ + kCtxFirst, slots, cfg.workers);
  for (unsigned i = 0; i < cfg.workers; ++i) {
    mem_.p_store(h, first_rv_.slot_addr(i), lvl);
  }
}

CLevelHash::CLevelHash(Runtime& rt, Addr superblock, unsigned workers)
    : rt_(rt), mem_(rt.mem), sb_(superblock) {
  if (mem_.controller_load(sb_ + 0) != kMagic) {
    throw Error("superblock magic mismatch");
  }
  ctx_ = mem_.controller_load(sb_ + 8);
  seed_ = mem_.controller_load(sb_ + 16);
  initial_bits_ = static_cast<unsigned>(mem_.controller_load(sb_ + 24));
  accel_ = mem_.controller_load(sb_ + 32) != 0;
  const Addr slots = mem_.controller_load(sb_ + 40);
  const auto nslots = mem_.controller_load(sb_ + 48);
  if (workers > nslots) throw Error("more workers than replica slots");
  first_rv_ = ReplicatedVar(mem_, ctx_ + kCtxFirst, slots, nslots);
  mem_.register_sync(sb_, kCachelineBytes);
  mem_.register_sync(ctx_, kCachelineBytes);
  mem_.register_sync(slots, nslots * kCachelineBytes);
}

Word CLevelHash::bucket_count(HostId h, Addr level, bool authoritative) const {
  return (accel_ && !authoritative) ? mem_.load(h, level)
                                    : mem_.p_load(h, level);
}

Addr CLevelHash::next_older(HostId h, Addr level, bool authoritative) const {
  return (accel_ && !authoritative) ? mem_.load(h, level + 8)
                                    : mem_.p_load(h, level + 8);
}

std::pair<Word, Word> CLevelHash::buckets_for(Word key, Word count) const {
  return {mix(key ^ seed_) % count, mix(key ^ (seed_ * 0x100000001b3ULL)) % count};
}

Word CLevelHash::record_key(HostId h, Addr rec, bool authoritative) const {
  return (accel_ && !authoritative) ? mem_.load(h, rec) : mem_.p_load(h, rec);
}

Word CLevelHash::record_value(HostId h, Addr rec, bool authoritative) const {
  return (accel_ && !authoritative) ? mem_.load(h, rec + 8)
                                    : mem_.p_load(h, rec + 8);
}

std::vector<Addr> CLevelHash::level_list(HostId h, Addr first,
                                         bool authoritative) const {
  std::vector<Addr> out;
  for (Addr lvl = first; lvl != 0; lvl = next_older(h, lvl, authoritative)) {
    out.push_back(lvl);
    if (out.size() > 64) throw Error("level chain corrupt");
  }
  return out;
}

std::vector<Addr> CLevelHash::candidate_slots(HostId h,
                                              const std::vector<Addr>& levels,
                                              Word key,
                                              bool authoritative) const {
  std::vector<Addr> out;
  out.reserve(levels.size() * 8);
  for (auto it = levels.rbegin(); it != levels.rend(); ++it) {
    const Word count = bucket_count(h, *it, authoritative);
    const auto [b1, b2] = buckets_for(key, count);
    const Word bs[2] = {b1, b2};
    const int nb = b1 == b2 ? 1 : 2;
    for (int i = 0; i < nb; ++i) {
      const Addr bucket = bucket_addr(*it, bs[i]);
      for (int s = 0; s < kSlotsPerBucket; ++s) out.push_back(bucket + s * kWordBytes);
    }
  }
  return out;
}

Addr CLevelHash::make_level(HostId h, Word count, Addr older) {
  const Addr lvl = rt_.alloc.alloc((1 + count) * kCachelineBytes);
  mem_.register_sync(lvl + kCachelineBytes, count * kCachelineBytes);
  mem_.p_store(h, lvl, count);
  mem_.p_store(h, lvl + 8, older);
  return lvl;
}

void CLevelHash::publish_first(HostId h, Addr expect, Addr level) {
  if (!first_rv_.publish(h, expect, level)) {
    throw Error("newest-level pointer moved under the resize lock");
  }
}

OpStatus CLevelHash::insert(HostId h, unsigned w, Word key, Word value) {
  EpochGuard eg(gc_, w, h);
  for (;;) {
    bool retry = false;
    const OpStatus st = insert_once(h, w, key, value, retry);
    if (!retry) return st;
  }
}

OpStatus CLevelHash::insert_once(HostId h, unsigned w, Word key, Word value,
                                 bool& retry) {
  // Duplicate scan over committed entries, validated against the newest-
  // level pointer.
  Addr first = mem_.p_load(h, ctx_ + kCtxFirst);
  for (;;) {
    const auto levels = level_list(h, first, true);
    for (Addr slot : candidate_slots(h, levels, key, true)) {
      const Word raw = mem_.p_load(h, slot);
      if (raw == 0 || (raw & kPending)) continue;
      if (record_key(h, raw & kPtrMask, true) == key) {
        stats_.duplicates.fetch_add(1, std::memory_order_relaxed);
        return OpStatus::Duplicate;
      }
    }
    const Addr now_first = mem_.p_load(h, ctx_ + kCtxFirst);
    if (now_first == first) break;
    first = now_first;
  }

  // Out-of-place record, flushed before it can be referenced.
  const Addr rec = place_node(rt_.alloc, 16);
  mem_.store(h, rec, key);
  mem_.store(h, rec + 8, value);
  mem_.clwb_mfence(h, rec);

  // Claim a slot in the newest level, uncommitted.
  first = mem_.p_load(h, ctx_ + kCtxFirst);
  Addr my_slot = 0;
  {
    const Word count = bucket_count(h, first, true);
    const auto [b1, b2] = buckets_for(key, count);
    const Word bs[2] = {b1, b2};
    const int nb = b1 == b2 ? 1 : 2;
    for (int i = 0; i < nb && my_slot == 0; ++i) {
      const Addr bucket = bucket_addr(first, bs[i]);
      for (int s = 0; s < kSlotsPerBucket && my_slot == 0; ++s) {
        const Addr slot = bucket + s * kWordBytes;
        if (mem_.p_load(h, slot) != 0) continue;
        if (mem_.p_cas(h, slot, 0, rec | kPending).success) my_slot = slot;
      }
    }
  }
  if (my_slot == 0) {
    retire_extent(h, w, rec, kCachelineBytes);
    expand(h, w, first);
    retry = true;
    return OpStatus::Ok;
  }

  // Re-scan: exactly one of the racing same-key claims may commit. Claims
  // are ordered by slot position, oldest level first; a claim yields to any
  // committed copy and to an uncommitted claim at an earlier position, and
  // waits out claims at later positions.
  for (;;) {
    const Addr f = mem_.p_load(h, ctx_ + kCtxFirst);
    const auto levels = level_list(h, f, true);
    const auto slots = candidate_slots(h, levels, key, true);
    const auto me = std::find(slots.begin(), slots.end(), my_slot);
    if (me == slots.end()) throw Error("claimed slot fell out of the chain");
    const std::size_t my_rank = std::size_t(me - slots.begin());
    bool yield = false;
    for (std::size_t i = 0; i < slots.size() && !yield; ++i) {
      if (slots[i] == my_slot) continue;
      for (;;) {
        const Word raw = mem_.p_load(h, slots[i]);
        if (raw == 0) break;
        const Addr other = raw & kPtrMask;
        if (record_key(h, other, true) != key) break;
        if (!(raw & kPending)) {
          yield = true;  // a committed copy exists
          break;
        }
        if (i < my_rank) {
          yield = true;  // earlier claim wins
          break;
        }
        // Later claim: it will either yield to us or commit; wait it out.
        if (mem_.p_load(h, slots[i]) == raw) continue;
      }
    }
    if (yield) {
      if (!mem_.p_cas(h, my_slot, rec | kPending, 0).success) {
        throw Error("uncommitted claim changed externally");
      }
      retire_extent(h, w, rec, kCachelineBytes);
      stats_.duplicates.fetch_add(1, std::memory_order_relaxed);
      return OpStatus::Duplicate;
    }
    if (mem_.p_load(h, ctx_ + kCtxFirst) == f) break;
  }

  if (!mem_.p_cas(h, my_slot, rec | kPending, rec).success) {
    throw Error("uncommitted claim changed externally");
  }
  AtomicWordCell size{&mem_, ctx_ + kCtxSize};
  size.fetch_add(h, 1);
  stats_.inserts.fetch_add(1, std::memory_order_relaxed);
  return OpStatus::Ok;
}

std::optional<Word> CLevelHash::lookup(HostId h, unsigned w, Word key) {
  EpochGuard eg(gc_, w, h);
  stats_.lookups.fetch_add(1, std::memory_order_relaxed);
  bool authoritative = !accel_;
  Addr first = accel_ ? first_rv_.read(h, w) : mem_.p_load(h, ctx_ + kCtxFirst);
  for (;;) {
    const auto levels = level_list(h, first, authoritative);
    for (Addr slot : candidate_slots(h, levels, key, authoritative)) {
      const Word raw = mem_.p_load(h, slot);
      if (raw == 0 || (raw & kPending)) continue;
      const Addr rec = raw & kPtrMask;
      if (record_key(h, rec, authoritative) == key) {
        stats_.hits.fetch_add(1, std::memory_order_relaxed);
        return record_value(h, rec, authoritative);
      }
    }
    // A miss only counts when the newest-level pointer held still.
    const Addr now_first = mem_.p_load(h, ctx_ + kCtxFirst);
    if (authoritative && now_first == first) return std::nullopt;
    stats_.rescans.fetch_add(1, std::memory_order_relaxed);
    authoritative = true;
    first = now_first;
  }
}

OpStatus CLevelHash::remove(HostId h, unsigned w, Word key) {
  EpochGuard eg(gc_, w, h);
  Addr removed = 0;
  for (;;) {
    const Addr first = mem_.p_load(h, ctx_ + kCtxFirst);
    const auto levels = level_list(h, first, true);
    for (Addr slot : candidate_slots(h, levels, key, true)) {
      for (;;) {
        const Word raw = mem_.p_load(h, slot);
        if (raw == 0 || (raw & kPending)) break;
        const Addr rec = raw & kPtrMask;
        if (record_key(h, rec, true) != key) break;
        if (raw & kFrozen) continue;  // a move is in flight; wait it out
        if (mem_.p_cas(h, slot, raw, 0).success) {
          if (removed != 0 && removed != rec) {
            throw Error("two distinct records for one key");
          }
          removed = rec;
          break;
        }
      }
    }
    if (mem_.p_load(h, ctx_ + kCtxFirst) == first) break;
  }
  if (removed == 0) {
    stats_.not_found.fetch_add(1, std::memory_order_relaxed);
    return OpStatus::NotFound;
  }
  AtomicWordCell size{&mem_, ctx_ + kCtxSize};
  size.fetch_add(h, Word(-1));
  retire_extent(h, w, removed, kCachelineBytes);
  stats_.removes.fetch_add(1, std::memory_order_relaxed);
  return OpStatus::Ok;
}

void CLevelHash::expand(HostId h, unsigned w, Addr seen_first) {
  RecoverableLock lk(mem_, ctx_ + kCtxLock);
  lk.acquire(h, rt_);
  try {
    if (mem_.p_load(h, ctx_ + kCtxResize) == 0) {
      const Addr cur = mem_.p_load(h, ctx_ + kCtxFirst);
      if (cur != seen_first) {
        // Someone else already grew the table; retry the operation first.
        lk.release(h);
        return;
      }
      const Word count = bucket_count(h, cur, true);
      const Addr lvl = make_level(h, count * 2, cur);
      publish_first(h, cur, lvl);
      AtomicWordCell exps{&mem_, ctx_ + kCtxExpansions};
      exps.fetch_add(h, 1);
      mem_.p_store(h, ctx_ + kCtxResize, 1);
    }
    drain_last(h, w);
    mem_.p_store(h, ctx_ + kCtxResize, 0);
  } catch (...) {
    // Crashed holders are recovered via the lock timeout; for clean errors
    // release eagerly.
    if (mem_.host_alive(h)) lk.release(h);
    throw;
  }
  lk.release(h);
}

void CLevelHash::drain_last(HostId h, unsigned w) {
  const Addr first = mem_.p_load(h, ctx_ + kCtxFirst);
  auto levels = level_list(h, first, true);
  if (levels.size() < 2) return;
  const Addr last = levels.back();
  const Addr pred = levels[levels.size() - 2];

  const Word count = mem_.p_load(h, last);
  for (Word b = 0; b < count; ++b) {
    const Addr bucket = bucket_addr(last, b);
    for (int s = 0; s < kSlotsPerBucket; ++s) {
      const Addr slot = bucket + s * kWordBytes;
      for (;;) {
        const Word raw = mem_.p_load(h, slot);
        if (raw == 0) break;
        if (raw & kPending) continue;  // the inserter resolves it shortly
        if (raw & kFrozen) {
          move_one(h, slot, raw);
          break;
        }
        if (mem_.p_cas(h, slot, raw, raw | kFrozen).success) {
          move_one(h, slot, raw | kFrozen);
          break;
        }
      }
    }
  }

  // Unlink the drained level, make sure no host still caches the stale
  // link, then hand the extent back.
  mem_.p_store(h, pred + 8, 0);
  rt_.bus.await_acks(rt_.bus.broadcast_flush({line_base(pred)}, {}));
  retire_extent(h, w, last, (1 + count) * kCachelineBytes);
}

void CLevelHash::move_one(HostId h, Addr slot, Word frozen_val) {
  const Addr rec = frozen_val & kPtrMask;
  const Word key = mem_.p_load(h, rec);

  // Resume-safe: skip the claim when a previous attempt already placed it.
  bool placed = false;
  const Addr first = mem_.p_load(h, ctx_ + kCtxFirst);
  for (Addr cand : candidate_slots(h, level_list(h, first, true), key, true)) {
    if (cand == slot) continue;
    if ((mem_.p_load(h, cand) & kPtrMask) == rec) {
      placed = true;
      break;
    }
  }
  if (!placed) claim_into_newest(h, key, rec);
  if (!mem_.p_cas(h, slot, frozen_val, 0).success) {
    throw Error("frozen slot changed during a move");
  }
  stats_.moves.fetch_add(1, std::memory_order_relaxed);
}

void CLevelHash::claim_into_newest(HostId h, Word key, Addr rec) {
  for (;;) {
    const Addr first = mem_.p_load(h, ctx_ + kCtxFirst);
    const Word count = bucket_count(h, first, true);
    const auto [b1, b2] = buckets_for(key, count);
    const Word bs[2] = {b1, b2};
    const int nb = b1 == b2 ? 1 : 2;
    for (int i = 0; i < nb; ++i) {
      const Addr bucket = bucket_addr(first, bs[i]);
      for (int s = 0; s < kSlotsPerBucket; ++s) {
        if (mem_.p_cas(h, bucket + s * kWordBytes, 0, rec).success) return;
      }
    }
    // Newest level full mid-drain: grow again (resize lock is held).
    const Addr lvl = make_level(h, count * 2, first);
    publish_first(h, first, lvl);
    AtomicWordCell exps{&mem_, ctx_ + kCtxExpansions};
    exps.fetch_add(h, 1);
  }
}

void CLevelHash::retire_extent(HostId h, unsigned w, Addr a,
                               std::size_t bytes) {
  if (gc_) {
    gc_->retire(w, h, {.addr = a, .bytes = bytes, .node_id = 0});
  } else {
    rt_.alloc.free_deferred(a, bytes);
  }
}

void CLevelHash::repair(HostId h) {
  const Addr first = mem_.p_load(h, ctx_ + kCtxFirst);
  const auto levels = level_list(h, first, true);

  std::vector<std::pair<Addr, Word>> frozen;
  for (Addr lvl : levels) {
    const Word count = mem_.p_load(h, lvl);
    for (Word b = 0; b < count; ++b) {
      for (int s = 0; s < kSlotsPerBucket; ++s) {
        const Addr slot = bucket_addr(lvl, b) + s * kWordBytes;
        const Word raw = mem_.p_load(h, slot);
        if (raw == 0) continue;
        if (raw & kPending) {
          // Uncommitted insert: the op never returned, drop it.
          mem_.p_store(h, slot, 0);
        } else if (raw & kFrozen) {
          frozen.emplace_back(slot, raw);
        }
      }
    }
  }

  // A frozen entry was mid-move: keep exactly one committed copy.
  for (auto [slot, raw] : frozen) {
    const Addr rec = raw & kPtrMask;
    const Word key = mem_.p_load(h, rec);
    bool placed = false;
    for (Addr cand : candidate_slots(h, levels, key, true)) {
      if (cand == slot) continue;
      if ((mem_.p_load(h, cand) & kPtrMask) == rec &&
          !(mem_.p_load(h, cand) & kPending)) {
        placed = true;
        break;
      }
    }
    mem_.p_store(h, slot, placed ? 0 : rec);
  }

  // Break an orphaned resize lock and finish an interrupted drain.
  const Word lw = mem_.p_load(h, ctx_ + kCtxLock);
  if (lockword::locked(lw)) {
    mem_.p_store(h, ctx_ + kCtxLock,
                 lockword::make(lockword::version(lw) + 1));
  }
  if (mem_.p_load(h, ctx_ + kCtxResize) != 0) {
    drain_last(h, 0);
    mem_.p_store(h, ctx_ + kCtxResize, 0);
  }

  mem_.p_store(h, ctx_ + kCtxSize, full_scan(h).size());
  // Refresh every replica of the newest-level pointer.
  first_rv_.help(h);
}

std::vector<std::pair<Word, Word>> CLevelHash::full_scan(HostId h) {
  for (;;) {
    const Addr first = mem_.p_load(h, ctx_ + kCtxFirst);
    const auto levels = level_list(h, first, true);
    std::set<Addr> seen;
    std::vector<std::pair<Word, Word>> out;
    for (Addr lvl : levels) {
      const Word count = mem_.p_load(h, lvl);
      for (Word b = 0; b < count; ++b) {
        for (int s = 0; s < kSlotsPerBucket; ++s) {
          const Word raw = mem_.p_load(h, bucket_addr(lvl, b) + s * kWordBytes);
          if (raw == 0 || (raw & kPending)) continue;
          const Addr rec = raw & kPtrMask;
          if (!seen.insert(rec).second) continue;
          out.emplace_back(mem_.p_load(h, rec), mem_.p_load(h, rec + 8));
        }
      }
    }
    if (mem_.p_load(h, ctx_ + kCtxFirst) == first) return out;
  }
}

std::uint64_t CLevelHash::size(HostId h) const {
  return mem_.p_load(h, ctx_ + kCtxSize);
}

std::uint64_t CLevelHash::expansions(HostId h) const {
  return mem_.p_load(h, ctx_ + kCtxExpansions);
}

std::size_t CLevelHash::level_count(HostId h) {
  return level_list(h, mem_.p_load(h, ctx_ + kCtxFirst), true).size();
}

}  // namespace pcc
