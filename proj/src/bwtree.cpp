#include "pcc/bwtree.hpp"

#include <algorithm>

#include "pcc/sync.hpp"

namespace pcc {

namespace {

constexpr Word kMagic = 0x656572747762312eULL;

// Word offsets shared by every node extent.
constexpr Addr kOffKind = 0;
constexpr Addr kOffLevel = 8;
constexpr Addr kOffNext = 16;
constexpr Addr kOffHasHigh = 24;
constexpr Addr kOffHigh = 32;
constexpr Addr kOffSide = 40;
constexpr Addr kOffAux0 = 48;  // base: count, deltas: key/right-id/partner
constexpr Addr kOffAux1 = 56;  // deltas: value/content address
constexpr std::size_t kHeaderWords = 7;

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

// Helping can nest (a helper's descent can trip over another unfinished
// structure change); cap the nesting and let the outermost retry instead.
thread_local int g_help_depth = 0;
struct HelpScope {
  HelpScope() { ++g_help_depth; }
  ~HelpScope() { --g_help_depth; }
  static bool available() { return g_help_depth < 4; }
};

}  // namespace

BwTree::BwTree(Runtime& rt, HostId h, Config cfg)
    : rt_(rt),
      mem_(rt.mem),
      map_cap_(cfg.map_capacity),
      replica_root_(cfg.replica_root),
      spec_read_(cfg.spec_read) {
  sb_ = rt_.alloc.alloc(kCachelineBytes);
  map_base_ = rt_.alloc.alloc(std::size_t(map_cap_) * kWordBytes);
  const Addr slots = rt_.alloc.alloc(cfg.workers * kCachelineBytes);
  mem_.register_sync(sb_, kCachelineBytes);
  mem_.register_sync(map_base_, std::size_t(map_cap_) * kWordBytes);
  mem_.register_sync(slots, cfg.workers * kCachelineBytes);

  const Addr root = write_node(
      h, base_words(kLeaf, 0, false, 0, 0, {}, 0, 0));
  mem_.p_store(h, map_addr(kRootId), root);

  mem_.p_store(h, sb_ + 0, kMagic);
  mem_.p_store(h, sb_ + 8, map_base_);
  mem_.p_store(h, sb_ + 16, map_cap_);
  mem_.p_store(h, sb_ + 24, kRootId + 1);  // next fresh node id
  mem_.p_store(h, sb_ + 32, slots);
  mem_.p_store(h, sb_ + 40, cfg.workers);

  root_rv_ = ReplicatedVar(mem_, map_addr(kRootId), slots, cfg.workers);
  for (unsigned i = 0; i < cfg.workers; ++i) {
    mem_.p_store(h, root_rv_.slot_addr(i), root);
  }
}

BwTree::BwTree(Runtime& rt, Addr superblock, Config cfg)
    : rt_(rt),
      mem_(rt.mem),
      sb_(superblock),
      replica_root_(cfg.replica_root),
      spec_read_(cfg.spec_read) {
  if (mem_.controller_load(sb_ + 0) != kMagic) {
    throw Error("superblock magic mismatch");
  }
  map_base_ = mem_.controller_load(sb_ + 8);
  map_cap_ = static_cast<std::uint32_t>(mem_.controller_load(sb_ + 16));
  const Addr slots = mem_.controller_load(sb_ + 32);
  const auto nslots = mem_.controller_load(sb_ + 40);
  if (cfg.workers > nslots) throw Error("more workers than replica slots");
  root_rv_ = ReplicatedVar(mem_, map_addr(kRootId), slots, nslots);
  mem_.register_sync(sb_, kCachelineBytes);
  mem_.register_sync(map_base_, std::size_t(map_cap_) * kWordBytes);
  mem_.register_sync(slots, nslots * kCachelineBytes);
}

void BwTree::attach_worker_host(HostId h) {
  if (tables_[h]) return;
  tables_[h] = std::make_shared<LocalTable>(map_cap_);
  rt_.bus.add_invalidator(
      h, [t = tables_[h]](const std::vector<std::uint64_t>& ids) {
        for (auto id : ids) {
          if (id && id < t->entries.size()) {
            t->entries[id].store(0, std::memory_order_relaxed);
          }
        }
      });
}

void BwTree::repair(HostId h) { root_rv_.help(h); }

Word BwTree::rd(HostId h, Addr a) const { return mem_.load(h, a); }

std::size_t BwTree::node_bytes(std::size_t words) {
  return ((words * kWordBytes + kCachelineBytes - 1) / kCachelineBytes) *
         kCachelineBytes;
}

Addr BwTree::write_node(HostId h, const std::vector<Word>& words) {
  const std::size_t bytes = node_bytes(words.size());
  const Addr a = rt_.alloc.alloc(bytes);
  for (std::size_t i = 0; i < words.size(); ++i) {
    mem_.store(h, a + i * kWordBytes, words[i]);
  }
  for (Addr line = a; line < a + bytes; line += kCachelineBytes) {
    mem_.clwb_mfence(h, line);
  }
  return a;
}

std::vector<Word> BwTree::base_words(
    Word kind, Word level, bool has_high, Word high, std::uint64_t side,
    const std::vector<std::pair<Word, Word>>& es, std::size_t from,
    std::size_t to) const {
  std::vector<Word> w;
  w.reserve(kHeaderWords + 2 * (to - from));
  w.insert(w.end(), {kind, level, 0, has_high ? Word(1) : Word(0), high, side,
                     Word(to - from)});
  for (std::size_t i = from; i < to; ++i) {
    w.push_back(es[i].first);
    w.push_back(es[i].second);
  }
  return w;
}

BwTree::NodeView BwTree::materialize(HostId h, Addr head,
                                     std::uint64_t id) const {
  NodeView v;
  v.head = head;
  std::vector<Addr> deltas;  // newest first
  Addr a = head;
  while (a) {
    const Word kind = rd(h, a + kOffKind);
    switch (kind) {
      case kNodeRemove:
        v.removed = true;
        v.level = rd(h, a + kOffLevel);
        v.partner = rd(h, a + kOffAux0);
        v.remove_content = rd(h, a + kOffAux1);
        v.high = rd(h, a + kOffHigh);  // separator under which we sit
        v.extents.push_back({a, kCachelineBytes, id});
        return v;
      case kLeaf:
      case kInner: {
        v.level = rd(h, a + kOffLevel);
        v.has_high = rd(h, a + kOffHasHigh) != 0;
        v.high = rd(h, a + kOffHigh);
        v.side = rd(h, a + kOffSide);
        const Word count = rd(h, a + kOffAux0);
        v.entries.reserve(count);
        for (Word i = 0; i < count; ++i) {
          const Addr e = a + (kHeaderWords + 2 * i) * kWordBytes;
          v.entries.emplace_back(rd(h, e), rd(h, e + kWordBytes));
        }
        v.extents.push_back(
            {a, node_bytes(kHeaderWords + 2 * count), id});
        a = 0;
        break;
      }
      case kDeltaInsert:
      case kDeltaDelete:
      case kDeltaMerge:
        deltas.push_back(a);
        v.extents.push_back({a, kCachelineBytes, id});
        a = rd(h, a + kOffNext);
        if (!a) throw Error("delta chain without a base node");
        break;
      default:
        throw Error("unknown node kind in chain");
    }
  }
  v.chain_len = deltas.size();

  auto upsert_entry = [&](Word key, Word val) {
    auto it = std::lower_bound(
        v.entries.begin(), v.entries.end(), key,
        [](const auto& e, Word k) { return e.first < k; });
    if (it != v.entries.end() && it->first == key) {
      it->second = val;
    } else {
      v.entries.insert(it, {key, val});
    }
  };
  auto erase_entry = [&](Word key) {
    auto it = std::lower_bound(
        v.entries.begin(), v.entries.end(), key,
        [](const auto& e, Word k) { return e.first < k; });
    if (it != v.entries.end() && it->first == key) v.entries.erase(it);
  };

  for (auto it = deltas.rbegin(); it != deltas.rend(); ++it) {
    const Addr d = *it;
    switch (rd(h, d + kOffKind)) {
      case kDeltaInsert:
        upsert_entry(rd(h, d + kOffAux0), rd(h, d + kOffAux1));
        break;
      case kDeltaDelete:
        erase_entry(rd(h, d + kOffAux0));
        break;
      case kDeltaMerge: {
        const std::uint64_t right_id = rd(h, d + kOffAux0);
        const Addr content = rd(h, d + kOffAux1);
        const Word rcount = rd(h, content + kOffAux0);
        for (Word i = 0; i < rcount; ++i) {
          const Addr e = content + (kHeaderWords + 2 * i) * kWordBytes;
          upsert_entry(rd(h, e), rd(h, e + kWordBytes));
        }
        v.has_high = rd(h, d + kOffHasHigh) != 0;
        v.high = rd(h, d + kOffHigh);
        v.side = rd(h, d + kOffSide);
        v.absorbed.push_back(right_id);
        v.extents.push_back(
            {content, node_bytes(kHeaderWords + 2 * rcount), right_id});
        break;
      }
    }
  }
  return v;
}

BwTree::Probe BwTree::probe(HostId h, Addr head, Word key) const {
  Probe p;
  struct Delta {
    Word kind, k, v;
  };
  Delta deltas[32];
  std::size_t nd = 0;
  Addr a = head;
  Addr base = 0;
  while (true) {
    const Word kind = rd(h, a + kOffKind);
    if (kind == kNodeRemove) {
      p.st = Probe::St::Removed;
      return p;
    }
    if (kind == kLeaf || kind == kInner) {
      base = a;
      break;
    }
    if (kind == kDeltaMerge || nd == 32) return p;  // Fallback
    deltas[nd++] = {kind, rd(h, a + kOffAux0), rd(h, a + kOffAux1)};
    a = rd(h, a + kOffNext);
    if (!a) throw Error("delta chain without a base node");
  }

  p.level = rd(h, base + kOffLevel);
  p.has_high = rd(h, base + kOffHasHigh) != 0;
  p.high = rd(h, base + kOffHigh);
  p.side = rd(h, base + kOffSide);
  const Word count = rd(h, base + kOffAux0);
  auto entry_key = [&](Word i) {
    return rd(h, base + (kHeaderWords + 2 * i) * kWordBytes);
  };
  auto entry_val = [&](Word i) {
    return rd(h, base + (kHeaderWords + 2 * i + 1) * kWordBytes);
  };
  // rightmost base slot with entry_key <= key, count if none
  auto floor_slot = [&]() -> Word {
    Word lo = 0, hi = count;  // invariant: keys[lo-1] <= key < keys[hi]
    while (lo < hi) {
      const Word mid = lo + (hi - lo) / 2;
      if (entry_key(mid) <= key) {
        lo = mid + 1;
      } else {
        hi = mid;
      }
    }
    return lo ? lo - 1 : count;
  };

  if (p.level == 0) {
    // newest delta wins
    for (std::size_t i = 0; i < nd; ++i) {
      if (deltas[i].k != key) continue;
      if (deltas[i].kind == kDeltaInsert) {
        p.st = Probe::St::Found;
        p.value = deltas[i].v;
      } else {
        p.st = Probe::St::Absent;
      }
      return p;
    }
    const Word s = floor_slot();
    if (s != count && entry_key(s) == key) {
      p.st = Probe::St::Found;
      p.value = entry_val(s);
    } else {
      p.st = Probe::St::Absent;
    }
    return p;
  }

  // inner: route to the child owning key
  bool have_delta = false;
  Word dsep = 0, dchild = 0;
  for (std::size_t i = 0; i < nd; ++i) {
    if (deltas[i].kind == kDeltaDelete) return p;  // merge leftovers: Fallback
    if (deltas[i].k <= key && (!have_delta || deltas[i].k > dsep)) {
      have_delta = true;  // newest-first scan, so ties keep the newer one
      dsep = deltas[i].k;
      dchild = deltas[i].v;
    }
  }
  const Word s = floor_slot();
  if (s == count) {
    // key sorts below every base entry; mirror route()'s clamp to slot 0
    if (have_delta) {
      p.child = dchild;
    } else {
      if (count == 0) return p;
      p.child = entry_val(0);
    }
  } else if (have_delta && dsep >= entry_key(s)) {
    p.child = dchild;
  } else {
    p.child = entry_val(s);
  }
  p.st = Probe::St::Found;
  return p;
}

std::size_t BwTree::route(const NodeView& v, Word key) {
  auto it = std::upper_bound(
      v.entries.begin(), v.entries.end(), key,
      [](Word k, const auto& e) { return k < e.first; });
  if (it == v.entries.begin()) return 0;
  return std::size_t(it - v.entries.begin()) - 1;
}

bool BwTree::install(HostId h, std::uint64_t id, Addr expected, Addr desired) {
  if (id == kRootId) return root_rv_.publish(h, expected, desired);
  return mem_.p_cas(h, map_addr(id), expected, desired).success;
}

std::uint64_t BwTree::fresh_id(HostId h) {
  AtomicWordCell cell{&mem_, sb_ + 24};
  const Word id = cell.fetch_add(h, 1);
  if (id >= map_cap_) throw Error("mapping table full");
  return id;
}

void BwTree::retire_extent(HostId h, unsigned w, Addr a, std::size_t bytes,
                           std::uint64_t id) {
  if (gc_) {
    gc_->retire(w, h, {.addr = a, .bytes = bytes, .node_id = id});
  } else {
    rt_.alloc.free_deferred(a, bytes, id ? std::vector<std::uint64_t>{id}
                                         : std::vector<std::uint64_t>{});
  }
}

void BwTree::retire_view(HostId h, unsigned w, const NodeView& v) {
  for (const auto& e : v.extents) retire_extent(h, w, e.addr, e.bytes, e.id);
}

BwTree::Descent BwTree::descend(HostId h, unsigned w, Word key,
                                Word target_level) {
  for (int restart = 0; restart < 1000; ++restart) {
    Descent d;
    std::uint64_t id = kRootId;
    Addr addr = replica_root_ ? root_rv_.read(h, w)
                              : mem_.p_load(h, map_addr(kRootId));
    bool speculative_root = replica_root_;
    bool again = false;
    while (!again) {
      NodeView v = materialize(h, addr, id);
      if (v.removed) {
        if (HelpScope::available()) help_remove(h, w, id, v.head);
        again = true;
        break;
      }
      while (v.has_high && key >= v.high) {
        stats_.side_walks.fetch_add(1, std::memory_order_relaxed);
        if (HelpScope::available() && !d.path.empty()) {
          help_split(h, w, v.high, v.side, v.level);
        }
        id = v.side;
        if (!id) {
          again = true;
          break;
        }
        addr = mem_.p_load(h, map_addr(id));
        speculative_root = false;
        if (!addr) {
          again = true;
          break;
        }
        v = materialize(h, addr, id);
        if (v.removed) {
          if (HelpScope::available()) help_remove(h, w, id, v.head);
          again = true;
          break;
        }
      }
      if (again) break;
      if (v.level == target_level) {
        if (speculative_root) {
          // writers CAS against the head; get the authoritative one
          addr = mem_.p_load(h, map_addr(kRootId));
          speculative_root = false;
          continue;
        }
        d.id = id;
        d.view = std::move(v);
        return d;
      }
      if (v.level < target_level || v.entries.empty()) {
        again = true;
        break;
      }
      if (auto* t = table(h)) {
        t->entries[id].store(addr, std::memory_order_relaxed);
      }
      d.path.push_back({id});
      id = v.entries[route(v, key)].second;
      addr = mem_.p_load(h, map_addr(id));
      speculative_root = false;
      if (!addr) {
        again = true;
        break;
      }
    }
    stats_.restarts.fetch_add(1, std::memory_order_relaxed);
  }
  throw Error("descent did not settle");
}

void BwTree::help_split(HostId h, unsigned w, Word sep, std::uint64_t child,
                        Word child_level) {
  if (!HelpScope::available() || !child) return;
  HelpScope scope;
  for (int attempt = 0; attempt < 4; ++attempt) {
    Descent d;
    try {
      d = descend(h, w, sep, child_level + 1);
    } catch (const Error&) {
      return;
    }
    const NodeView& pv = d.view;
    if (pv.entries.empty()) return;
    const std::size_t i = route(pv, sep);
    if (pv.entries[i].second == child || pv.entries[i].first == sep) return;
    const Addr delta = write_node(
        h, {kDeltaInsert, pv.level, pv.head, 0, 0, 0, sep, child});
    if (install(h, d.id, pv.head, delta)) {
      if (pv.chain_len + 1 >= kConsolidateAt ||
          pv.entries.size() + 1 > kInnerMax) {
        maybe_consolidate(h, w, d.id, d.path);
      }
      return;
    }
    retire_extent(h, w, delta, kCachelineBytes, 0);
  }
}

void BwTree::help_remove(HostId h, unsigned w, std::uint64_t id,
                         Addr rm_addr) {
  if (!HelpScope::available()) return;
  HelpScope scope;
  const Word level = rd(h, rm_addr + kOffLevel);
  const Word sep = rd(h, rm_addr + kOffHigh);
  const std::uint64_t partner = rd(h, rm_addr + kOffAux0);
  const Addr content = rd(h, rm_addr + kOffAux1);

  // 1. splice the content into the true left neighbour (the partner may
  // itself have split since the removal was initiated)
  std::uint64_t l = partner;
  for (int steps = 0; steps < 64; ++steps) {
    const Addr laddr = mem_.p_load(h, map_addr(l));
    if (!laddr) return;
    NodeView lv = materialize(h, laddr, l);
    if (lv.removed) {
      help_remove(h, w, l, lv.head);
      return;
    }
    if (std::find(lv.absorbed.begin(), lv.absorbed.end(), id) !=
        lv.absorbed.end()) {
      break;
    }
    if (lv.side != id && (!lv.has_high || lv.high > sep)) {
      // the side chain already runs past the removed node's slot, so some
      // helper finished the splice (and may have consolidated it away)
      break;
    }
    if (lv.side == id) {
      const Word c_has_high = rd(h, content + kOffHasHigh);
      const Word c_high = rd(h, content + kOffHigh);
      const Word c_side = rd(h, content + kOffSide);
      const Addr delta =
          write_node(h, {kDeltaMerge, level, laddr, c_has_high, c_high,
                         c_side, id, content});
      if (install(h, l, laddr, delta)) break;
      retire_extent(h, w, delta, kCachelineBytes, 0);
      continue;
    }
    if (!lv.side) return;
    l = lv.side;
    if (steps == 63) return;  // could not confirm the splice; leave it
  }

  // 2. drop the parent's routing entry for the removed node
  for (int attempt = 0; attempt < 4; ++attempt) {
    Descent d;
    try {
      d = descend(h, w, sep, level + 1);
    } catch (const Error&) {
      return;
    }
    const NodeView& pv = d.view;
    const auto it = std::find_if(
        pv.entries.begin(), pv.entries.end(),
        [&](const auto& e) { return e.second == id; });
    if (it == pv.entries.end()) break;
    const Addr delta = write_node(
        h, {kDeltaDelete, pv.level, pv.head, 0, 0, 0, it->first, id});
    if (install(h, d.id, pv.head, delta)) {
      if (pv.chain_len + 1 >= kConsolidateAt ||
          (d.id != kRootId && pv.entries.size() <= kInnerMin)) {
        maybe_consolidate(h, w, d.id, d.path);
      }
      break;
    }
    retire_extent(h, w, delta, kCachelineBytes, 0);
  }

  // 3. retract the mapping entry; the winner owns the removal record
  if (mem_.p_cas(h, map_addr(id), rm_addr, 0).success) {
    retire_extent(h, w, rm_addr, kCachelineBytes, id);
  }
}

void BwTree::maybe_consolidate(HostId h, unsigned w, std::uint64_t id,
                               const std::vector<PathEntry>& path) {
  const Addr addr = mem_.p_load(h, map_addr(id));
  if (!addr) return;
  NodeView v = materialize(h, addr, id);
  if (v.removed) return;
  const std::size_t maxn = v.level ? kInnerMax : kLeafMax;
  const std::size_t minn = v.level ? kInnerMin : kLeafMin;
  if (v.entries.size() > maxn) {
    split(h, w, id, v, path);
    return;
  }
  if (id != kRootId && v.entries.size() < minn && !path.empty()) {
    try_merge(h, w, id, v, path);
    return;
  }
  if (v.chain_len < kConsolidateAt) return;
  const Addr nb = write_node(
      h, base_words(v.level ? kInner : kLeaf, v.level, v.has_high, v.high,
                    v.side, v.entries, 0, v.entries.size()));
  if (install(h, id, v.head, nb)) {
    stats_.consolidations.fetch_add(1, std::memory_order_relaxed);
    retire_view(h, w, v);
  } else {
    retire_extent(h, w, nb, node_bytes(kHeaderWords + 2 * v.entries.size()),
                  0);
  }
}

void BwTree::split(HostId h, unsigned w, std::uint64_t id, const NodeView& v,
                   const std::vector<PathEntry>&) {
  const std::size_t mid = v.entries.size() / 2;
  const Word sep = v.entries[mid].first;
  const Word kind = v.level ? kInner : kLeaf;
  if (id == kRootId) {
    const std::uint64_t left = fresh_id(h);
    const std::uint64_t right = fresh_id(h);
    const Addr laddr = write_node(
        h, base_words(kind, v.level, true, sep, right, v.entries, 0, mid));
    const Addr raddr = write_node(
        h, base_words(kind, v.level, v.has_high, v.high, v.side, v.entries,
                      mid, v.entries.size()));
    mem_.p_store(h, map_addr(left), laddr);
    mem_.p_store(h, map_addr(right), raddr);
    const Addr nr = write_node(
        h, base_words(kInner, v.level + 1, false, 0, 0,
                      {{0, left}, {sep, right}}, 0, 2));
    if (install(h, kRootId, v.head, nr)) {
      stats_.splits.fetch_add(1, std::memory_order_relaxed);
      retire_view(h, w, v);
    } else {
      mem_.p_store(h, map_addr(left), 0);
      mem_.p_store(h, map_addr(right), 0);
      retire_extent(h, w, laddr, node_bytes(kHeaderWords + 2 * mid), 0);
      retire_extent(
          h, w, raddr,
          node_bytes(kHeaderWords + 2 * (v.entries.size() - mid)), 0);
      retire_extent(h, w, nr, node_bytes(kHeaderWords + 4), 0);
    }
    return;
  }
  const std::uint64_t right = fresh_id(h);
  const Addr raddr = write_node(
      h, base_words(kind, v.level, v.has_high, v.high, v.side, v.entries, mid,
                    v.entries.size()));
  mem_.p_store(h, map_addr(right), raddr);
  const Addr laddr = write_node(
      h, base_words(kind, v.level, true, sep, right, v.entries, 0, mid));
  if (install(h, id, v.head, laddr)) {
    stats_.splits.fetch_add(1, std::memory_order_relaxed);
    retire_view(h, w, v);
    help_split(h, w, sep, right, v.level);
  } else {
    mem_.p_store(h, map_addr(right), 0);
    retire_extent(
        h, w, raddr, node_bytes(kHeaderWords + 2 * (v.entries.size() - mid)),
        0);
    retire_extent(h, w, laddr, node_bytes(kHeaderWords + 2 * mid), 0);
  }
}

void BwTree::try_merge(HostId h, unsigned w, std::uint64_t id,
                       const NodeView& v, const std::vector<PathEntry>& path) {
  const std::uint64_t parent_id = path.back().id;
  const Addr paddr = mem_.p_load(h, map_addr(parent_id));
  if (!paddr) return;
  const NodeView pv = materialize(h, paddr, parent_id);
  if (pv.removed || pv.level != v.level + 1) return;
  const auto it = std::find_if(pv.entries.begin(), pv.entries.end(),
                               [&](const auto& e) { return e.second == id; });
  if (it == pv.entries.end() || it == pv.entries.begin()) return;  // leftmost
  const std::uint64_t left_id = (it - 1)->second;
  const Word sep = it->first;

  // settle the chain into a plain base first; its extent stays live as the
  // merge content after the removal record is installed
  const std::size_t content_bytes =
      node_bytes(kHeaderWords + 2 * v.entries.size());
  const Addr content = write_node(
      h, base_words(v.level ? kInner : kLeaf, v.level, v.has_high, v.high,
                    v.side, v.entries, 0, v.entries.size()));
  if (!install(h, id, v.head, content)) {
    retire_extent(h, w, content, content_bytes, 0);
    return;
  }
  retire_view(h, w, v);

  const Addr rm = write_node(
      h, {kNodeRemove, v.level, content, 0, sep, 0, left_id, content});
  if (!install(h, id, content, rm)) {
    retire_extent(h, w, rm, kCachelineBytes, 0);
    return;  // somebody updated the node; it lives on
  }
  stats_.merges.fetch_add(1, std::memory_order_relaxed);
  help_remove(h, w, id, rm);
}

void BwTree::upsert(HostId h, unsigned w, Word key, Word value) {
  EpochGuard eg(gc_, w, h);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Descent d = descend(h, w, key, 0);
    const Addr delta =
        write_node(h, {kDeltaInsert, 0, d.view.head, 0, 0, 0, key, value});
    if (install(h, d.id, d.view.head, delta)) {
      stats_.upserts.fetch_add(1, std::memory_order_relaxed);
      if (d.view.chain_len + 1 >= kConsolidateAt ||
          d.view.entries.size() + 1 > kLeafMax) {
        maybe_consolidate(h, w, d.id, d.path);
      }
      return;
    }
    retire_extent(h, w, delta, kCachelineBytes, 0);
    stats_.restarts.fetch_add(1, std::memory_order_relaxed);
  }
  throw Error("upsert did not settle");
}

OpStatus BwTree::remove(HostId h, unsigned w, Word key) {
  EpochGuard eg(gc_, w, h);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Descent d = descend(h, w, key, 0);
    const auto& es = d.view.entries;
    const auto it = std::lower_bound(
        es.begin(), es.end(), key,
        [](const auto& e, Word k) { return e.first < k; });
    if (it == es.end() || it->first != key) return OpStatus::NotFound;
    const Addr delta =
        write_node(h, {kDeltaDelete, 0, d.view.head, 0, 0, 0, key, 0});
    if (install(h, d.id, d.view.head, delta)) {
      stats_.removes.fetch_add(1, std::memory_order_relaxed);
      if (d.view.chain_len + 1 >= kConsolidateAt ||
          (d.id != kRootId && es.size() <= kLeafMin)) {
        maybe_consolidate(h, w, d.id, d.path);
      }
      return OpStatus::Ok;
    }
    retire_extent(h, w, delta, kCachelineBytes, 0);
    stats_.restarts.fetch_add(1, std::memory_order_relaxed);
  }
  throw Error("remove did not settle");
}

std::optional<Word> BwTree::lookup(HostId h, unsigned w, Word key) {
  EpochGuard eg(gc_, w, h);
  stats_.lookups.fetch_add(1, std::memory_order_relaxed);
  if (spec_read_ && table(h)) {
    bool miss = false;
    auto r = lookup_fast(h, w, key, miss);
    if (!miss) {
      stats_.fast_hits.fetch_add(1, std::memory_order_relaxed);
      return r;
    }
    stats_.fallbacks.fetch_add(1, std::memory_order_relaxed);
  }
  return lookup_slow(h, w, key);
}

std::optional<Word> BwTree::lookup_fast(HostId h, unsigned w, Word key,
                                        bool& miss) {
  miss = true;
  LocalTable* t = table(h);
  Addr addr = replica_root_ ? root_rv_.read(h, w)
                            : mem_.p_load(h, map_addr(kRootId));
  if (!addr) return std::nullopt;

  // speculative routing: pick a leaf id using only local state
  std::uint64_t leaf_id = kRootId;
  Probe v = probe(h, addr, key);
  if (v.st == Probe::St::Removed || v.st == Probe::St::Fallback) {
    return std::nullopt;
  }
  int budget = 32;
  while (v.level > 0) {
    if (--budget < 0) return std::nullopt;
    if (v.has_high && key >= v.high) {
      stats_.side_walks.fetch_add(1, std::memory_order_relaxed);
      if (!v.side) return std::nullopt;
      addr = t->entries[v.side].load(std::memory_order_relaxed);
      if (!addr) return std::nullopt;
      v = probe(h, addr, key);
      if (v.st != Probe::St::Found) return std::nullopt;
      continue;
    }
    const std::uint64_t child = v.child;
    if (v.level == 1) {
      leaf_id = child;
      break;
    }
    addr = t->entries[child].load(std::memory_order_relaxed);
    if (!addr) return std::nullopt;
    v = probe(h, addr, key);
    if (v.st != Probe::St::Found) return std::nullopt;
  }

  // authoritative check: the leaf mapping entry is always a bypass load,
  // so a hit here can never be stale
  for (int hops = 0; hops < 16; ++hops) {
    const Addr la = mem_.p_load(h, map_addr(leaf_id));
    if (!la) return std::nullopt;
    const Probe lv = probe(h, la, key);
    if (lv.st == Probe::St::Removed || lv.st == Probe::St::Fallback) {
      return std::nullopt;
    }
    if (lv.has_high && key >= lv.high) {
      stats_.side_walks.fetch_add(1, std::memory_order_relaxed);
      if (!lv.side) return std::nullopt;
      leaf_id = lv.side;
      continue;
    }
    if (lv.st == Probe::St::Found) {
      miss = false;
      return lv.value;
    }
    return std::nullopt;  // absence needs the slow path to confirm
  }
  return std::nullopt;
}

std::optional<Word> BwTree::lookup_slow(HostId h, unsigned w, Word key) {
  Descent d = descend(h, w, key, 0);
  const auto& es = d.view.entries;
  const auto it = std::lower_bound(
      es.begin(), es.end(), key,
      [](const auto& e, Word k) { return e.first < k; });
  if (it != es.end() && it->first == key) return it->second;
  return std::nullopt;
}

std::vector<std::pair<Word, Word>> BwTree::full_scan(HostId h) {
  for (int restart = 0; restart < 1000; ++restart) {
    std::vector<std::pair<Word, Word>> out;
    Descent d = descend(h, 0, 0, 0);
    std::uint64_t id = d.id;
    NodeView v = std::move(d.view);
    bool ok = true;
    for (;;) {
      out.insert(out.end(), v.entries.begin(), v.entries.end());
      if (!v.side) break;
      id = v.side;
      const Addr addr = mem_.p_load(h, map_addr(id));
      if (!addr) {
        ok = false;
        break;
      }
      v = materialize(h, addr, id);
      if (v.removed) {
        if (HelpScope::available()) help_remove(h, 0, id, v.head);
        ok = false;
        break;
      }
    }
    if (ok) return out;
  }
  throw Error("scan did not settle");
}

}  // namespace pcc
