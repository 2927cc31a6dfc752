#include "pcc/mem.hpp"

#include <cstdlib>
#include <ostream>
#include <random>

#include "pcc/timing.hpp"

namespace pcc {

PccMemory::PccMemory(std::size_t size_bytes)
    : size_bytes_(size_bytes), shared_(size_bytes / kWordBytes) {
  if (size_bytes % kCachelineBytes != 0) {
    throw AlignmentError("region size must be a multiple of the cacheline");
  }
  for (auto& w : shared_) w.store(0, std::memory_order_relaxed);
}

void PccMemory::attach_host(HostId host) {
  std::lock_guard lk(attach_mu_);
  if (host >= kMaxHosts) throw Error("host id out of range");
  if (hosts_[host]) throw Error("duplicate host id");
  auto h = std::make_unique<Host>();
  h->alive.store(true);
  hosts_[host] = std::move(h);
}

HostId PccMemory::attach_next_host() {
  std::lock_guard lk(attach_mu_);
  for (HostId h = 0; h < kMaxHosts; ++h) {
    if (!hosts_[h]) {
      auto ptr = std::make_unique<Host>();
      ptr->alive.store(true);
      hosts_[h] = std::move(ptr);
      return h;
    }
  }
  throw Error("no host slots left");
}

bool PccMemory::host_alive(HostId host) const {
  if (host >= kMaxHosts || !hosts_[host]) return false;
  return hosts_[host]->alive.load();
}

PccMemory::Host& PccMemory::host_ref(HostId h) {
  if (h >= kMaxHosts || !hosts_[h]) throw Error("unknown host");
  return *hosts_[h];
}

const PccMemory::Host& PccMemory::host_ref(HostId h) const {
  if (h >= kMaxHosts || !hosts_[h]) throw Error("unknown host");
  return *hosts_[h];
}

PccMemory::Host& PccMemory::live_host(HostId h) {
  Host& host = host_ref(h);
  if (!host.alive.load()) throw HostDeadError("host is dead");
  return host;
}

void PccMemory::check_word_aligned(Addr a) const {
  if (a % kWordBytes != 0) throw AlignmentError("address not 8-byte aligned");
  if (a + kWordBytes > size_bytes_) throw AlignmentError("address out of range");
}

void PccMemory::crash_locked(HostId h, Host& host) {
  host.lines.clear();
  host.alive.store(false);
  if (const char* env = std::getenv("PCC_DEBUG_DUMP"); env && env[0] == '1') {
    // dump suppressed here; callers can request debug_dump explicitly
  }
  if (crash_cb_) crash_cb_(h);
}

void PccMemory::note_op(HostId h, Host& host) {
  auto cd = host.crash_countdown.load(std::memory_order_relaxed);
  if (cd < 0) return;
  cd = host.crash_countdown.fetch_sub(1) - 1;
  if (cd < 0) {
    host.crash_countdown.store(-1);
    {
      std::lock_guard lk(host.mu);
      crash_locked(h, host);
    }
    throw HostCrashed(h);
  }
}

void PccMemory::audit_cached(Addr a) {
  std::shared_lock lk(sync_mu_);
  auto it = sync_ranges_.upper_bound(a);
  if (it != sync_ranges_.begin()) {
    --it;
    if (a >= it->first && a < it->second) {
      sync_violations_.fetch_add(1);
    }
  }
}

void PccMemory::writeback_line(Addr line_id, CacheLine& cl) {
  if (cl.dirty_mask == 0) return;
  const Addr base_word = line_id * kWordsPerLine;
  for (std::size_t i = 0; i < kWordsPerLine; ++i) {
    if (cl.dirty_mask & (1u << i)) {
      shared_[base_word + i].store(cl.words[i], std::memory_order_seq_cst);
    }
  }
  cl.dirty_mask = 0;
}

Word PccMemory::load(HostId h, Addr a) {
  check_word_aligned(a);
  Host& host = live_host(h);
  note_op(h, host);
  audit_cached(a);
  counts_.load.fetch_add(1, std::memory_order_relaxed);
  std::lock_guard lk(host.mu);
  if (!host.alive.load()) throw HostDeadError("host is dead");
  const Addr lid = line_of(a);
  auto it = host.lines.find(lid);
  bool hit = it != host.lines.end();
  if (!hit) {
    CacheLine cl;
    const Addr base_word = lid * kWordsPerLine;
    for (std::size_t i = 0; i < kWordsPerLine; ++i) {
      cl.words[i] = shared_[base_word + i].load(std::memory_order_seq_cst);
    }
    it = host.lines.emplace(lid, cl).first;
  }
  if (timing_) timing_->charge(hit ? OpKind::LoadHit : OpKind::LoadMiss, a);
  return it->second.words[(a / kWordBytes) % kWordsPerLine];
}

void PccMemory::store(HostId h, Addr a, Word v) {
  check_word_aligned(a);
  Host& host = live_host(h);
  note_op(h, host);
  audit_cached(a);
  counts_.store.fetch_add(1, std::memory_order_relaxed);
  std::lock_guard lk(host.mu);
  if (!host.alive.load()) throw HostDeadError("host is dead");
  const Addr lid = line_of(a);
  auto it = host.lines.find(lid);
  if (it == host.lines.end()) {
    CacheLine cl;
    const Addr base_word = lid * kWordsPerLine;
    for (std::size_t i = 0; i < kWordsPerLine; ++i) {
      cl.words[i] = shared_[base_word + i].load(std::memory_order_seq_cst);
    }
    it = host.lines.emplace(lid, cl).first;
  }
  const std::size_t idx = (a / kWordBytes) % kWordsPerLine;
  it->second.words[idx] = v;
  it->second.dirty_mask |= static_cast<std::uint8_t>(1u << idx);
  if (timing_) timing_->charge(OpKind::LoadHit, a);
}

Word PccMemory::p_load(HostId h, Addr a) {
  check_word_aligned(a);
  Host& host = live_host(h);
  note_op(h, host);
  counts_.p_load.fetch_add(1, std::memory_order_relaxed);
  if (timing_) timing_->charge(OpKind::PLoad, a);
  return shared_[a / kWordBytes].load(std::memory_order_seq_cst);
}

void PccMemory::p_store(HostId h, Addr a, Word v) {
  check_word_aligned(a);
  Host& host = live_host(h);
  note_op(h, host);
  counts_.p_store.fetch_add(1, std::memory_order_relaxed);
  if (timing_) timing_->charge(OpKind::PStore, a);
  shared_[a / kWordBytes].store(v, std::memory_order_seq_cst);
}

CasResult PccMemory::p_cas(HostId h, Addr a, Word expected, Word desired) {
  check_word_aligned(a);
  Host& host = live_host(h);
  note_op(h, host);
  counts_.p_cas.fetch_add(1, std::memory_order_relaxed);
  if (timing_) timing_->charge(OpKind::PCas, a);
  Word e = expected;
  bool ok = shared_[a / kWordBytes].compare_exchange_strong(
      e, desired, std::memory_order_seq_cst);
  return {ok, e};
}

void PccMemory::clflush_mfence(HostId h, Addr a) {
  if (a >= size_bytes_) throw AlignmentError("address out of range");
  Host& host = live_host(h);
  note_op(h, host);
  counts_.clflush.fetch_add(1, std::memory_order_relaxed);
  if (timing_) timing_->charge(OpKind::Flush, a);
  std::lock_guard lk(host.mu);
  if (!host.alive.load()) throw HostDeadError("host is dead");
  auto it = host.lines.find(line_of(a));
  if (it == host.lines.end()) return;
  writeback_line(it->first, it->second);
  host.lines.erase(it);
}

void PccMemory::clwb_mfence(HostId h, Addr a) {
  if (a >= size_bytes_) throw AlignmentError("address out of range");
  Host& host = live_host(h);
  note_op(h, host);
  counts_.clwb.fetch_add(1, std::memory_order_relaxed);
  if (timing_) timing_->charge(OpKind::Clwb, a);
  std::lock_guard lk(host.mu);
  if (!host.alive.load()) throw HostDeadError("host is dead");
  auto it = host.lines.find(line_of(a));
  if (it == host.lines.end()) return;
  writeback_line(it->first, it->second);
}

void PccMemory::adversary_step(std::uint64_t seed, AdversaryConfig cfg) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (HostId h = 0; h < kMaxHosts; ++h) {
    if (!hosts_[h]) continue;
    Host& host = *hosts_[h];
    std::lock_guard lk(host.mu);
    if (!host.alive.load()) continue;
    for (auto it = host.lines.begin(); it != host.lines.end();) {
      if (it->second.dirty_mask != 0) {
        if (coin(rng) < cfg.writeback_prob) {
          writeback_line(it->first, it->second);
        }
        ++it;
      } else if (coin(rng) < cfg.evict_prob) {
        it = host.lines.erase(it);
      } else {
        ++it;
      }
    }
  }
}

void PccMemory::crash_host(HostId h) {
  Host& host = host_ref(h);
  std::lock_guard lk(host.mu);
  if (!host.alive.load()) throw Error("double crash");
  crash_locked(h, host);
}

std::vector<Word> PccMemory::snapshot_shared() const {
  std::vector<Word> out(shared_.size());
  for (std::size_t i = 0; i < shared_.size(); ++i) {
    out[i] = shared_[i].load(std::memory_order_seq_cst);
  }
  return out;
}

void PccMemory::pre_cache(HostId h, Addr a) {
  Host& host = live_host(h);
  std::lock_guard lk(host.mu);
  const Addr lid = line_of(a);
  if (host.lines.count(lid)) return;
  CacheLine cl;
  const Addr base_word = lid * kWordsPerLine;
  for (std::size_t i = 0; i < kWordsPerLine; ++i) {
    cl.words[i] = shared_[base_word + i].load(std::memory_order_seq_cst);
  }
  host.lines.emplace(lid, cl);
}

void PccMemory::set_crash_after(HostId h, std::uint64_t ops) {
  host_ref(h).crash_countdown.store(static_cast<std::int64_t>(ops));
}

Word PccMemory::controller_load(Addr a) const {
  return shared_[a / kWordBytes].load(std::memory_order_seq_cst);
}

void PccMemory::controller_store(Addr a, Word v) {
  shared_[a / kWordBytes].store(v, std::memory_order_seq_cst);
}

CasResult PccMemory::controller_cas(Addr a, Word expected, Word desired) {
  Word e = expected;
  bool ok = shared_[a / kWordBytes].compare_exchange_strong(
      e, desired, std::memory_order_seq_cst);
  return {ok, e};
}

void PccMemory::register_sync(Addr a, std::size_t bytes) {
  std::unique_lock lk(sync_mu_);
  sync_ranges_[a] = std::max(sync_ranges_[a], a + bytes);
}

void PccMemory::unregister_sync(Addr a, std::size_t bytes) {
  std::unique_lock lk(sync_mu_);
  auto it = sync_ranges_.find(a);
  if (it != sync_ranges_.end() && it->second == a + bytes) {
    sync_ranges_.erase(it);
  }
}

PccMemory::OpCounts PccMemory::op_counts() const {
  OpCounts c;
  c.load = counts_.load.load();
  c.store = counts_.store.load();
  c.p_load = counts_.p_load.load();
  c.p_store = counts_.p_store.load();
  c.p_cas = counts_.p_cas.load();
  c.clflush = counts_.clflush.load();
  c.clwb = counts_.clwb.load();
  return c;
}

std::uint64_t PccMemory::total_ops() const {
  auto c = op_counts();
  return c.load + c.store + c.p_load + c.p_store + c.p_cas + c.clflush +
         c.clwb;
}

void PccMemory::debug_dump(std::ostream& os) const {
  os << "PccMemory " << size_bytes_ << " bytes\n";
  for (HostId h = 0; h < kMaxHosts; ++h) {
    if (!hosts_[h]) continue;
    const Host& host = *hosts_[h];
    std::lock_guard lk(host.mu);
    os << "host " << h << (host.alive.load() ? " alive" : " dead") << ", "
       << host.lines.size() << " lines\n";
    for (const auto& [lid, cl] : host.lines) {
      os << "  line " << lid << (cl.dirty_mask ? " dirty " : " clean ");
      if (cl.dirty_mask) os << "mask=0x" << std::hex << +cl.dirty_mask << std::dec;
      os << "\n";
    }
  }
}

}  // namespace pcc
