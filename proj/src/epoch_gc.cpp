#include "pcc/epoch_gc.hpp"

#include <algorithm>

namespace pcc {

EpochGc::EpochGc(Runtime& rt, HostId setup_host, unsigned workers, GcMode mode)
    : rt_(rt),
      mode_(mode),
      workers_(workers),
      views_(workers),
      worker_host_(workers, setup_host) {
  const std::size_t bytes = (1 + 2 * workers) * kCachelineBytes;
  const Addr base = rt_.alloc.alloc(bytes);
  rt_.mem.register_sync(base, bytes);
  global_ = base;
  locals_ = base + kCachelineBytes;
  replicas_ = locals_ + workers * kCachelineBytes;
  rt_.mem.p_store(setup_host, global_, 1);
  for (unsigned w = 0; w < workers_; ++w) {
    rt_.mem.p_store(setup_host, local_addr(w), kIdle);
    rt_.mem.p_store(setup_host, replica_addr(w), 1);
  }
  reclaim_ = [this](const GarbageEntry& g) {
    rt_.alloc.free_deferred(g.addr, g.bytes, {g.node_id});
  };
}

void EpochGc::bind_worker(unsigned w, HostId host) { worker_host_.at(w) = host; }

std::uint64_t EpochGc::read_epoch(unsigned w, HostId h) const {
  if (mode_ == GcMode::Direct) return rt_.mem.p_load(h, global_);
  return rt_.mem.p_load(h, replica_addr(w));
}

void EpochGc::enter(unsigned w, HostId h) {
  EnterView& v = views_[w];
  if (v.left == 0) {
    v.value = read_epoch(w, h);
    v.left = kEnterRefresh;
  }
  --v.left;
  rt_.mem.p_store(h, local_addr(w), v.value);
}

void EpochGc::exit(unsigned w, HostId h) {
  rt_.mem.p_store(h, local_addr(w), kIdle);
}

void EpochGc::retire(unsigned w, HostId h, GarbageEntry g) {
  const std::uint64_t e = read_epoch(w, h);
  std::lock_guard lk(mu_);
  retired_.push_back(Retired{g, e});
}

std::size_t EpochGc::collect(HostId h) {
  std::uint64_t m = kIdle;
  for (unsigned w = 0; w < workers_; ++w) {
    if (!rt_.controller.is_alive(worker_host_[w])) continue;
    m = std::min(m, rt_.mem.p_load(h, local_addr(w)));
  }
  if (m == kIdle) m = rt_.mem.p_load(h, global_);
  // Replicas lag the global by at most one advance, so a reader may still
  // hold the previous epoch's view: keep one extra epoch around.
  const std::uint64_t slack = mode_ == GcMode::Replicated ? 1 : 0;
  if (m <= slack) return 0;
  const std::uint64_t limit = m - slack;

  std::vector<Retired> ready;
  {
    std::lock_guard lk(mu_);
    auto mid = std::stable_partition(
        retired_.begin(), retired_.end(),
        [&](const Retired& r) { return r.epoch >= limit; });
    ready.assign(std::make_move_iterator(mid),
                 std::make_move_iterator(retired_.end()));
    retired_.erase(mid, retired_.end());
    reclaimed_ += ready.size();
  }
  for (const auto& r : ready) reclaim_(r.entry);
  return ready.size();
}

void EpochGc::advance_global(HostId h) {
  for (;;) {
    const Word g = rt_.mem.p_load(h, global_);
    if (rt_.mem.p_cas(h, global_, g, g + 1).success) return;
  }
}

void EpochGc::propagate_replica(HostId h, unsigned w) {
  rt_.mem.p_store(h, replica_addr(w), rt_.mem.p_load(h, global_));
}

void EpochGc::advance(HostId h) {
  advance_global(h);
  for (unsigned w = 0; w < workers_; ++w) propagate_replica(h, w);
}

std::uint64_t EpochGc::global_epoch(HostId h) const {
  return rt_.mem.p_load(h, global_);
}
std::uint64_t EpochGc::local_epoch(HostId h, unsigned w) const {
  return rt_.mem.p_load(h, local_addr(w));
}
std::uint64_t EpochGc::replica_epoch(HostId h, unsigned w) const {
  return rt_.mem.p_load(h, replica_addr(w));
}

std::size_t EpochGc::retired_count() const {
  std::lock_guard lk(mu_);
  return retired_.size();
}

}  // namespace pcc
