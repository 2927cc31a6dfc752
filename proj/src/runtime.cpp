#include "pcc/runtime.hpp"

#include <algorithm>

#include "pcc/sync.hpp"

namespace pcc {

// ---------------------------------------------------------------- Controller

void Controller::heartbeat(HostId h) {
  std::lock_guard lk(mu_);
  if (dead_.count(h)) return;  // dead hosts never come back
  crash_time_.erase(h);
}

void Controller::on_crash(HostId h) {
  std::lock_guard lk(mu_);
  crash_time_.emplace(h, clock_.now());
}

bool Controller::is_alive(HostId h) const {
  std::lock_guard lk(mu_);
  auto it = crash_time_.find(h);
  if (it == crash_time_.end()) {
    if (mem_.host_alive(h)) return true;
    // A host that stopped before this controller came up: the missing
    // heartbeats are first noticed now, so the grace window starts now.
    it = crash_time_.emplace(h, clock_.now()).first;
  }
  if (dead_.count(h)) return false;
  if (clock_.now() - it->second >= death_threshold_ns_) {
    dead_.insert(h);  // marked dead exactly once
    return false;
  }
  return true;
}

bool Controller::marked_dead(HostId h) const {
  std::lock_guard lk(mu_);
  return dead_.count(h) != 0;
}

bool Controller::release_if_dead(Addr lock_addr) {
  for (;;) {
    const Word w = mem_.controller_load(lock_addr);
    if (!lockword::locked(w)) return false;
    const auto owner = lockword::owner(w);
    if (!owner || is_alive(*owner)) return false;
    const Word cleared = lockword::make(lockword::version(w) + 1);
    if (mem_.controller_cas(lock_addr, w, cleared).success) return true;
  }
}

// ---------------------------------------------------------------- MessageBus

void MessageBus::add_invalidator(HostId h, Invalidator fn) {
  std::lock_guard lk(mu_);
  invalidators_[h].push_back(std::move(fn));
}

std::uint64_t MessageBus::broadcast_flush(
    std::vector<Addr> lines, std::vector<std::uint64_t> node_ids) {
  std::lock_guard lk(mu_);
  const std::uint64_t req = next_req_++;
  Request r;
  for (HostId h = 0; h < kMaxHosts; ++h) {
    if (!mem_.host_alive(h)) continue;
    r.pending.insert(h);
    inboxes_[h].push_back(BusMessage{req, lines, node_ids});
  }
  if (!r.pending.empty()) requests_.emplace(req, std::move(r));
  return req;
}

bool MessageBus::complete(std::uint64_t req_id) const {
  std::lock_guard lk(mu_);
  auto it = requests_.find(req_id);
  if (it == requests_.end()) return true;
  // Dead hosts are auto-acked by the controller.
  return std::all_of(it->second.pending.begin(), it->second.pending.end(),
                     [&](HostId h) { return !mem_.host_alive(h); });
}

void MessageBus::ack(std::uint64_t req_id, HostId h) {
  auto it = requests_.find(req_id);
  if (it == requests_.end()) return;
  it->second.pending.erase(h);
  if (it->second.pending.empty()) requests_.erase(it);
}

bool MessageBus::pump(HostId h) {
  BusMessage msg;
  std::vector<Invalidator> fns;
  {
    std::lock_guard lk(mu_);
    auto it = inboxes_.find(h);
    if (it == inboxes_.end() || it->second.empty()) return false;
    msg = std::move(it->second.front());
    it->second.pop_front();
    if (!mem_.host_alive(h)) {
      ack(msg.req_id, h);  // dropped and auto-acked
      return true;
    }
    auto fit = invalidators_.find(h);
    if (fit != invalidators_.end()) fns = fit->second;
  }
  for (Addr a : msg.lines) mem_.clflush_mfence(h, a);
  for (auto& fn : fns) fn(msg.node_ids);
  std::lock_guard lk(mu_);
  ack(msg.req_id, h);
  return true;
}

void MessageBus::pump_all() {
  for (HostId h = 0; h < kMaxHosts; ++h) {
    while (pump(h)) {
    }
  }
}

void MessageBus::await_acks(std::uint64_t req_id) {
  while (!complete(req_id)) pump_all();
}

// ---------------------------------------------------------- DeferredAllocator

DeferredAllocator::DeferredAllocator(PccMemory& mem, MessageBus& bus,
                                     bool recover)
    : mem_(mem), bus_(bus) {
  if (!recover) {
    mem_.controller_store(kStateAddr, kHeapBase);
  }
}

std::uint64_t DeferredAllocator::bump() const {
  return mem_.controller_load(kStateAddr);
}

void DeferredAllocator::zero_extent(Addr a, std::size_t lines) {
  for (Addr w = a; w < a + lines * kCachelineBytes; w += kWordBytes) {
    mem_.controller_store(w, 0);
  }
}

Addr DeferredAllocator::take(std::size_t lines) {
  auto it = free_.find(lines);
  if (it != free_.end() && !it->second.empty()) {
    Addr a = it->second.back();
    it->second.pop_back();
    zero_extent(a, lines);
    return a;
  }
  const Addr a = mem_.controller_load(kStateAddr);
  const Addr next = a + lines * kCachelineBytes;
  if (next > mem_.size_bytes()) throw Error("shared region exhausted");
  mem_.controller_store(kStateAddr, next);
  return a;  // fresh region is already zero
}

Addr DeferredAllocator::alloc(std::size_t bytes) {
  if (bytes == 0) throw Error("zero-size allocation");
  const std::size_t lines = (bytes + kCachelineBytes - 1) / kCachelineBytes;
  std::lock_guard lk(mu_);
  // Move acked pending extents to the free lists first.
  for (auto it = pending_.begin(); it != pending_.end();) {
    if (bus_.complete(it->req_id)) {
      free_[it->lines].push_back(it->addr);
      it = pending_.erase(it);
    } else {
      ++it;
    }
  }
  return take(lines);
}

void DeferredAllocator::free_deferred(Addr a, std::size_t bytes,
                                      std::vector<std::uint64_t> node_ids) {
  const std::size_t lines = (bytes + kCachelineBytes - 1) / kCachelineBytes;
  mem_.unregister_sync(a, lines * kCachelineBytes);
  std::vector<Addr> line_addrs;
  line_addrs.reserve(lines);
  for (std::size_t i = 0; i < lines; ++i) {
    line_addrs.push_back(a + i * kCachelineBytes);
  }
  const std::uint64_t req =
      bus_.broadcast_flush(std::move(line_addrs), std::move(node_ids));
  std::lock_guard lk(mu_);
  pending_.push_back(Pending{req, a, lines});
}

void DeferredAllocator::unsafe_free(Addr a, std::size_t bytes) {
  const std::size_t lines = (bytes + kCachelineBytes - 1) / kCachelineBytes;
  mem_.unregister_sync(a, lines * kCachelineBytes);
  std::lock_guard lk(mu_);
  free_[lines].push_back(a);
}

void DeferredAllocator::poll() {
  std::lock_guard lk(mu_);
  for (auto it = pending_.begin(); it != pending_.end();) {
    if (bus_.complete(it->req_id)) {
      free_[it->lines].push_back(it->addr);
      it = pending_.erase(it);
    } else {
      ++it;
    }
  }
}

std::size_t DeferredAllocator::pending_extents() const {
  std::lock_guard lk(mu_);
  return pending_.size();
}

}  // namespace pcc
