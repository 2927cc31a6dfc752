#include "pcc/sync.hpp"

namespace pcc {

bool RecoverableLock::try_acquire(HostId me) {
  const Word w = mem_->p_load(me, addr_);
  if (lockword::locked(w)) return false;
  const Word want = lockword::make(lockword::version(w), true, me,
                                   lockword::deleted(w));
  return mem_->p_cas(me, addr_, w, want).success;
}

bool RecoverableLock::acquire(HostId me, Runtime& rt, std::uint64_t timeout_ns,
                              std::uint64_t max_attempts) {
  const std::uint64_t pcas_ns = 474;  // virtual cost of one failed attempt
  std::uint64_t waited = 0;
  std::uint64_t attempts = 0;
  for (;;) {
    if (try_acquire(me)) return true;
    rt.clock.advance(pcas_ns);
    waited += pcas_ns;
    if (waited >= timeout_ns) {
      rt.controller.release_if_dead(addr_);
      waited = 0;  // keep asking once per further timeout period
    }
    if (max_attempts != 0 && ++attempts >= max_attempts) return false;
  }
}

void RecoverableLock::release(HostId me) {
  const Word w = mem_->p_load(me, addr_);
  if (!lockword::locked(w) || lockword::owner(w) != me) {
    throw Error("releasing a lock not held by this host");
  }
  const Word cleared = lockword::make(lockword::version(w) + 1, false,
                                      std::nullopt, lockword::deleted(w));
  if (!mem_->p_cas(me, addr_, w, cleared).success) {
    throw Error("lock word changed under the owner");
  }
}

std::optional<Word> OlcLock::read_lock_or_restart(HostId h) const {
  const Word w = mem_->p_load(h, lock_addr_);
  if (lockword::locked(w)) return std::nullopt;
  // Invalidate the node's cachelines before reading: in-place updated
  // protected-data may be stale in this host's cache.
  for_each_line([&](Addr a) { mem_->clflush_mfence(h, a); });
  return w;
}

OlcResult OlcLock::read_unlock_or_restart(HostId h, Word snapshot) const {
  const Word w = mem_->p_load(h, lock_addr_);
  return w == snapshot ? OlcResult::Ok : OlcResult::Restart;
}

OlcResult OlcLock::write_lock(HostId me) const {
  const Word w = mem_->p_load(me, lock_addr_);
  if (lockword::locked(w)) return OlcResult::Restart;
  const Word want = lockword::make(lockword::version(w), true, me,
                                   lockword::deleted(w));
  if (!mem_->p_cas(me, lock_addr_, w, want).success) return OlcResult::Restart;
  for_each_line([&](Addr a) { mem_->clflush_mfence(me, a); });
  return OlcResult::Ok;
}

void OlcLock::write_unlock(HostId me) const {
  // Publish the node's bytes before the version moves.
  for_each_line([&](Addr a) { mem_->clwb_mfence(me, a); });
  const Word w = mem_->p_load(me, lock_addr_);
  if (!lockword::locked(w) || lockword::owner(w) != me) {
    throw Error("write_unlock by non-owner");
  }
  mem_->p_store(me, lock_addr_,
                lockword::make(lockword::version(w) + 1, false, std::nullopt,
                               lockword::deleted(w)));
}

Addr place_node(DeferredAllocator& alloc, std::size_t bytes) {
  if (bytes == 0) throw Error("zero-size node");
  return alloc.alloc(bytes);  // allocator hands out whole cachelines
}

}  // namespace pcc
