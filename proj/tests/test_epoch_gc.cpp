#include <set>

#include "doctest.h"
#include "pcc/epoch_gc.hpp"

using namespace pcc;

namespace {
struct Fix {
  PccMemory mem{16384};
  Runtime rt{mem};
  HostId h0, h1;
  Fix() {
    h0 = rt.attach_host();
    h1 = rt.attach_host();
  }
};
}  // namespace

TEST_CASE("epochs start at 1 and advance refreshes every replica") {
  Fix f;
  EpochGc gc(f.rt, f.h0, 2, GcMode::Replicated);
  CHECK(gc.global_epoch(f.h0) == 1);
  CHECK(gc.replica_epoch(f.h0, 0) == 1);
  gc.advance(f.h0);
  CHECK(gc.global_epoch(f.h0) == 2);
  CHECK(gc.replica_epoch(f.h0, 0) == 2);
  CHECK(gc.replica_epoch(f.h0, 1) == 2);
  CHECK(gc.local_epoch(f.h0, 0) == EpochGc::kIdle);
}

TEST_CASE("direct mode: garbage is held while any worker might still see it") {
  Fix f;
  EpochGc gc(f.rt, f.h0, 2, GcMode::Direct);
  std::set<Addr> reclaimed;
  gc.set_reclaimer([&](const GarbageEntry& g) { reclaimed.insert(g.addr); });

  gc.enter(0, f.h0);  // worker 0 pins epoch 1
  gc.retire(1, f.h1, {.addr = 1000, .bytes = 64});
  CHECK(gc.collect(f.h0) == 0);  // tag 1 not < min 1

  gc.advance(f.h0);
  // the pinned view refreshes every kEnterRefresh enters, so spin past it
  for (unsigned i = 0; i <= EpochGc::kEnterRefresh; ++i) {
    gc.exit(0, f.h0);
    gc.enter(0, f.h0);
  }
  CHECK(gc.collect(f.h0) == 1);  // tag 1 < min 2
  CHECK(reclaimed.count(1000) == 1);
  CHECK(gc.reclaimed_count() == 1);
  CHECK(gc.retired_count() == 0);
}

TEST_CASE("replicated mode keeps one extra epoch of slack") {
  Fix f;
  EpochGc gc(f.rt, f.h0, 2, GcMode::Replicated);
  std::set<Addr> reclaimed;
  gc.set_reclaimer([&](const GarbageEntry& g) { reclaimed.insert(g.addr); });

  gc.retire(0, f.h0, {.addr = 1000, .bytes = 64});
  gc.advance(f.h0);
  gc.enter(1, f.h1);  // local epoch 2
  CHECK(gc.collect(f.h0) == 0);  // tag 1, limit is 2-1: not reclaimable
  gc.advance(f.h0);
  for (unsigned i = 0; i <= EpochGc::kEnterRefresh; ++i) {
    gc.exit(1, f.h1);
    gc.enter(1, f.h1);  // eventually re-pins at epoch 3
  }
  CHECK(gc.collect(f.h0) == 1);  // tag 1 < 3-1
}

TEST_CASE("a stale replica with the plain rule reclaims under a live reader") {
  // Schedule: the global moves to 2 but only worker 0's replica hears of it.
  // Worker 0 enters and holds a reference to node A. Worker 1 unlinks A and
  // tags the garbage with its stale view (1). A collector then sees
  // min(local) = 2. The plain rule (tag < min) frees A while worker 0 still
  // reads it; the lagged rule (tag < min-1) keeps it.
  auto run = [](GcMode mode) {
    Fix f;
    EpochGc gc(f.rt, f.h0, 2, mode);
    std::set<Addr> reclaimed;
    gc.set_reclaimer([&](const GarbageEntry& g) { reclaimed.insert(g.addr); });
    const Addr node_a = 2000;

    gc.advance_global(f.h0);        // 1 -> 2
    gc.propagate_replica(f.h0, 0);  // worker 0 sees 2; worker 1 still at 1
    gc.enter(0, f.h0);              // pins 2, then dereferences node A
    gc.retire(1, f.h1, {.addr = node_a, .bytes = 64});  // tagged 1 (stale)
    gc.collect(f.h0);
    // Worker 0, still inside its region, touches node A again.
    return reclaimed.count(node_a) != 0;  // true = use after reclaim
  };
  CHECK(run(GcMode::ReplicatedUnsafe));   // anomaly reproduced
  CHECK_FALSE(run(GcMode::Replicated));   // lagged rule blocks it
}

TEST_CASE("dead workers stop pinning the epoch") {
  Fix f;
  EpochGc gc(f.rt, f.h0, 2, GcMode::Direct);
  gc.bind_worker(1, f.h1);
  std::set<Addr> reclaimed;
  gc.set_reclaimer([&](const GarbageEntry& g) { reclaimed.insert(g.addr); });

  gc.enter(1, f.h1);  // pins epoch 1, then the host dies
  f.rt.crash_host(f.h1);
  gc.advance(f.h0);
  gc.enter(0, f.h0);
  gc.retire(0, f.h0, {.addr = 3000, .bytes = 64});
  gc.exit(0, f.h0);
  gc.advance(f.h0);

  CHECK(gc.collect(f.h0) == 0);  // inside the liveness grace window
  f.rt.clock.advance(1'000'000);
  CHECK(gc.collect(f.h0) == 1);  // dead worker excluded from the minimum
  CHECK(reclaimed.count(3000) == 1);
}

TEST_CASE("the default reclaimer feeds the deferred allocator") {
  Fix f;
  EpochGc gc(f.rt, f.h0, 1, GcMode::Direct);
  const Addr x = f.rt.alloc.alloc(64);
  gc.retire(0, f.h0, {.addr = x, .bytes = 64});
  gc.advance(f.h0);
  CHECK(gc.collect(f.h0) == 1);
  f.rt.bus.pump_all();
  f.rt.alloc.poll();
  CHECK(f.rt.alloc.alloc(64) == x);  // extent came back through the protocol
}

TEST_CASE("epoch cells are sync data") {
  Fix f;
  EpochGc gc(f.rt, f.h0, 1, GcMode::Replicated);
  const auto before = f.mem.sync_violations();
  f.mem.load(f.h0, gc.global_addr());
  CHECK(f.mem.sync_violations() == before + 1);
}

TEST_CASE("a stale pinned view delays reclamation, never admits it early") {
  Fix f;
  EpochGc gc(f.rt, f.h0, 1, GcMode::Direct);
  gc.enter(0, f.h0);  // first enter reads fresh: pins 1
  gc.exit(0, f.h0);
  gc.advance(f.h0);
  gc.enter(0, f.h0);  // amortized enter re-pins the cached value
  CHECK(gc.local_epoch(f.h0, 0) == 1);
  gc.retire(0, f.h0, {.addr = 3000, .bytes = 64});  // retire reads fresh: tag 2
  CHECK(gc.collect(f.h0) == 0);  // 2 < 1 is false: garbage held
  gc.exit(0, f.h0);
}
