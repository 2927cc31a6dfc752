#include "doctest.h"
#include "pcc/runtime.hpp"
#include "pcc/sync.hpp"

using namespace pcc;

TEST_CASE("controller marks a crashed host dead after the heartbeat window") {
  PccMemory mem(4096);
  Runtime rt(mem);
  const HostId h = rt.attach_host();
  CHECK(rt.controller.is_alive(h));
  rt.crash_host(h);
  CHECK(rt.controller.is_alive(h));  // inside the grace window
  rt.clock.advance(999'999);
  CHECK(rt.controller.is_alive(h));
  rt.clock.advance(1);  // 100 us period * 10 missed beats
  CHECK_FALSE(rt.controller.is_alive(h));
  CHECK(rt.controller.marked_dead(h));
}

TEST_CASE("heartbeats keep a live host alive, but never revive a dead one") {
  PccMemory mem(4096);
  Runtime rt(mem);
  const HostId h = rt.attach_host();
  rt.crash_host(h);
  rt.clock.advance(2'000'000);
  CHECK_FALSE(rt.controller.is_alive(h));
  rt.controller.heartbeat(h);
  CHECK_FALSE(rt.controller.is_alive(h));
}

TEST_CASE("controller releases a dead owner's lock word") {
  PccMemory mem(4096);
  Runtime rt(mem);
  const HostId a = rt.attach_host();
  const HostId b = rt.attach_host();
  const Addr lock = 256;
  mem.p_store(a, lock, lockword::make(5, true, a));

  SUBCASE("owner alive: refuse") {
    CHECK_FALSE(rt.controller.release_if_dead(lock));
  }
  SUBCASE("owner dead: clear and bump the version") {
    rt.crash_host(a);
    rt.clock.advance(1'000'000);
    CHECK(rt.controller.release_if_dead(lock));
    const Word w = mem.p_load(b, lock);
    CHECK_FALSE(lockword::locked(w));
    CHECK(lockword::version(w) == 6);
    CHECK_FALSE(lockword::owner(w).has_value());
  }
  SUBCASE("unlocked word: nothing to do") {
    mem.p_store(a, lock, lockword::make(5));
    CHECK_FALSE(rt.controller.release_if_dead(lock));
  }
}

TEST_CASE("bus broadcast flushes stale lines on every host") {
  PccMemory mem(4096);
  Runtime rt(mem);
  const HostId a = rt.attach_host();
  const HostId b = rt.attach_host();
  mem.store(b, 512, 1);  // b holds a dirty copy... of data being freed
  mem.pre_cache(a, 512);
  mem.p_store(a, 520, 42);
  CHECK(mem.load(a, 520) == 0);  // stale

  auto req = rt.bus.broadcast_flush({512}, {});
  CHECK_FALSE(rt.bus.complete(req));
  rt.bus.await_acks(req);
  CHECK(rt.bus.complete(req));
  CHECK(mem.load(a, 520) == 42);  // line was dropped, reload is fresh
}

TEST_CASE("bus invalidators run with the broadcast node ids") {
  PccMemory mem(4096);
  Runtime rt(mem);
  const HostId a = rt.attach_host();
  std::vector<std::uint64_t> seen;
  rt.bus.add_invalidator(a, [&](const std::vector<std::uint64_t>& ids) {
    seen.insert(seen.end(), ids.begin(), ids.end());
  });
  rt.bus.await_acks(rt.bus.broadcast_flush({}, {7, 9}));
  CHECK(seen == std::vector<std::uint64_t>{7, 9});
}

TEST_CASE("a dead host cannot block a broadcast") {
  PccMemory mem(4096);
  Runtime rt(mem);
  rt.attach_host();
  const HostId b = rt.attach_host();
  auto req = rt.bus.broadcast_flush({512}, {});
  rt.crash_host(b);
  rt.bus.await_acks(req);  // must terminate
  CHECK(rt.bus.complete(req));
}

TEST_CASE("allocator returns zeroed dedicated cachelines") {
  PccMemory mem(8192);
  Runtime rt(mem);
  const Addr a = rt.alloc.alloc(10);
  const Addr b = rt.alloc.alloc(100);
  CHECK(a % kCachelineBytes == 0);
  CHECK(b % kCachelineBytes == 0);
  CHECK(b >= a + kCachelineBytes);       // 10 bytes still take a full line
  CHECK(b + 2 * kCachelineBytes <= 8192);
  CHECK(mem.controller_load(a) == 0);
}

TEST_CASE("freed extents are reused only after every host flushed them") {
  PccMemory mem(8192);
  Runtime rt(mem);
  const HostId a = rt.attach_host();
  const HostId b = rt.attach_host();
  const Addr x = rt.alloc.alloc(64);
  mem.p_store(a, x, 1111);
  mem.pre_cache(b, x);  // b caches the extent before it is freed

  rt.alloc.free_deferred(x, 64);
  CHECK(rt.alloc.pending_extents() == 1);
  const Addr y = rt.alloc.alloc(64);
  CHECK(y != x);  // not acked yet, fresh extent instead

  rt.bus.pump_all();
  rt.alloc.poll();
  CHECK(rt.alloc.pending_extents() == 0);
  const Addr z = rt.alloc.alloc(64);
  CHECK(z == x);                 // now reusable
  CHECK(mem.load(b, x) == 0);    // and no host holds a stale copy
}

TEST_CASE("unsafe_free skips the flush protocol") {
  PccMemory mem(8192);
  Runtime rt(mem);
  const HostId b = rt.attach_host();
  const Addr x = rt.alloc.alloc(64);
  mem.pre_cache(b, x);
  rt.alloc.unsafe_free(x, 64);
  const Addr y = rt.alloc.alloc(64);
  CHECK(y == x);  // immediate reuse: the stale cached copy survives
  mem.controller_store(x, 5);
  CHECK(mem.load(b, x) == 0);
}

TEST_CASE("the bump pointer survives a restart") {
  PccMemory mem(8192);
  Addr a;
  {
    Runtime rt(mem);
    a = rt.alloc.alloc(64);
    rt.alloc.alloc(64);
  }
  Runtime rt2(mem, /*recover=*/true);
  const Addr c = rt2.alloc.alloc(64);
  CHECK(c > a + kCachelineBytes);  // no overlap with pre-restart extents
}

TEST_CASE("crash wiring: a memory-level crash reaches the controller") {
  PccMemory mem(4096);
  Runtime rt(mem);
  const HostId h = rt.attach_host();
  mem.set_crash_after(h, 0);
  CHECK_THROWS_AS(mem.p_load(h, 128), HostCrashed);
  rt.clock.advance(1'000'000);
  CHECK_FALSE(rt.controller.is_alive(h));
}
