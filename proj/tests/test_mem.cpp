#include <map>
#include <random>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "pcc/mem.hpp"

using namespace pcc;

namespace {

// Independent model of the memory semantics: shared word map plus per-host
// caches at word granularity with dirty flags. Used as an oracle against
// randomized single-threaded op sequences.
struct ModelMem {
  std::map<Addr, Word> shared;
  struct HostState {
    // line id -> (words, dirty flags)
    std::map<Addr, std::pair<std::array<Word, 8>, std::array<bool, 8>>> lines;
  };
  std::map<HostId, HostState> hosts;

  void fill(HostState& hs, Addr lid) {
    if (hs.lines.count(lid)) return;
    auto& [words, dirty] = hs.lines[lid];
    for (std::size_t i = 0; i < 8; ++i) {
      words[i] = shared.count(lid * 64 + i * 8) ? shared[lid * 64 + i * 8] : 0;
      dirty[i] = false;
    }
  }
  Word load(HostId h, Addr a) {
    auto& hs = hosts[h];
    const Addr lid = a / 64;
    fill(hs, lid);
    return hs.lines[lid].first[(a / 8) % 8];
  }
  void store(HostId h, Addr a, Word v) {
    auto& hs = hosts[h];
    const Addr lid = a / 64;
    fill(hs, lid);
    hs.lines[lid].first[(a / 8) % 8] = v;
    hs.lines[lid].second[(a / 8) % 8] = true;
  }
  Word p_load(HostId, Addr a) { return shared[a]; }
  void p_store(HostId, Addr a, Word v) { shared[a] = v; }
  bool p_cas(HostId, Addr a, Word e, Word d) {
    Word cur = shared[a];
    if (cur != e) return false;
    shared[a] = d;
    return true;
  }
  void writeback(HostState& hs, Addr lid) {
    auto it = hs.lines.find(lid);
    if (it == hs.lines.end()) return;
    for (std::size_t i = 0; i < 8; ++i) {
      if (it->second.second[i]) shared[lid * 64 + i * 8] = it->second.first[i];
      it->second.second[i] = false;
    }
  }
  void clflush(HostId h, Addr a) {
    auto& hs = hosts[h];
    writeback(hs, a / 64);
    hs.lines.erase(a / 64);
  }
  void clwb(HostId h, Addr a) { writeback(hosts[h], a / 64); }
};

}  // namespace

TEST_CASE("cached stores are invisible to other hosts until written back") {
  PccMemory mem(4096);
  mem.attach_host(0);
  mem.attach_host(1);

  mem.store(0, 128, 42);
  CHECK(mem.load(0, 128) == 42);     // own cache sees it
  CHECK(mem.p_load(1, 128) == 0);    // shared region untouched
  CHECK(mem.load(1, 128) == 0);      // other host's cache fills from shared

  mem.clwb_mfence(0, 128);
  CHECK(mem.p_load(1, 128) == 42);
  // Host 1 cached the line before the write-back: still stale.
  CHECK(mem.load(1, 128) == 0);
  mem.clflush_mfence(1, 128);
  CHECK(mem.load(1, 128) == 42);
}

TEST_CASE("clwb keeps the line cached, clflush drops it") {
  PccMemory mem(4096);
  mem.attach_host(0);
  mem.attach_host(1);

  mem.store(0, 192, 7);
  mem.clwb_mfence(0, 192);
  // Overwrite shared behind host 0's back; its retained line still hits.
  mem.p_store(1, 192, 99);
  CHECK(mem.load(0, 192) == 7);

  mem.clflush_mfence(0, 192);
  CHECK(mem.load(0, 192) == 99);
}

TEST_CASE("bypass ops act on shared memory directly") {
  PccMemory mem(4096);
  mem.attach_host(0);
  mem.attach_host(1);

  mem.p_store(0, 256, 11);
  CHECK(mem.p_load(1, 256) == 11);

  auto r1 = mem.p_cas(0, 256, 11, 12);
  CHECK(r1.success);
  auto r2 = mem.p_cas(1, 256, 11, 13);
  CHECK_FALSE(r2.success);
  CHECK(r2.observed == 12);
}

TEST_CASE("bypass and cached views of one address can diverge") {
  PccMemory mem(4096);
  mem.attach_host(0);
  mem.store(0, 320, 5);        // dirty in cache
  CHECK(mem.p_load(0, 320) == 0);  // bypass skips own cache
  mem.p_store(0, 320, 9);
  CHECK(mem.load(0, 320) == 5);    // cache still holds the dirty word
  mem.clflush_mfence(0, 320);      // dirty word wins the write-back
  CHECK(mem.p_load(0, 320) == 5);
}

TEST_CASE("write-back is word granular") {
  PccMemory mem(4096);
  mem.attach_host(0);
  mem.attach_host(1);
  // Host 0 dirties word 0 of the line; host 1 updates word 1 via bypass.
  mem.store(0, 512, 1);
  mem.p_store(1, 520, 2);
  mem.clwb_mfence(0, 512);
  CHECK(mem.p_load(1, 512) == 1);
  CHECK(mem.p_load(1, 520) == 2);  // not clobbered by host 0's stale line
}

TEST_CASE("crash wipes the cache and the host stays dead") {
  PccMemory mem(4096);
  mem.attach_host(0);
  mem.store(0, 128, 77);  // never written back
  mem.crash_host(0);
  CHECK_FALSE(mem.host_alive(0));
  CHECK(mem.controller_load(128) == 0);  // dirty data lost
  CHECK_THROWS_AS(mem.load(0, 128), HostDeadError);
  CHECK_THROWS_AS(mem.p_store(0, 128, 1), HostDeadError);
}

TEST_CASE("injected crash fires after a fixed op count") {
  PccMemory mem(4096);
  mem.attach_host(0);
  mem.set_crash_after(0, 3);
  mem.p_store(0, 128, 1);
  mem.p_store(0, 136, 2);
  mem.p_store(0, 144, 3);
  CHECK_THROWS_AS(mem.p_store(0, 152, 4), HostCrashed);
  CHECK_FALSE(mem.host_alive(0));
  CHECK(mem.controller_load(144) == 3);   // completed op durable
  CHECK(mem.controller_load(152) == 0);   // interrupted op did not land
}

TEST_CASE("crash callback reports the host") {
  PccMemory mem(4096);
  mem.attach_host(0);
  HostId seen = 99;
  mem.on_crash([&](HostId h) { seen = h; });
  mem.crash_host(0);
  CHECK(seen == 0);
}

TEST_CASE("sync-data audit flags cached access to registered ranges") {
  PccMemory mem(4096);
  mem.attach_host(0);
  mem.register_sync(256, 64);
  CHECK(mem.sync_violations() == 0);
  mem.p_load(0, 256);
  mem.p_cas(0, 280, 0, 1);
  CHECK(mem.sync_violations() == 0);
  mem.load(0, 256);
  CHECK(mem.sync_violations() == 1);
  mem.store(0, 312, 5);
  CHECK(mem.sync_violations() == 2);
  mem.load(0, 320);  // one past the range
  CHECK(mem.sync_violations() == 2);
  mem.unregister_sync(256, 64);
  mem.load(0, 288);
  CHECK(mem.sync_violations() == 2);
}

TEST_CASE("alignment and range checks") {
  PccMemory mem(4096);
  mem.attach_host(0);
  CHECK_THROWS_AS(mem.p_load(0, 3), AlignmentError);
  CHECK_THROWS_AS(mem.load(0, 4097 * 8), AlignmentError);
  CHECK_THROWS_AS(PccMemory(100), AlignmentError);
}

TEST_CASE("adversary write-backs are deterministic per seed") {
  auto run = [](std::uint64_t seed) {
    PccMemory mem(4096);
    mem.attach_host(0);
    for (Addr a = 128; a < 1024; a += 8) mem.store(0, a, a);
    mem.adversary_step(seed, {.writeback_prob = 0.5});
    return mem.snapshot_shared();
  };
  CHECK(run(7) == run(7));
  CHECK(run(7) != run(8));  // some line's fate differs
}

TEST_CASE("pre_cache plants a stale line") {
  PccMemory mem(4096);
  mem.attach_host(0);
  mem.attach_host(1);
  mem.pre_cache(0, 640);
  mem.p_store(1, 640, 123);
  CHECK(mem.load(0, 640) == 0);  // reads the pre-cached stale copy
}

TEST_CASE("randomized op sequences agree with the reference model") {
  PccMemory mem(8192);
  ModelMem model;
  for (HostId h = 0; h < 3; ++h) mem.attach_host(h);

  std::mt19937_64 rng(12345);
  std::uniform_int_distribution<int> op_pick(0, 6);
  std::uniform_int_distribution<Addr> addr_pick(0, 8192 / 8 - 1);
  std::uniform_int_distribution<Word> val_pick(0, 9);
  std::uniform_int_distribution<int> host_pick(0, 2);

  for (int i = 0; i < 20000; ++i) {
    const HostId h = static_cast<HostId>(host_pick(rng));
    const Addr a = addr_pick(rng) * 8;
    const Word v = val_pick(rng);
    switch (op_pick(rng)) {
      case 0:
        REQUIRE(mem.load(h, a) == model.load(h, a));
        break;
      case 1:
        mem.store(h, a, v);
        model.store(h, a, v);
        break;
      case 2:
        REQUIRE(mem.p_load(h, a) == model.p_load(h, a));
        break;
      case 3:
        mem.p_store(h, a, v);
        model.p_store(h, a, v);
        break;
      case 4: {
        const Word e = val_pick(rng);
        REQUIRE(mem.p_cas(h, a, e, v).success == model.p_cas(h, a, e, v));
        break;
      }
      case 5:
        mem.clflush_mfence(h, a);
        model.clflush(h, a);
        break;
      case 6:
        mem.clwb_mfence(h, a);
        model.clwb(h, a);
        break;
    }
  }
  // Final shared state must agree word for word.
  auto snap = mem.snapshot_shared();
  for (std::size_t w = 0; w < snap.size(); ++w) {
    const Word expect = model.shared.count(w * 8) ? model.shared[w * 8] : 0;
    REQUIRE(snap[w] == expect);
  }
}

TEST_CASE("op counters track issued operations") {
  PccMemory mem(4096);
  mem.attach_host(0);
  mem.load(0, 0);
  mem.store(0, 0, 1);
  mem.p_load(0, 8);
  mem.p_store(0, 8, 1);
  mem.p_cas(0, 8, 1, 2);
  mem.clwb_mfence(0, 0);
  mem.clflush_mfence(0, 0);
  auto c = mem.op_counts();
  CHECK(c.load == 1);
  CHECK(c.store == 1);
  CHECK(c.p_load == 1);
  CHECK(c.p_store == 1);
  CHECK(c.p_cas == 1);
  CHECK(c.clwb == 1);
  CHECK(c.clflush == 1);
  CHECK(mem.total_ops() == 7);
}

TEST_CASE("debug dump lists hosts and cached lines") {
  PccMemory mem(4096);
  mem.attach_host(0);
  mem.store(0, 128, 1);
  std::ostringstream os;
  mem.debug_dump(os);
  CHECK(os.str().find("host 0 alive") != std::string::npos);
  CHECK(os.str().find("dirty") != std::string::npos);
}
