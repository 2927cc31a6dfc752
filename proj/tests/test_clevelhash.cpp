#include <map>
#include <random>
#include <set>
#include <thread>

#include "doctest.h"
#include "pcc/clevelhash.hpp"

using namespace pcc;

namespace {
struct Fix {
  PccMemory mem;
  Runtime rt;
  HostId h0;
  explicit Fix(std::size_t bytes = 1 << 22) : mem(bytes), rt(mem) {
    h0 = rt.attach_host();
  }
};
}  // namespace

TEST_CASE("insert, lookup, remove round trip") {
  Fix f;
  CLevelHash t(f.rt, f.h0, {.initial_bucket_bits = 4, .workers = 1});
  CHECK(t.insert(f.h0, 0, 10, 100) == OpStatus::Ok);
  CHECK(t.insert(f.h0, 0, 10, 200) == OpStatus::Duplicate);
  CHECK(t.lookup(f.h0, 0, 10) == Word(100));
  CHECK_FALSE(t.lookup(f.h0, 0, 11).has_value());
  CHECK(t.remove(f.h0, 0, 10) == OpStatus::Ok);
  CHECK(t.remove(f.h0, 0, 10) == OpStatus::NotFound);
  CHECK_FALSE(t.lookup(f.h0, 0, 10).has_value());
  CHECK(t.size(f.h0) == 0);
}

TEST_CASE("matches a reference map over a random op stream") {
  for (bool accel : {false, true}) {
    CAPTURE(accel);
    Fix f(1 << 23);
    CLevelHash t(f.rt, f.h0,
                 {.initial_bucket_bits = 4, .accel = accel, .workers = 1});
    std::map<Word, Word> ref;
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<Word> key_pick(1, 400);
    for (int i = 0; i < 12000; ++i) {
      const Word k = key_pick(rng);
      switch (rng() % 3) {
        case 0: {
          const Word v = rng() % 1000;
          const bool fresh = ref.emplace(k, v).second;
          REQUIRE(t.insert(f.h0, 0, k, v) ==
                  (fresh ? OpStatus::Ok : OpStatus::Duplicate));
          break;
        }
        case 1: {
          auto got = t.lookup(f.h0, 0, k);
          auto it = ref.find(k);
          if (it == ref.end()) {
            REQUIRE_FALSE(got.has_value());
          } else {
            REQUIRE(got == it->second);
          }
          break;
        }
        case 2:
          REQUIRE(t.remove(f.h0, 0, k) ==
                  (ref.erase(k) ? OpStatus::Ok : OpStatus::NotFound));
          break;
      }
    }
    auto scan = t.full_scan(f.h0);
    REQUIRE(scan.size() == ref.size());
    for (auto [k, v] : scan) {
      REQUIRE(ref.count(k) == 1);
      REQUIRE(ref[k] == v);
    }
    CHECK(t.size(f.h0) == ref.size());
    CHECK(f.mem.sync_violations() == 0);
  }
}

namespace {

// Standalone model of the doubling geometry: levels of two-choice buckets
// with first-fit placement and drain-to-newest on expansion. Shares only
// the pure hash functions with the index.
struct GeometryOracle {
  std::uint64_t seed;
  std::vector<std::vector<std::vector<Word>>> levels;  // newest first
  std::uint64_t expansions = 0;

  explicit GeometryOracle(unsigned bits, std::uint64_t s) : seed(s) {
    levels.push_back(
        std::vector<std::vector<Word>>(std::size_t(1) << bits));
  }
  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }
  bool place(Word key) {
    auto& lvl = levels.front();
    for (auto b : {mix(key ^ seed) % lvl.size(),
                   mix(key ^ (seed * 0x100000001b3ULL)) % lvl.size()}) {
      if (lvl[b].size() < 8) {
        lvl[b].push_back(key);
        return true;
      }
    }
    return false;
  }
  void expand() {
    levels.insert(levels.begin(), std::vector<std::vector<Word>>(
                                      levels.front().size() * 2));
    expansions++;
    auto drained = std::move(levels.back());
    levels.pop_back();
    for (auto& bucket : drained) {
      for (Word key : bucket) {
        while (!place(key)) {
          levels.insert(levels.begin(), std::vector<std::vector<Word>>(
                                            levels.front().size() * 2));
          expansions++;
        }
      }
    }
  }
  void insert(Word key) {
    while (!place(key)) expand();
  }
};

}  // namespace

TEST_CASE("expansions match the doubling-geometry model") {
  Fix f(1 << 25);
  const unsigned bits = 8;
  const std::uint64_t seed = 0x5eed0fcc;
  CLevelHash t(f.rt, f.h0,
               {.initial_bucket_bits = bits, .workers = 1, .seed = seed});
  GeometryOracle oracle(bits, seed);
  const Word n = 20000;
  for (Word k = 1; k <= n; ++k) {
    REQUIRE(t.insert(f.h0, 0, k * 7919, k) == OpStatus::Ok);
    oracle.insert(k * 7919);
  }
  const auto e = t.expansions(f.h0);
  CHECK(e == oracle.expansions);
  // Closed-form doubling prediction brackets the same count.
  const auto c0 = CLevelHash::level_capacity(bits, 0);
  std::uint64_t predicted = 0;
  while ((c0 << predicted) / 2 < n) predicted++;  // half-full trigger model
  CHECK(e >= predicted - 1);
  CHECK(e <= predicted + 1);
  CHECK(t.size(f.h0) == n);
  // Everything survived the drains.
  for (Word k = 1; k <= n; k += 97) {
    REQUIRE(t.lookup(f.h0, 0, k * 7919) == k);
  }
  CHECK(t.level_count(f.h0) <= 2);
}

TEST_CASE("reopen after crash: committed ops survive, half-done ops vanish") {
  Fix f(1 << 22);
  CLevelHash t(f.rt, f.h0, {.initial_bucket_bits = 4, .workers = 1});
  for (Word k = 1; k <= 50; ++k) {
    REQUIRE(t.insert(f.h0, 0, k, k * 2) == OpStatus::Ok);
  }
  REQUIRE(t.remove(f.h0, 0, 25) == OpStatus::Ok);
  const Addr sb = t.superblock();

  // Crash mid-insert, at every point of the op, in separate worlds.
  for (int crash_at = 1; crash_at < 40; ++crash_at) {
    Fix g(1 << 22);
    CLevelHash u(g.rt, g.h0, {.initial_bucket_bits = 4, .workers = 1});
    for (Word k = 1; k <= 20; ++k) {
      REQUIRE(u.insert(g.h0, 0, k, k) == OpStatus::Ok);
    }
    g.mem.set_crash_after(g.h0, crash_at);
    bool completed = false;
    try {
      completed = u.insert(g.h0, 0, 999, 111) == OpStatus::Ok;
    } catch (const HostCrashed&) {
    }
    Runtime rt2(g.mem, /*recover=*/true);
    const HostId h2 = g.mem.attach_next_host();
    CLevelHash v(rt2, u.superblock(), 1);
    v.repair(h2);
    for (Word k = 1; k <= 20; ++k) {
      REQUIRE(v.lookup(h2, 0, k) == k);  // all completed inserts durable
    }
    auto got = v.lookup(h2, 0, 999);
    if (completed) {
      REQUIRE(got == Word(111));
    } else {
      // Atomic: either fully applied or fully absent.
      if (got.has_value()) REQUIRE(*got == 111);
    }
    auto scan = v.full_scan(h2);
    REQUIRE(v.size(h2) == scan.size());
  }

  // The original, uncrashed world still reopens cleanly.
  Runtime rt3(f.mem, true);
  CLevelHash w(rt3, sb, 1);
  const HostId h3 = f.mem.attach_next_host();
  w.repair(h3);
  CHECK(w.size(h3) == 49);
  CHECK(w.lookup(h3, 0, 24) == Word(48));
  CHECK_FALSE(w.lookup(h3, 0, 25).has_value());
}

TEST_CASE("concurrent mixed workload keeps the table consistent") {
  Fix f(1 << 24);
  const unsigned kThreads = 4;
  std::vector<HostId> hosts{f.h0};
  for (unsigned i = 1; i < kThreads; ++i) hosts.push_back(f.rt.attach_host());
  CLevelHash t(f.rt, f.h0, {.initial_bucket_bits = 4, .workers = kThreads});
  EpochGc gc(f.rt, f.h0, kThreads, GcMode::Replicated);
  for (unsigned i = 0; i < kThreads; ++i) gc.bind_worker(i, hosts[i]);
  t.set_gc(&gc);

  std::vector<std::thread> threads;
  for (unsigned ti = 0; ti < kThreads; ++ti) {
    threads.emplace_back([&, ti] {
      std::mt19937_64 rng(1000 + ti);
      for (int i = 0; i < 4000; ++i) {
        const Word k = 1 + rng() % 256;
        switch (rng() % 4) {
          case 0:
          case 1:
            t.insert(hosts[ti], ti, k, (Word(ti) << 32) | k);
            break;
          case 2:
            t.remove(hosts[ti], ti, k);
            break;
          case 3: {
            auto v = t.lookup(hosts[ti], ti, k);
            // Any value must be tagged with the key it was written under.
            if (v) REQUIRE((*v & 0xFFFFFFFF) == k);
            break;
          }
        }
        if (i % 256 == 0) gc.advance(hosts[ti]);
      }
    });
  }
  for (auto& th : threads) th.join();
  gc.advance(f.h0);

  // No key appears twice and every record is well formed.
  auto scan = t.full_scan(f.h0);
  std::set<Word> keys;
  for (auto [k, v] : scan) {
    REQUIRE(keys.insert(k).second);
    REQUIRE((v & 0xFFFFFFFF) == k);
  }
  CHECK(t.size(f.h0) == scan.size());
  CHECK(f.mem.sync_violations() == 0);
}
