#include "pcc/harness/suites.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <thread>

#include "pcc/bwtree.hpp"
#include "pcc/clevelhash.hpp"
#include "pcc/epoch_gc.hpp"
#include "pcc/replica.hpp"
#include "pcc/sync.hpp"

namespace pcc::harness {

namespace {

using K = HistoryOp::Kind;

struct LinIx {
  virtual ~LinIx() = default;
  virtual void get(HostId h, unsigned w, HistoryOp& op) = 0;
  virtual void put(HostId h, unsigned w, HistoryOp& op) = 0;
  virtual void rem(HostId h, unsigned w, HistoryOp& op) = 0;
};

struct LinBw : LinIx {
  BwTree t;
  LinBw(Runtime& rt, HostId h, unsigned workers)
      : t(rt, h, {.workers = workers, .map_capacity = 1u << 10}) {}
  void get(HostId h, unsigned w, HistoryOp& op) override {
    const auto v = t.lookup(h, w, op.key);
    op.found = v.has_value();
    op.read_value = v.value_or(0);
  }
  void put(HostId h, unsigned w, HistoryOp& op) override {
    op.kind = K::Upsert;
    t.upsert(h, w, op.key, op.value);
    op.status = OpStatus::Ok;
  }
  void rem(HostId h, unsigned w, HistoryOp& op) override {
    op.status = t.remove(h, w, op.key);
  }
};

struct LinClh : LinIx {
  CLevelHash t;
  LinClh(Runtime& rt, HostId h, unsigned workers)
      : t(rt, h, {.initial_bucket_bits = 4, .workers = workers}) {}
  void get(HostId h, unsigned w, HistoryOp& op) override {
    const auto v = t.lookup(h, w, op.key);
    op.found = v.has_value();
    op.read_value = v.value_or(0);
  }
  void put(HostId h, unsigned w, HistoryOp& op) override {
    op.kind = K::Insert;
    op.status = t.insert(h, w, op.key, op.value);
  }
  void rem(HostId h, unsigned w, HistoryOp& op) override {
    op.status = t.remove(h, w, op.key);
  }
};

bool run_index_trial(LinTarget target, std::uint64_t trial,
                     std::mt19937_64& rng, std::uint64_t& sync_viol) {
  const unsigned threads = 2 + unsigned(rng() % 3);
  const unsigned per_thread = 1 + unsigned(rng() % (12 / threads));

  PccMemory mem(std::size_t(1) << 22);
  Runtime rt(mem);
  std::vector<HostId> hosts;
  for (unsigned i = 0; i < threads; ++i) hosts.push_back(rt.attach_host());

  std::unique_ptr<LinIx> ix;
  if (target == LinTarget::BwTree) {
    auto bw = std::make_unique<LinBw>(rt, hosts[0], threads);
    for (HostId h : hosts) bw->t.attach_worker_host(h);
    ix = std::move(bw);
  } else {
    ix = std::make_unique<LinClh>(rt, hosts[0], threads);
  }
  EpochGc gc(rt, hosts[0], threads, GcMode::Replicated);
  for (unsigned i = 0; i < threads; ++i) gc.bind_worker(i, hosts[i]);
  if (target == LinTarget::BwTree) {
    static_cast<LinBw*>(ix.get())->t.set_gc(&gc);
  } else {
    static_cast<LinClh*>(ix.get())->t.set_gc(&gc);
  }

  // pre-plan every op so the threads only execute and timestamp
  struct Plan {
    K kind;
    Word key, value;
  };
  std::vector<std::vector<Plan>> plans(threads);
  for (unsigned t = 0; t < threads; ++t) {
    for (unsigned i = 0; i < per_thread; ++i) {
      Plan p;
      p.key = 1 + rng() % 3;
      p.value = ((trial & 0xffff) << 16) | (t << 8) | (i + 1);
      const auto r = rng() % 100;
      p.kind = r < 40 ? K::Get : r < 75 ? K::Insert : K::Remove;
      plans[t].push_back(p);
    }
  }

  HistoryRecorder rec(threads * per_thread);
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (const Plan& p : plans[t]) {
        HistoryOp op;
        op.thread = t;
        op.kind = p.kind;
        op.key = p.key;
        op.value = p.value;
        op.invoke_ts = rec.tick();
        switch (p.kind) {
          case K::Get: ix->get(hosts[t], t, op); break;
          case K::Remove: ix->rem(hosts[t], t, op); break;
          default: ix->put(hosts[t], t, op); break;
        }
        op.response_ts = rec.tick();
        rec.append(op);
      }
    });
  }
  for (auto& th : pool) th.join();
  sync_viol += mem.sync_violations();

  const ModelKind model =
      target == LinTarget::BwTree ? ModelKind::UpsertMap : ModelKind::KvMap;
  return check_linearizable(rec.take(), model);
}

bool run_replica_trial(std::uint64_t trial, std::mt19937_64& rng,
                       std::uint64_t& sync_viol) {
  const unsigned threads = 2 + unsigned(rng() % 3);
  const unsigned per_thread = 1 + unsigned(rng() % (12 / threads));

  PccMemory mem(std::size_t(1) << 16);
  Runtime rt(mem);
  std::vector<HostId> hosts;
  for (unsigned i = 0; i < threads; ++i) hosts.push_back(rt.attach_host());
  ReplicatedVar rv = ReplicatedVar::create(rt, hosts[0], threads, 0);

  HistoryRecorder rec(threads * per_thread);
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    const bool writer = (rng() % 2) == 0;
    pool.emplace_back([&, t, writer] {
      for (unsigned i = 0; i < per_thread; ++i) {
        HistoryOp op;
        op.thread = t;
        if (writer && i % 2 == 0) {
          // bit 0 stays clear: the protocol owns it
          op.kind = K::RegPublish;
          op.value = (((trial & 0xff) << 12) | (t << 8) | (i + 1)) << 1;
          op.invoke_ts = rec.tick();
          op.expected = rv.read_global(hosts[t]);
          op.ok = rv.publish(hosts[t], op.expected, op.value);
          op.response_ts = rec.tick();
        } else {
          op.kind = K::RegRead;
          op.invoke_ts = rec.tick();
          op.read_value = rv.read(hosts[t], t);
          op.response_ts = rec.tick();
        }
        rec.append(op);
      }
    });
  }
  for (auto& th : pool) th.join();
  sync_viol += mem.sync_violations();
  return check_linearizable(rec.take(), ModelKind::Register);
}

}  // namespace

LinReport run_lin_suite(LinTarget target, std::uint64_t trials,
                        std::uint64_t seed) {
  LinReport rep;
  std::mt19937_64 rng(seed);
  for (std::uint64_t i = 0; i < trials; ++i) {
    const bool ok = target == LinTarget::Replica
                        ? run_replica_trial(i, rng, rep.sync_violations)
                        : run_index_trial(target, i, rng,
                                          rep.sync_violations);
    ++rep.histories;
    if (!ok) ++rep.violations;
  }
  return rep;
}

std::uint64_t replica_anomaly_trials(std::uint64_t max_trials,
                                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::uint64_t trial = 1; trial <= max_trials; ++trial) {
    PccMemory mem(std::size_t(1) << 16);
    Runtime rt(mem);
    const HostId hp = rt.attach_host();
    const HostId h1 = rt.attach_host();
    const HostId h2 = rt.attach_host();
    ReplicatedVar rv = ReplicatedVar::create(rt, hp, 2, 0);
    rv.set_blocking(false);

    // A plain (unflagged) publish propagates slot by slot; two readers run
    // strictly one after the other somewhere in the middle.
    HistoryRecorder rec(3);
    const Word nv = 2;
    HistoryOp pub;
    pub.kind = K::RegPublish;
    pub.expected = 0;
    pub.value = nv;
    pub.ok = true;
    pub.invoke_ts = rec.tick();
    mem.p_cas(hp, rv.global_addr(), 0, nv);
    const bool prop0 = rng() % 2 == 0;
    const bool prop1 = rng() % 2 == 0;
    if (prop0) mem.p_store(hp, rv.slot_addr(0), nv);
    if (prop1) mem.p_store(hp, rv.slot_addr(1), nv);

    HistoryOp r1;
    r1.kind = K::RegRead;
    r1.thread = 1;
    r1.invoke_ts = rec.tick();
    r1.read_value = rv.read(h1, 0);
    r1.response_ts = rec.tick();

    HistoryOp r2;
    r2.kind = K::RegRead;
    r2.thread = 2;
    r2.invoke_ts = rec.tick();
    r2.read_value = rv.read(h2, 1);
    r2.response_ts = rec.tick();

    if (!prop0) mem.p_store(hp, rv.slot_addr(0), nv);
    if (!prop1) mem.p_store(hp, rv.slot_addr(1), nv);
    pub.response_ts = rec.tick();

    if (!check_linearizable({pub, r1, r2}, ModelKind::Register)) {
      return trial;
    }
  }
  return 0;
}

std::uint64_t gc_uaf_trials(std::uint64_t max_trials, std::uint64_t seed,
                            bool safe_rule) {
  std::mt19937_64 rng(seed);
  for (std::uint64_t trial = 1; trial <= max_trials; ++trial) {
    PccMemory mem(std::size_t(1) << 16);
    Runtime rt(mem);
    const HostId h0 = rt.attach_host();
    const HostId h1 = rt.attach_host();
    EpochGc gc(rt, h0, 2,
               safe_rule ? GcMode::Replicated : GcMode::ReplicatedUnsafe);
    gc.bind_worker(1, h1);
    std::set<Addr> reclaimed;
    gc.set_reclaimer([&](const GarbageEntry& g) { reclaimed.insert(g.addr); });
    const Addr node = 2048;

    // the global moves on but worker 1's replica may miss the update
    gc.advance_global(h0);
    gc.propagate_replica(h0, 0);
    if (rng() % 2 == 0) gc.propagate_replica(h0, 1);

    gc.enter(0, h0);  // reader pins its epoch and dereferences the node
    gc.retire(1, h1, {.addr = node, .bytes = 64});
    gc.collect(h0);
    const bool freed_under_reader = reclaimed.count(node) != 0;
    gc.exit(0, h0);
    if (freed_under_reader) return trial;
  }
  return 0;
}

bool prealloc_stale_read() {
  PccMemory mem(8192);
  Runtime rt(mem);
  const HostId w = rt.attach_host();
  const HostId r = rt.attach_host();
  const Addr x = rt.alloc.alloc(64);
  mem.p_store(w, x, 1);
  mem.pre_cache(r, x);  // the reader caches the old object's line

  rt.alloc.unsafe_free(x, 64);  // no flush broadcast
  const Addr y = rt.alloc.alloc(64);
  if (y != x) return false;  // must reuse the extent for the control to bite
  mem.p_store(w, y, 5);

  const Word cached = mem.load(r, x);
  const Word truth = mem.p_load(r, x);
  return cached != truth;  // stale copy survived the reallocation
}

namespace {

// scripted two-host client for the exhaustive interleaving search: up to
// three acquire attempts, two steps inside the critical section, release
struct LockClient {
  int tries = 0;
  int crit_steps = 0;
  bool holding = false;
  bool done = false;

  bool step(RecoverableLock& lk, HostId me) {  // returns true if it acted
    if (done) return false;
    if (!holding) {
      holding = lk.try_acquire(me);
      if (!holding && ++tries >= 3) done = true;
      return true;
    }
    if (crit_steps < 2) {
      ++crit_steps;
      return true;
    }
    lk.release(me);
    holding = false;
    done = true;
    return true;
  }
};

bool replay_schedule(const std::vector<int>& schedule, bool& complete) {
  PccMemory mem(4096);
  Runtime rt(mem);
  const HostId a = rt.attach_host();
  const HostId b = rt.attach_host();
  RecoverableLock lk(mem, 256);
  LockClient ca, cb;
  for (int who : schedule) {
    if (who == 0) {
      ca.step(lk, a);
    } else {
      cb.step(lk, b);
    }
    if (ca.holding && cb.holding) return false;  // both inside
  }
  complete = ca.done && cb.done;
  return true;
}

bool exhaustive_schedules(std::vector<int>& schedule) {
  bool complete = false;
  if (!replay_schedule(schedule, complete)) return false;
  if (complete) return true;
  if (schedule.size() > 12) return true;  // clients are done well before this
  for (int who : {0, 1}) {
    schedule.push_back(who);
    const bool ok = exhaustive_schedules(schedule);
    schedule.pop_back();
    if (!ok) return false;
  }
  return true;
}

}  // namespace

LockReport run_lock_suite(std::uint64_t trials, std::uint64_t seed) {
  LockReport rep;
  rep.trials = trials;
  std::mt19937_64 rng(seed);
  for (std::uint64_t i = 0; i < trials; ++i) {
    PccMemory mem(4096);
    Runtime rt(mem);
    const HostId owner = rt.attach_host();
    const HostId waiter = rt.attach_host();
    RecoverableLock lk(mem, 256);
    if (!lk.try_acquire(owner)) continue;
    rt.clock.advance(rng() % 900'000);  // owner works, then dies mid-hold
    rt.crash_host(owner);

    const auto t0 = rt.clock.now();
    const bool got = lk.acquire(waiter, rt);
    const auto waited = rt.clock.now() - t0;
    rep.max_wait_ns = std::max(rep.max_wait_ns, waited);
    if (got && waited <= 2 * RecoverableLock::kDefaultTimeoutNs) {
      ++rep.acquired_in_time;
    }
  }
  std::vector<int> schedule;
  rep.mutual_exclusion = exhaustive_schedules(schedule);
  return rep;
}

}  // namespace pcc::harness
