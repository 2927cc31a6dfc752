#include "pcc/harness/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <memory>

#include "json.hpp"
#include "pcc/bwtree.hpp"
#include "pcc/clevelhash.hpp"

namespace pcc::harness {

std::string index_name(IndexKind k) {
  return k == IndexKind::BwTree ? "bwtree" : "clevelhash";
}

std::string workload_name(const WorkloadSpec& w) {
  switch (w.kind) {
    case WorkloadKind::A: return "A";
    case WorkloadKind::B: return "B";
    case WorkloadKind::C: return "C";
    case WorkloadKind::Load: return "load";
    case WorkloadKind::Trace: return "trace:" + w.trace_path;
  }
  return "?";
}

namespace {

struct Driver {
  virtual ~Driver() = default;
  virtual void run(HostId h, unsigned w, const Op& op) = 0;
  virtual void fill(Metrics& m) const = 0;
};

struct BwDriver : Driver {
  BwTree t;
  BwDriver(Runtime& rt, HostId h, BwTree::Config cfg) : t(rt, h, cfg) {}
  void run(HostId h, unsigned w, const Op& op) override {
    switch (op.kind) {
      case OpKind::Get: t.lookup(h, w, op.key); break;
      case OpKind::Set: t.upsert(h, w, op.key, op.value); break;
      case OpKind::Remove: t.remove(h, w, op.key); break;
    }
  }
  void fill(Metrics& m) const override {
    m.retry_ratio = t.retry_ratio();
    m.splits = t.stats().splits.load();
    m.merges = t.stats().merges.load();
    m.consolidations = t.stats().consolidations.load();
  }
};

struct ClhDriver : Driver {
  CLevelHash t;
  HostId setup;
  ClhDriver(Runtime& rt, HostId h, CLevelHash::Config cfg)
      : t(rt, h, cfg), setup(h) {}
  void run(HostId h, unsigned w, const Op& op) override {
    switch (op.kind) {
      case OpKind::Get: t.lookup(h, w, op.key); break;
      case OpKind::Set: t.insert(h, w, op.key, op.value); break;
      case OpKind::Remove: t.remove(h, w, op.key); break;
    }
  }
  void fill(Metrics& m) const override {
    const auto lk = t.stats().lookups.load();
    m.retry_ratio = lk ? double(t.stats().rescans.load()) / double(lk) : 0.0;
    if (m.retry_ratio > 1.0) m.retry_ratio = 1.0;
    m.expansions = t.expansions(setup);
  }
};

}  // namespace

Metrics run_bench(const BenchSpec& spec) {
  PccMemory mem(spec.mem_bytes);
  Runtime rt(mem);
  const unsigned hosts = std::max(1u, spec.workload.hosts);
  const unsigned workers = hosts * std::max(1u, spec.workload.threads_per_host);
  std::vector<HostId> host_of;
  std::vector<HostId> host_ids;
  for (unsigned i = 0; i < hosts; ++i) host_ids.push_back(rt.attach_host());
  for (unsigned w = 0; w < workers; ++w) {
    host_of.push_back(host_ids[w % hosts]);
  }
  const HostId h0 = host_ids[0];

  std::unique_ptr<Driver> drv;
  if (spec.index == IndexKind::BwTree) {
    BwTree::Config cfg;
    cfg.replica_root = spec.p3 && spec.replica_root;
    cfg.spec_read = spec.p3 && spec.spec_read;
    cfg.workers = workers;
    cfg.map_capacity = 1u << 20;
    auto d = std::make_unique<BwDriver>(rt, h0, cfg);
    if (cfg.spec_read) {
      for (auto h : host_ids) d->t.attach_worker_host(h);
    }
    drv = std::move(d);
  } else {
    CLevelHash::Config cfg;
    cfg.accel = spec.p3;
    cfg.workers = workers;
    cfg.initial_bucket_bits = 12;
    drv = std::make_unique<ClhDriver>(rt, h0, cfg);
  }

  EpochGc gc(rt, h0, workers, spec.p3 ? spec.gc_mode : GcMode::Direct);
  for (unsigned w = 0; w < workers; ++w) gc.bind_worker(w, host_of[w]);
  if (spec.index == IndexKind::BwTree) {
    static_cast<BwDriver*>(drv.get())->t.set_gc(&gc);
  } else {
    static_cast<ClhDriver*>(drv.get())->t.set_gc(&gc);
  }

  // load phase: populate the key space before measuring (Load measures the
  // population itself)
  auto stream = gen_workload(spec.workload);
  if (spec.workload.kind != WorkloadKind::Load &&
      spec.workload.kind != WorkloadKind::Trace) {
    std::mt19937_64 rng(spec.workload.seed ^ 0x10ad10adULL);
    for (Word k = 1; k <= spec.workload.key_count; ++k) {
      drv->run(h0, 0, {OpKind::Set, k, rng() >> 1});
    }
    // warm every host's read path before measuring; a cold host-local
    // table makes the first descent per node fall back to the slow path
    for (unsigned i = 0; i < hosts; ++i) {
      for (Word k = 1; k <= spec.workload.key_count; k += 1) {
        drv->run(host_ids[i], i, {OpKind::Get, k});
      }
    }
  }

  TimingModel tm(spec.timing);
  if (spec.timing.enabled) mem.attach_timing(&tm);
  std::vector<Timeline> tls(workers);
  std::vector<std::uint64_t> lat;
  lat.reserve(stream.size());
  const auto counts_before = mem.op_counts();
  const auto wall0 = std::chrono::steady_clock::now();

  for (std::size_t i = 0; i < stream.size(); ++i) {
    const unsigned w = unsigned(i % workers);
    TimingModel::set_timeline(&tls[w]);
    const std::uint64_t t0 = tls[w].now_ns;
    drv->run(host_of[w], w, stream[i]);
    lat.push_back(tls[w].now_ns - t0);
    if (i % 4096 == 4095) {
      // background daemon work: epoch advance and reclamation, off-timeline
      TimingModel::set_timeline(nullptr);
      gc.advance(h0);
      gc.collect(h0);
      rt.alloc.poll();
    }
  }
  TimingModel::set_timeline(nullptr);
  gc.advance(h0);
  gc.collect(h0);

  const auto wall1 = std::chrono::steady_clock::now();
  const auto counts_after = mem.op_counts();

  Metrics m;
  m.index = index_name(spec.index);
  m.workload = workload_name(spec.workload);
  m.mode = spec.p3 ? "p3" : "sp";
  m.ops = stream.size();
  if (spec.timing.enabled) {
    std::uint64_t span = 0;
    for (const auto& tl : tls) span = std::max(span, tl.now_ns);
    m.throughput_ops_per_s = span ? double(m.ops) * 1e9 / double(span) : 0;
    std::sort(lat.begin(), lat.end());
    if (!lat.empty()) {
      m.p50_ns = lat[lat.size() / 2];
      m.p99_ns = lat[std::min(lat.size() - 1, lat.size() * 99 / 100)];
    }
  } else {
    const double secs =
        std::chrono::duration<double>(wall1 - wall0).count();
    m.throughput_ops_per_s = secs > 0 ? double(m.ops) / secs : 0;
  }
  drv->fill(m);
  m.p_load = counts_after.p_load - counts_before.p_load;
  m.p_store = counts_after.p_store - counts_before.p_store;
  m.p_cas = counts_after.p_cas - counts_before.p_cas;
  m.flushes = (counts_after.clflush + counts_after.clwb) -
              (counts_before.clflush + counts_before.clwb);
  m.sync_violations = mem.sync_violations();
  if (const char* env = std::getenv("PCC_DEBUG_DUMP"); env && env[0] == '1') {
    mem.debug_dump(std::cerr);
  }
  return m;
}

std::string metrics_to_json(const Metrics& m) {
  nlohmann::json j;
  j["schema_version"] = m.schema_version;
  j["index"] = m.index;
  j["workload"] = m.workload;
  j["mode"] = m.mode;
  j["ops"] = m.ops;
  j["throughput_ops_per_s"] = m.throughput_ops_per_s;
  j["latency"] = {{"p50_ns", m.p50_ns}, {"p99_ns", m.p99_ns}};
  j["retry_ratio"] = m.retry_ratio;
  j["smo"] = {{"splits", m.splits},
              {"merges", m.merges},
              {"consolidations", m.consolidations},
              {"expansions", m.expansions}};
  j["bypass_ops"] = {{"p_load", m.p_load},
                     {"p_store", m.p_store},
                     {"p_cas", m.p_cas},
                     {"flushes", m.flushes}};
  j["sync_violations"] = m.sync_violations;
  return j.dump(2);
}

Metrics metrics_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  Metrics m;
  m.schema_version = j.at("schema_version");
  if (m.schema_version != 1) throw Error("unknown metrics schema version");
  m.index = j.at("index");
  m.workload = j.at("workload");
  m.mode = j.at("mode");
  m.ops = j.at("ops");
  m.throughput_ops_per_s = j.at("throughput_ops_per_s");
  m.p50_ns = j.at("latency").at("p50_ns");
  m.p99_ns = j.at("latency").at("p99_ns");
  m.retry_ratio = j.at("retry_ratio");
  m.splits = j.at("smo").at("splits");
  m.merges = j.at("smo").at("merges");
  m.consolidations = j.at("smo").at("consolidations");
  m.expansions = j.at("smo").at("expansions");
  m.p_load = j.at("bypass_ops").at("p_load");
  m.p_store = j.at("bypass_ops").at("p_store");
  m.p_cas = j.at("bypass_ops").at("p_cas");
  m.flushes = j.at("bypass_ops").at("flushes");
  m.sync_violations = j.at("sync_violations");
  return m;
}

}  // namespace pcc::harness
