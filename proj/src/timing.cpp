#include "pcc/timing.hpp"

#include <algorithm>

namespace pcc {

namespace {
thread_local Timeline* g_timeline = nullptr;

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return x;
}
}  // namespace

TimingModel::TimingModel(TimingConfig cfg)
    : cfg_(cfg), tails_(std::max<std::uint32_t>(1, cfg.queue_count)) {
  for (auto& t : tails_) t.store(0, std::memory_order_relaxed);
}

void TimingModel::set_timeline(Timeline* tl) { g_timeline = tl; }
Timeline* TimingModel::timeline() { return g_timeline; }

std::uint64_t TimingModel::service_ns(OpKind kind) const {
  switch (kind) {
    case OpKind::LoadHit:
      return cfg_.lat_cache_hit_ns;
    case OpKind::LoadMiss:
      return cfg_.lat_pload_ns;
    case OpKind::PLoad:
      return cfg_.lat_pload_ns;
    case OpKind::PStore:
      return cfg_.lat_pstore_ns;
    case OpKind::PCas:
      return cfg_.lat_pcas_ns;
    case OpKind::Flush:
    case OpKind::Clwb:
      return cfg_.lat_flush_ns;
  }
  return 0;
}

bool TimingModel::queued(OpKind kind) const {
  return kind == OpKind::PLoad || kind == OpKind::PStore ||
         kind == OpKind::PCas;
}

std::uint64_t TimingModel::cost(OpKind kind, Addr a, std::uint64_t now) {
  const std::uint64_t svc = service_ns(kind);
  if (!queued(kind)) return now + svc;
  auto& tail = tails_[mix64(a) % tails_.size()];
  std::uint64_t t = tail.load(std::memory_order_relaxed);
  for (;;) {
    const std::uint64_t completion = std::max(now, t) + svc;
    if (tail.compare_exchange_weak(t, completion,
                                   std::memory_order_acq_rel)) {
      return completion;
    }
  }
}

void TimingModel::charge(OpKind kind, Addr a) {
  if (!cfg_.enabled) return;
  Timeline* tl = g_timeline;
  if (!tl) return;
  const std::uint64_t start = tl->now_ns;
  tl->now_ns = cost(kind, a, start);
  tl->ops++;
  if (tl->record) tl->record->push_back(tl->now_ns - start);
}

TimingModel::RunMetrics TimingModel::simulate_run(
    const std::vector<ScheduledOp>& schedule, unsigned workers) {
  RunMetrics m;
  if (workers == 0) return m;
  std::vector<Timeline> tls(workers);
  std::vector<std::uint64_t> lats;
  lats.reserve(schedule.size());
  for (const auto& op : schedule) {
    Timeline& tl = tls[op.worker % workers];
    const std::uint64_t start = tl.now_ns;
    tl.now_ns = cost(op.kind, op.addr, start);
    lats.push_back(tl.now_ns - start);
  }
  m.ops = schedule.size();
  std::uint64_t span = 0;
  for (const auto& tl : tls) span = std::max(span, tl.now_ns);
  m.seconds = static_cast<double>(span) / 1e9;
  m.throughput_ops_per_s = m.seconds > 0 ? m.ops / m.seconds : 0.0;
  if (!lats.empty()) {
    std::sort(lats.begin(), lats.end());
    m.p50_ns = lats[lats.size() / 2];
    m.p99_ns = lats[std::min(lats.size() - 1, lats.size() * 99 / 100)];
  }
  return m;
}

void TimingModel::reset() {
  for (auto& t : tails_) t.store(0, std::memory_order_relaxed);
}

}  // namespace pcc
