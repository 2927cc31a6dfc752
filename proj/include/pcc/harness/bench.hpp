#pragma once

#include <cstdint>
#include <string>

#include "pcc/epoch_gc.hpp"
#include "pcc/harness/workload.hpp"
#include "pcc/timing.hpp"

namespace pcc::harness {

enum class IndexKind { BwTree, CLevelHash };

struct BenchSpec {
  IndexKind index = IndexKind::BwTree;
  bool p3 = true;  // false: straight bypass conversion, no accelerations
  // factor switches (meaningful in p3 mode)
  bool replica_root = true;
  bool spec_read = true;
  GcMode gc_mode = GcMode::Replicated;
  WorkloadSpec workload;
  TimingConfig timing;
  std::size_t mem_bytes = std::size_t(1) << 28;
};

struct Metrics {
  std::uint32_t schema_version = 1;
  std::string index;
  std::string workload;
  std::string mode;
  std::uint64_t ops = 0;
  double throughput_ops_per_s = 0;
  std::uint64_t p50_ns = 0;
  std::uint64_t p99_ns = 0;
  double retry_ratio = 0;
  std::uint64_t splits = 0, merges = 0, consolidations = 0, expansions = 0;
  std::uint64_t p_load = 0, p_store = 0, p_cas = 0, flushes = 0;
  std::uint64_t sync_violations = 0;
};

/// Runs the workload on one real thread with hosts*threads_per_host logical
/// workers issued round-robin, each on its own virtual timeline, so results
/// are deterministic for a given spec. Throughput and latency come from the
/// timing model when it is enabled, otherwise from wall time.
Metrics run_bench(const BenchSpec& spec);

std::string metrics_to_json(const Metrics& m);
Metrics metrics_from_json(const std::string& text);

std::string index_name(IndexKind k);
std::string workload_name(const WorkloadSpec& w);

}  // namespace pcc::harness
