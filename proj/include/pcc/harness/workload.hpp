#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pcc/mem.hpp"

namespace pcc::harness {

enum class OpKind { Get, Set, Remove };

struct Op {
  OpKind kind;
  Word key;
  Word value = 0;
};

enum class WorkloadKind { A, B, C, Load, Trace };

struct WorkloadSpec {
  WorkloadKind kind = WorkloadKind::C;
  std::string trace_path;
  std::uint64_t key_count = 100000;
  double zipf_alpha = 0.99;
  std::uint64_t ops = 100000;
  unsigned hosts = 1;
  unsigned threads_per_host = 1;
  std::uint64_t seed = 1;
};

double read_fraction(WorkloadKind k);

/// Zipfian sampler over [1, n] by inverse CDF lookup.
class ZipfSampler {
 public:
  ZipfSampler(std::uint64_t n, double alpha);
  Word sample(std::mt19937_64& rng) const;
  double mass(std::uint64_t rank) const;  // analytic probability of rank

 private:
  std::vector<double> cdf_;
  double norm_ = 0;
  double alpha_ = 0;
};

/// Deterministic op stream for a spec. Workload writes are value updates of
/// keys in [1, key_count]; Load emits one Set per key.
std::vector<Op> gen_workload(const WorkloadSpec& spec);

/// Generic mixture used by the directional suites: reads with probability
/// `read_frac`; writes are updates when `churn` is false, otherwise an even
/// upsert/remove mix that keeps keys appearing and vanishing.
std::vector<Op> gen_mixed(std::uint64_t key_count, std::uint64_t ops,
                          double read_frac, bool churn, double zipf_alpha,
                          std::uint64_t seed);

/// Parses `op,key,value_size` CSV lines with op in {get,set}. The value
/// payload is synthesized from value_size (stored as one word).
std::vector<Op> replay_trace(const std::string& path);

}  // namespace pcc::harness
