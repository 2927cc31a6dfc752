#include "pcc/harness/workload.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <fstream>
#include <sstream>

namespace pcc::harness {

double read_fraction(WorkloadKind k) {
  switch (k) {
    case WorkloadKind::A: return 0.5;
    case WorkloadKind::B: return 0.95;
    case WorkloadKind::C: return 1.0;
    case WorkloadKind::Load: return 0.0;
    case WorkloadKind::Trace: return 0.0;
  }
  return 1.0;
}

ZipfSampler::ZipfSampler(std::uint64_t n, double alpha) : alpha_(alpha) {
  if (n == 0) throw Error("zipf over empty key space");
  if (alpha < 0) throw Error("zipf alpha must be non-negative");
  cdf_.reserve(n);
  double acc = 0;
  for (std::uint64_t r = 1; r <= n; ++r) {
    acc += 1.0 / std::pow(double(r), alpha);
    cdf_.push_back(acc);
  }
  norm_ = acc;
}

Word ZipfSampler::sample(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> u(0.0, norm_);
  const double x = u(rng);
  const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), x);
  return Word(it - cdf_.begin()) + 1;
}

double ZipfSampler::mass(std::uint64_t rank) const {
  return 1.0 / std::pow(double(rank), alpha_) / norm_;
}

std::vector<Op> gen_mixed(std::uint64_t key_count, std::uint64_t ops,
                          double read_frac, bool churn, double zipf_alpha,
                          std::uint64_t seed) {
  ZipfSampler zipf(key_count, zipf_alpha);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  // scatter hot ranks across the key space (scrambled zipfian): without
  // this the top ranks are neighbouring keys and share every index node
  std::uint64_t mult = 0x9e3779b97f4a7c15ULL % key_count;
  while (std::gcd(mult, key_count) != 1) ++mult;
  auto scramble = [&](Word rank) {
    return ((rank - 1) * mult) % key_count + 1;
  };
  std::vector<Op> out;
  out.reserve(ops);
  for (std::uint64_t i = 0; i < ops; ++i) {
    const Word k = scramble(zipf.sample(rng));
    if (coin(rng) < read_frac) {
      out.push_back({OpKind::Get, k});
    } else if (!churn || coin(rng) < 0.5) {
      out.push_back({OpKind::Set, k, rng() >> 1});
    } else {
      out.push_back({OpKind::Remove, k});
    }
  }
  return out;
}

std::vector<Op> gen_workload(const WorkloadSpec& spec) {
  if (spec.kind == WorkloadKind::Trace) return replay_trace(spec.trace_path);
  if (spec.kind == WorkloadKind::Load) {
    std::vector<Op> out;
    out.reserve(spec.key_count);
    std::mt19937_64 rng(spec.seed);
    for (Word k = 1; k <= spec.key_count; ++k) {
      out.push_back({OpKind::Set, k, rng() >> 1});
    }
    return out;
  }
  return gen_mixed(spec.key_count, spec.ops, read_fraction(spec.kind),
                   /*churn=*/false, spec.zipf_alpha, spec.seed);
}

std::vector<Op> replay_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace file: " + path);
  std::vector<Op> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("op,", 0) == 0) continue;  // header row
    std::istringstream ls(line);
    std::string op, key, vsize;
    if (!std::getline(ls, op, ',') || !std::getline(ls, key, ',')) {
      throw Error("trace line " + std::to_string(lineno) + ": malformed");
    }
    std::getline(ls, vsize, ',');
    Word k = 0;
    try {
      // numeric keys pass through; anything else is hashed to a word
      k = std::stoull(key);
    } catch (...) {
      k = std::hash<std::string>{}(key);
      if (k == 0) k = 1;
    }
    if (op == "get") {
      out.push_back({OpKind::Get, k});
    } else if (op == "set") {
      Word vs = 8;
      if (!vsize.empty()) {
        try {
          vs = std::stoull(vsize);
        } catch (...) {
          throw Error("trace line " + std::to_string(lineno) +
                      ": bad value_size");
        }
      }
      // payload synthesized from key and declared size
      out.push_back({OpKind::Set, k, (vs << 32) ^ (k & 0xFFFFFFFF)});
    } else {
      throw Error("trace line " + std::to_string(lineno) + ": unknown op '" +
                  op + "'");
    }
  }
  return out;
}

}  // namespace pcc::harness
