#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "pcc/harness/bench.hpp"
#include "pcc/harness/config.hpp"
#include "pcc/harness/crash.hpp"
#include "pcc/harness/suites.hpp"

using namespace pcc;
using namespace pcc::harness;

namespace {

WorkloadKind parse_workload(const std::string& s, std::string& trace_path) {
  if (s == "A") return WorkloadKind::A;
  if (s == "B") return WorkloadKind::B;
  if (s == "C") return WorkloadKind::C;
  if (s == "load") return WorkloadKind::Load;
  if (s.rfind("trace:", 0) == 0) {
    trace_path = s.substr(6);
    if (trace_path.empty()) throw CLI::ValidationError("empty trace path");
    return WorkloadKind::Trace;
  }
  throw CLI::ValidationError("workload must be A|B|C|load|trace:<path>");
}

int cmd_run(const BenchSpec& spec, const std::string& out_path) {
  const Metrics m = run_bench(spec);
  const std::string json = metrics_to_json(m);
  if (out_path.empty() || out_path == "-") {
    std::cout << json << "\n";
  } else {
    std::ofstream f(out_path);
    if (!f) {
      std::cerr << "cannot write " << out_path << "\n";
      return 1;
    }
    f << json << "\n";
  }
  std::cerr << m.index << " " << m.workload << " " << m.mode << ": "
            << m.ops << " ops, " << std::uint64_t(m.throughput_ops_per_s)
            << " ops/s, p50 " << m.p50_ns << " ns, p99 " << m.p99_ns
            << " ns\n";
  return m.sync_violations == 0 ? 0 : 1;
}

int cmd_check(const std::string& suite, std::uint64_t trials,
              std::uint64_t seed) {
  bool ok = true;
  auto line = [&](const std::string& name, bool pass,
                  const std::string& detail) {
    std::cout << (pass ? "PASS" : "FAIL") << " " << name << ": " << detail
              << "\n";
    ok = ok && pass;
  };

  if (suite == "lin") {
    for (auto [target, name] :
         {std::pair{LinTarget::CLevelHash, "clevelhash"},
          std::pair{LinTarget::BwTree, "bwtree"}}) {
      const auto r = run_lin_suite(target, trials, seed);
      line(std::string("lin/") + name,
           r.violations == 0 && r.sync_violations == 0,
           std::to_string(r.histories) + " histories, " +
               std::to_string(r.violations) + " violations");
    }
  } else if (suite == "replica") {
    const auto r = run_lin_suite(LinTarget::Replica, trials, seed);
    line("replica/histories", r.violations == 0 && r.sync_violations == 0,
         std::to_string(r.histories) + " histories, " +
             std::to_string(r.violations) + " violations");
    const auto fired = replica_anomaly_trials(trials, seed);
    line("replica/anomaly-control", fired != 0,
         fired ? "non-blocking publish violated at trial " +
                     std::to_string(fired)
               : "anomaly never fired");
  } else if (suite == "gc") {
    const auto unsafe = gc_uaf_trials(trials, seed, /*safe_rule=*/false);
    line("gc/unsafe-rule-control", unsafe != 0,
         unsafe ? "use-after-reclaim at trial " + std::to_string(unsafe)
                : "never fired");
    const auto safe = gc_uaf_trials(trials, seed, /*safe_rule=*/true);
    line("gc/lagged-rule", safe == 0,
         safe ? "reclaimed under a reader at trial " + std::to_string(safe)
              : "no use-after-reclaim");
    line("gc/realloc-control", prealloc_stale_read(),
         "stale cached read across an unprotected reallocation");
    const auto lock = run_lock_suite(trials, seed);
    line("gc/recoverable-lock",
         lock.acquired_in_time == lock.trials && lock.mutual_exclusion,
         std::to_string(lock.acquired_in_time) + "/" +
             std::to_string(lock.trials) + " recovered in time, max wait " +
             std::to_string(lock.max_wait_ns) + " ns");
  } else if (suite == "crash") {
    for (auto kind : {IndexKind::CLevelHash, IndexKind::BwTree}) {
      const auto r =
          run_crash_enumeration(kind, unsigned(trials), seed);
      line(std::string("crash/") + index_name(kind), r.failures == 0,
           std::to_string(r.points_tested) + " crash points, " +
               std::to_string(r.failures) + " failures" +
               (r.first_failure.empty() ? "" : " (" + r.first_failure + ")"));
    }
  } else {
    std::cerr << "suite must be lin|crash|gc|replica\n";
    return 2;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"workload driver and checker for the simulated memory"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "run a workload and emit metrics");
  std::string index = "bwtree", workload = "C", timing = "on", mode = "p3";
  std::string out_path, config_path;
  unsigned hosts = 1, threads = 1;
  std::uint64_t keys = 100000, seed = 1, ops = 0;
  double zipf = 0.99;
  run->add_option("--index", index)
      ->check(CLI::IsMember({"bwtree", "clevelhash"}));
  run->add_option("--workload", workload, "A|B|C|load|trace:<path>");
  run->add_option("--hosts", hosts)->check(CLI::PositiveNumber);
  run->add_option("--threads", threads, "threads per host")
      ->check(CLI::PositiveNumber);
  run->add_option("--keys", keys);
  run->add_option("--zipf", zipf);
  run->add_option("--seed", seed);
  run->add_option("--ops", ops, "op count (default 10x keys)");
  run->add_option("--timing", timing)->check(CLI::IsMember({"on", "off"}));
  run->add_option("--mode", mode)->check(CLI::IsMember({"sp", "p3"}));
  run->add_option("--out", out_path, "metrics JSON path ('-' for stdout)");
  run->add_option("--config", config_path, "key=value timing overrides");

  // check
  auto* check = app.add_subcommand("check", "run a verification suite");
  std::string suite;
  std::uint64_t trials = 1000, check_seed = 1;
  check->add_option("--suite", suite, "lin|crash|gc|replica")->required();
  check->add_option("--trials", trials)->check(CLI::PositiveNumber);
  check->add_option("--seed", check_seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      BenchSpec spec;
      spec.index =
          index == "bwtree" ? IndexKind::BwTree : IndexKind::CLevelHash;
      spec.p3 = mode == "p3";
      spec.workload.kind = parse_workload(workload, spec.workload.trace_path);
      spec.workload.hosts = hosts;
      spec.workload.threads_per_host = threads;
      spec.workload.key_count = keys;
      spec.workload.zipf_alpha = zipf;
      spec.workload.seed = seed;
      spec.workload.ops = ops ? ops : keys * 10;
      spec.timing.enabled = timing == "on";
      if (!config_path.empty()) {
        spec.timing = timing_from_config(parse_config(config_path));
        if (run->count("--timing")) spec.timing.enabled = timing == "on";
      }
      return cmd_run(spec, out_path);
    }
    return cmd_check(suite, trials, check_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
