#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace pcc {

using Word = std::uint64_t;
using Addr = std::uint64_t;
using HostId = std::uint16_t;

inline constexpr std::size_t kWordBytes = 8;
inline constexpr std::size_t kCachelineBytes = 64;
inline constexpr std::size_t kWordsPerLine = kCachelineBytes / kWordBytes;
inline constexpr std::size_t kMaxHosts = 64;

inline constexpr Addr line_of(Addr a) { return a / kCachelineBytes; }
inline constexpr Addr line_base(Addr a) { return a & ~Addr(kCachelineBytes - 1); }

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct HostDeadError : Error {
  using Error::Error;
};
struct AlignmentError : Error {
  using Error::Error;
};
/// Thrown when an injected crash point fires mid-operation.
struct HostCrashed : Error {
  HostId host;
  explicit HostCrashed(HostId h) : Error("host crashed (injected)"), host(h) {}
};

struct CasResult {
  bool success;
  Word observed;
};

struct AdversaryConfig {
  double writeback_prob = 0.5;  // chance a Dirty line is written back
  double evict_prob = 0.0;      // chance a Clean line is dropped
};

class TimingModel;

/// Simulated partially-cache-coherent shared memory: one globally visible
/// word array plus per-host caches that are coherent within a host only.
/// Bypass operations (p_load/p_store/p_cas) act directly on the shared
/// region; cached load/store go through the host cache and become globally
/// visible only on write-back (clwb/clflush or an adversary step).
class PccMemory {
 public:
  explicit PccMemory(std::size_t size_bytes);

  std::size_t size_bytes() const { return size_bytes_; }

  void attach_host(HostId host);
  HostId attach_next_host();
  bool host_alive(HostId host) const;

  Word load(HostId host, Addr a);
  void store(HostId host, Addr a, Word v);
  Word p_load(HostId host, Addr a);
  void p_store(HostId host, Addr a, Word v);
  CasResult p_cas(HostId host, Addr a, Word expected, Word desired);
  void clflush_mfence(HostId host, Addr a);
  void clwb_mfence(HostId host, Addr a);

  void adversary_step(std::uint64_t seed, AdversaryConfig cfg = {});
  void crash_host(HostId host);
  std::vector<Word> snapshot_shared() const;

  /// Test hook: deliberately pull a line into a host's cache (models the
  /// pre-caching hazard that the flush-before-reallocate protocol prevents).
  void pre_cache(HostId host, Addr a);

  /// Crash injection: the host crashes after it performs `ops` more memory
  /// operations; the operation in flight throws HostCrashed.
  void set_crash_after(HostId host, std::uint64_t ops);
  void on_crash(std::function<void(HostId)> cb) { crash_cb_ = std::move(cb); }

  // Controller-side accesses: not tied to any host cache (models the
  // memory-side controller manipulating shared words directly).
  Word controller_load(Addr a) const;
  void controller_store(Addr a, Word v);
  CasResult controller_cas(Addr a, Word expected, Word desired);

  // Sync-data discipline audit: addresses registered here must never be
  // touched by cached load/store.
  void register_sync(Addr a, std::size_t bytes);
  void unregister_sync(Addr a, std::size_t bytes);
  std::uint64_t sync_violations() const { return sync_violations_.load(); }

  struct OpCounts {
    std::uint64_t load = 0, store = 0, p_load = 0, p_store = 0, p_cas = 0,
                  clflush = 0, clwb = 0;
  };
  OpCounts op_counts() const;
  std::uint64_t total_ops() const;

  void attach_timing(TimingModel* t) { timing_ = t; }
  TimingModel* timing() const { return timing_; }

  void debug_dump(std::ostream& os) const;

 private:
  struct CacheLine {
    std::array<Word, kWordsPerLine> words{};
    std::uint8_t dirty_mask = 0;  // per-word dirty bits
  };
  struct Host {
    std::atomic<bool> alive{false};
    std::atomic<std::int64_t> crash_countdown{-1};  // <0: disabled
    mutable std::mutex mu;
    std::unordered_map<Addr, CacheLine> lines;  // keyed by line id
  };

  Host& host_ref(HostId h);
  const Host& host_ref(HostId h) const;
  Host& live_host(HostId h);
  void check_word_aligned(Addr a) const;
  void note_op(HostId h, Host& host);
  void audit_cached(Addr a);
  void writeback_line(Addr line_id, CacheLine& cl);
  void crash_locked(HostId h, Host& host);

  std::size_t size_bytes_;
  std::vector<std::atomic<Word>> shared_;
  std::array<std::unique_ptr<Host>, kMaxHosts> hosts_;
  std::mutex attach_mu_;

  std::map<Addr, Addr> sync_ranges_;  // begin -> end
  mutable std::shared_mutex sync_mu_;
  std::atomic<std::uint64_t> sync_violations_{0};

  struct Counters {
    std::atomic<std::uint64_t> load{0}, store{0}, p_load{0}, p_store{0},
        p_cas{0}, clflush{0}, clwb{0};
  } counts_;

  std::function<void(HostId)> crash_cb_;
  TimingModel* timing_ = nullptr;
};

/// Convenience view: a host's handle onto the shared memory.
struct HostHandle {
  PccMemory* mem = nullptr;
  HostId id = 0;

  Word load(Addr a) const { return mem->load(id, a); }
  void store(Addr a, Word v) const { mem->store(id, a, v); }
  Word p_load(Addr a) const { return mem->p_load(id, a); }
  void p_store(Addr a, Word v) const { mem->p_store(id, a, v); }
  CasResult p_cas(Addr a, Word e, Word d) const {
    return mem->p_cas(id, a, e, d);
  }
  void clflush_mfence(Addr a) const { mem->clflush_mfence(id, a); }
  void clwb_mfence(Addr a) const { mem->clwb_mfence(id, a); }
};

}  // namespace pcc
