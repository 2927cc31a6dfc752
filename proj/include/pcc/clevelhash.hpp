#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "pcc/epoch_gc.hpp"
#include "pcc/op_status.hpp"
#include "pcc/replica.hpp"
#include "pcc/runtime.hpp"

namespace pcc {

/// Multi-level hash table on the simulated shared memory. Levels form a
/// chain from the newest (largest) to the oldest; each key hashes to two
/// buckets of eight slots per level. A full newest level triggers an
/// expansion: a level twice as large is pushed in front and the oldest
/// level is drained into it.
///
/// Slots are bypass-only words holding the address of an immutable record
/// extent (key, value), written out of place and flushed before publish.
/// Low bits tag slot states: bit 0 marks an entry frozen mid-move during a
/// drain, bit 1 marks an insert that is published but not yet committed.
///
/// Mode 'accel' reads records and level metadata through the host cache and
/// the newest-level pointer through per-worker replicas; otherwise every
/// read is a bypass op.
class CLevelHash {
 public:
  struct Config {
    unsigned initial_bucket_bits = 12;  // 2^bits buckets in the first level
    bool accel = true;
    unsigned workers = 1;
    std::uint64_t seed = 0x5eed0fcc;
  };

  struct Stats {
    std::atomic<std::uint64_t> inserts{0}, duplicates{0}, removes{0},
        not_found{0}, lookups{0}, hits{0}, moves{0}, rescans{0};
  };

  /// Builds a fresh table; `h` performs the setup writes.
  CLevelHash(Runtime& rt, HostId h, Config cfg);
  /// Reopens a table from its superblock after a restart. Call repair()
  /// before serving operations.
  CLevelHash(Runtime& rt, Addr superblock, unsigned workers);

  CLevelHash(const CLevelHash&) = delete;

  Addr superblock() const { return sb_; }
  void set_gc(EpochGc* gc) { gc_ = gc; }

  OpStatus insert(HostId h, unsigned w, Word key, Word value);
  std::optional<Word> lookup(HostId h, unsigned w, Word key);
  OpStatus remove(HostId h, unsigned w, Word key);

  /// Post-crash repair: discards uncommitted inserts, resolves half-done
  /// moves, finishes an interrupted drain and recounts the table.
  void repair(HostId h);

  std::vector<std::pair<Word, Word>> full_scan(HostId h);
  std::uint64_t size(HostId h) const;
  std::uint64_t expansions(HostId h) const;
  std::size_t level_count(HostId h);

  const Stats& stats() const { return stats_; }

  static constexpr int kSlotsPerBucket = 8;  // one cacheline per bucket

  /// Capacity of the newest level after `e` expansions, in slots.
  static std::uint64_t level_capacity(unsigned initial_bucket_bits,
                                      std::uint64_t e) {
    return ((1ULL << initial_bucket_bits) << e) * kSlotsPerBucket;
  }

 private:
  static constexpr Word kFrozen = 1;
  static constexpr Word kPending = 2;
  static constexpr Word kPtrMask = ~Word(63);

  Word bucket_count(HostId h, Addr level, bool authoritative) const;
  Addr next_older(HostId h, Addr level, bool authoritative) const;
  Addr bucket_addr(Addr level, Word b) const {
    return level + kCachelineBytes + b * kCachelineBytes;
  }
  std::pair<Word, Word> buckets_for(Word key, Word count) const;
  Word record_key(HostId h, Addr rec, bool authoritative) const;
  Word record_value(HostId h, Addr rec, bool authoritative) const;

  std::vector<Addr> level_list(HostId h, Addr first, bool authoritative) const;
  /// Candidate slot word addresses for `key`, oldest level first.
  std::vector<Addr> candidate_slots(HostId h, const std::vector<Addr>& levels,
                                    Word key, bool authoritative) const;

  Addr make_level(HostId h, Word count, Addr older);
  void publish_first(HostId h, Addr expect, Addr level);
  void expand(HostId h, unsigned w, Addr seen_first);
  void drain_last(HostId h, unsigned w);
  void move_one(HostId h, Addr slot, Word frozen_val);
  void claim_into_newest(HostId h, Word key, Addr rec);
  void retire_extent(HostId h, unsigned w, Addr a, std::size_t bytes);

  OpStatus insert_once(HostId h, unsigned w, Word key, Word value,
                       bool& retry);

  Runtime& rt_;
  PccMemory& mem_;
  Addr sb_ = 0;
  Addr ctx_ = 0;
  std::uint64_t seed_ = 0;
  unsigned initial_bits_ = 0;
  bool accel_ = true;
  ReplicatedVar first_rv_;
  EpochGc* gc_ = nullptr;
  Stats stats_;
};

}  // namespace pcc
