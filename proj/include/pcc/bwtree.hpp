#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "pcc/epoch_gc.hpp"
#include "pcc/op_status.hpp"
#include "pcc/replica.hpp"
#include "pcc/runtime.hpp"

namespace pcc {

/// Lock-free B-link tree with delta chains on the simulated shared memory.
///
/// Nodes are immutable extents referenced through a mapping table of bypass
/// words (node id -> chain head address). Updates prepend delta records and
/// publish them with one CAS on the mapping entry; consolidation rewrites a
/// chain into a fresh base node. Every base node carries a high key and a
/// right-sibling link, so readers recover from lagging split/merge
/// completions by walking sideways.
///
/// Reads have two paths. The slow path loads every mapping entry with
/// bypass ops, refreshes the host's local copy of inner entries and helps
/// finish structure changes. The fast path routes through the host-local
/// copy of inner mapping entries and only the leaf entry is loaded with a
/// bypass op; a found value is always authoritative, while any miss falls
/// back to the slow path. The root entry can additionally be read through
/// per-worker replicas.
class BwTree {
 public:
  struct Config {
    bool replica_root = true;  // root entry read via per-worker replicas
    bool spec_read = true;     // inner entries read via host-local copies
    unsigned workers = 1;
    std::uint32_t map_capacity = 1u << 16;
  };

  struct Stats {
    std::atomic<std::uint64_t> lookups{0}, fast_hits{0}, fallbacks{0},
        upserts{0}, removes{0}, consolidations{0}, splits{0}, merges{0},
        side_walks{0}, restarts{0};
  };

  static constexpr std::uint64_t kRootId = 1;
  static constexpr std::size_t kLeafMax = 32;
  static constexpr std::size_t kLeafMin = 2;
  static constexpr std::size_t kInnerMax = 16;
  static constexpr std::size_t kInnerMin = 2;
  static constexpr std::size_t kConsolidateAt = 8;

  BwTree(Runtime& rt, HostId h, Config cfg);
  BwTree(Runtime& rt, Addr superblock, Config cfg);  // reopen

  BwTree(const BwTree&) = delete;

  Addr superblock() const { return sb_; }
  void set_gc(EpochGc* gc) { gc_ = gc; }

  /// Gives a host a local inner-entry table and wires it to the flush bus.
  /// Without it the host always takes the slow path.
  void attach_worker_host(HostId h);

  /// Post-crash repair: finishes an interrupted root publish. Structure
  /// changes left half-done are completed lazily by later operations.
  void repair(HostId h);

  void upsert(HostId h, unsigned w, Word key, Word value);
  std::optional<Word> lookup(HostId h, unsigned w, Word key);
  OpStatus remove(HostId h, unsigned w, Word key);

  std::vector<std::pair<Word, Word>> full_scan(HostId h);

  const Stats& stats() const { return stats_; }
  double retry_ratio() const {
    const auto l = stats_.lookups.load();
    return l ? double(stats_.fallbacks.load()) / double(l) : 0.0;
  }

 private:
  enum Kind : Word {
    kLeaf = 1,
    kInner = 2,
    kDeltaInsert = 3,
    kDeltaDelete = 4,
    kDeltaMerge = 5,
    kNodeRemove = 6,
  };

  struct Extent {
    Addr addr;
    std::size_t bytes;
    std::uint64_t id;
  };

  struct NodeView {
    Addr head = 0;
    Word level = 0;
    bool removed = false;
    std::uint64_t partner = 0;  // NodeRemove: merge target
    Addr remove_content = 0;    // NodeRemove: my consolidated content
    bool has_high = false;
    Word high = 0;
    std::uint64_t side = 0;
    std::size_t chain_len = 0;
    std::vector<std::pair<Word, Word>> entries;  // sorted (key, value/child)
    std::vector<Extent> extents;                 // whole chain, for retire
    std::vector<std::uint64_t> absorbed;         // merged-in right ids
  };

  struct PathEntry {
    std::uint64_t id;
  };

  Addr map_addr(std::uint64_t id) const { return map_base_ + id * kWordBytes; }
  Word rd(HostId h, Addr a) const;
  Addr write_node(HostId h, const std::vector<Word>& words);
  static std::size_t node_bytes(std::size_t words);

  NodeView materialize(HostId h, Addr head, std::uint64_t id) const;

  /// Point query over one chain without building the full view: walks the
  /// deltas and binary-searches the base in place. Chains holding a merge
  /// delta (or an inner-node delete delta) report Fallback and the caller
  /// materializes instead.
  struct Probe {
    enum class St { Found, Absent, Removed, Fallback } st = St::Fallback;
    Word value = 0;
    Word level = 0;
    bool has_high = false;
    Word high = 0;
    std::uint64_t side = 0;
    std::uint64_t child = 0;  // routing result on inner nodes
  };
  Probe probe(HostId h, Addr head, Word key) const;
  static std::size_t route(const NodeView& v, Word key);

  bool install(HostId h, std::uint64_t id, Addr expected, Addr desired);
  std::uint64_t fresh_id(HostId h);
  void retire_view(HostId h, unsigned w, const NodeView& v);
  void retire_extent(HostId h, unsigned w, Addr a, std::size_t bytes,
                     std::uint64_t id);

  struct Descent {
    std::uint64_t id;
    NodeView view;
    std::vector<PathEntry> path;
  };
  Descent descend(HostId h, unsigned w, Word key, Word target_level);

  void help_split(HostId h, unsigned w, Word sep, std::uint64_t child,
                  Word child_level);
  void help_remove(HostId h, unsigned w, std::uint64_t id, Addr rm_addr);
  void maybe_consolidate(HostId h, unsigned w, std::uint64_t id,
                         const std::vector<PathEntry>& path);
  void split(HostId h, unsigned w, std::uint64_t id, const NodeView& v,
             const std::vector<PathEntry>& path);
  void try_merge(HostId h, unsigned w, std::uint64_t id, const NodeView& v,
                 const std::vector<PathEntry>& path);

  std::optional<Word> lookup_fast(HostId h, unsigned w, Word key, bool& miss);
  std::optional<Word> lookup_slow(HostId h, unsigned w, Word key);

  std::vector<Word> base_words(Word kind, Word level, bool has_high, Word high,
                               std::uint64_t side,
                               const std::vector<std::pair<Word, Word>>& es,
                               std::size_t from, std::size_t to) const;

  // Host-local mirror of mapping entries, invalidated through the bus.
  struct LocalTable {
    std::vector<std::atomic<Addr>> entries;
    explicit LocalTable(std::size_t n) : entries(n) {
      for (auto& e : entries) e.store(0, std::memory_order_relaxed);
    }
  };
  LocalTable* table(HostId h) const { return tables_[h].get(); }

  Runtime& rt_;
  PccMemory& mem_;
  Addr sb_ = 0;
  Addr map_base_ = 0;
  std::uint32_t map_cap_ = 0;
  bool replica_root_ = true;
  bool spec_read_ = true;
  ReplicatedVar root_rv_;
  EpochGc* gc_ = nullptr;
  // shared with the bus invalidators, which can outlive this object
  std::array<std::shared_ptr<LocalTable>, kMaxHosts> tables_;
  mutable Stats stats_;
};

}  // namespace pcc
