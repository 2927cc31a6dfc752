#include "pcc/harness/crash.hpp"

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include "pcc/bwtree.hpp"
#include "pcc/clevelhash.hpp"

namespace pcc::harness {

namespace {

struct Ix {
  virtual ~Ix() = default;
  virtual void set(HostId h, Word k, Word v) = 0;
  virtual void rem(HostId h, Word k) = 0;
  virtual std::optional<Word> get(HostId h, Word k) = 0;
  virtual std::vector<std::pair<Word, Word>> scan(HostId h) = 0;
  virtual void repair(HostId h) = 0;
  virtual Addr sb() const = 0;
};

struct BwIx : Ix {
  BwTree t;
  BwIx(Runtime& rt, HostId h)
      : t(rt, h, {.workers = 1, .map_capacity = 1u << 14}) {}
  BwIx(Runtime& rt, Addr sb) : t(rt, sb, {.workers = 1}) {}
  void set(HostId h, Word k, Word v) override { t.upsert(h, 0, k, v); }
  void rem(HostId h, Word k) override { t.remove(h, 0, k); }
  std::optional<Word> get(HostId h, Word k) override {
    return t.lookup(h, 0, k);
  }
  std::vector<std::pair<Word, Word>> scan(HostId h) override {
    return t.full_scan(h);
  }
  void repair(HostId h) override { t.repair(h); }
  Addr sb() const override { return t.superblock(); }
};

struct ClhIx : Ix {
  CLevelHash t;
  ClhIx(Runtime& rt, HostId h)
      : t(rt, h, {.initial_bucket_bits = 4, .workers = 1}) {}
  ClhIx(Runtime& rt, Addr sb) : t(rt, sb, 1) {}
  void set(HostId h, Word k, Word v) override { t.insert(h, 0, k, v); }
  void rem(HostId h, Word k) override { t.remove(h, 0, k); }
  std::optional<Word> get(HostId h, Word k) override {
    return t.lookup(h, 0, k);
  }
  std::vector<std::pair<Word, Word>> scan(HostId h) override {
    return t.full_scan(h);
  }
  void repair(HostId h) override { t.repair(h); }
  Addr sb() const override { return t.superblock(); }
};

std::unique_ptr<Ix> make_ix(IndexKind k, Runtime& rt, HostId h) {
  if (k == IndexKind::BwTree) return std::make_unique<BwIx>(rt, h);
  return std::make_unique<ClhIx>(rt, h);
}
std::unique_ptr<Ix> open_ix(IndexKind k, Runtime& rt, Addr sb) {
  if (k == IndexKind::BwTree) return std::make_unique<BwIx>(rt, sb);
  return std::make_unique<ClhIx>(rt, sb);
}

// window: fresh inserts that force splits/expansion interleaved with
// removes of prefilled keys that force merges/underflow handling
std::vector<Op> make_window() {
  std::vector<Op> ops;
  Word rm = 1;
  for (Word i = 0; i < 64; ++i) {
    ops.push_back({OpKind::Set, 1000 + i, (i << 8) | 7});
    if (i % 2 == 1 && rm <= 80) {
      ops.push_back({OpKind::Remove, rm});
      rm += 1;
    }
  }
  return ops;
}

constexpr Word kPrefill = 100;

}  // namespace

CrashReport run_crash_enumeration(IndexKind kind, unsigned max_points,
                                  std::uint64_t) {
  CrashReport rep;
  const auto window = make_window();

  // dry run: count the memory ops inside the window
  {
    PccMemory mem(1 << 23);
    Runtime rt(mem);
    const HostId h = rt.attach_host();
    auto ix = make_ix(kind, rt, h);
    for (Word k = 1; k <= kPrefill; ++k) ix->set(h, k, k * 11);
    const auto before = mem.total_ops();
    for (const auto& op : window) {
      if (op.kind == OpKind::Set) {
        ix->set(h, op.key, op.value);
      } else {
        ix->rem(h, op.key);
      }
    }
    rep.window_ops = mem.total_ops() - before;
  }

  const unsigned points =
      unsigned(std::min<std::uint64_t>(max_points, rep.window_ops));
  for (unsigned p = 1; p <= points; ++p) {
    PccMemory mem(1 << 23);
    Runtime rt(mem);
    const HostId h = rt.attach_host();
    auto ix = make_ix(kind, rt, h);
    std::map<Word, Word> expected;
    for (Word k = 1; k <= kPrefill; ++k) {
      ix->set(h, k, k * 11);
      expected[k] = k * 11;
    }
    const Addr sb = ix->sb();
    mem.set_crash_after(h, p);
    std::optional<Op> inflight;
    std::set<Word> removed;
    try {
      for (const auto& op : window) {
        inflight = op;
        if (op.kind == OpKind::Set) {
          ix->set(h, op.key, op.value);
          expected[op.key] = op.value;
        } else {
          ix->rem(h, op.key);
          expected.erase(op.key);
          removed.insert(op.key);
        }
        inflight.reset();
      }
    } catch (const HostCrashed&) {
    }

    Runtime rt2(mem, /*recover=*/true);
    const HostId h2 = mem.attach_next_host();
    auto rx = open_ix(kind, rt2, sb);
    rx->repair(h2);

    auto fail = [&](const std::string& why) {
      ++rep.failures;
      if (rep.first_failure.empty()) {
        std::ostringstream os;
        os << index_name(kind) << " crash point " << p << ": " << why;
        rep.first_failure = os.str();
      }
    };

    std::map<Word, Word> image;
    bool dup = false;
    for (auto [k, v] : rx->scan(h2)) {
      if (!image.emplace(k, v).second) dup = true;
    }
    if (dup) {
      fail("duplicate key in recovered scan");
      ++rep.points_tested;
      continue;
    }
    bool ok = true;
    for (auto [k, v] : expected) {
      if (inflight && inflight->key == k) continue;  // may have landed
      const auto it = image.find(k);
      if (it == image.end() || it->second != v) {
        ok = false;
        fail("acknowledged key missing or torn");
        break;
      }
    }
    if (ok) {
      for (Word k : removed) {
        const bool is_inflight = inflight && inflight->key == k;
        if (image.count(k) && !is_inflight) {
          ok = false;
          fail("acknowledged remove resurfaced");
          break;
        }
      }
    }
    if (ok) {
      for (auto [k, v] : image) {
        if (expected.count(k)) continue;
        if (inflight && inflight->key == k &&
            (inflight->kind == OpKind::Remove || v == inflight->value)) {
          continue;  // in-flight op landed whole
        }
        ok = false;
        fail("recovered image holds a key nobody acknowledged");
        break;
      }
    }
    if (ok) {
      // recovered index still works
      rx->set(h2, 777777, 5);
      if (rx->get(h2, 777777) != Word(5)) fail("recovered index not usable");
    }
    ++rep.points_tested;
  }
  return rep;
}

}  // namespace pcc::harness
