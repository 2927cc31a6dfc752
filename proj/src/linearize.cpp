#include "pcc/harness/linearize.hpp"

#include <algorithm>
#include <map>
#include <string>
#include <unordered_set>

namespace pcc::harness {

namespace {

struct ModelState {
  std::map<Word, Word> kv;
  Word reg = 0;

  std::string serialize() const {
    std::string s;
    s.reserve(kv.size() * 16 + 8);
    for (auto [k, v] : kv) {
      s.append(reinterpret_cast<const char*>(&k), sizeof k);
      s.append(reinterpret_cast<const char*>(&v), sizeof v);
    }
    s.append(reinterpret_cast<const char*>(&reg), sizeof reg);
    return s;
  }
};

// Applies `op` sequentially; returns false when the recorded outcome is not
// what the model produces.
bool apply(ModelKind m, ModelState& st, const HistoryOp& op) {
  switch (op.kind) {
    case HistoryOp::Kind::Get: {
      const auto it = st.kv.find(op.key);
      if (it == st.kv.end()) return !op.found;
      return op.found && op.read_value == it->second;
    }
    case HistoryOp::Kind::Insert: {
      if (m != ModelKind::KvMap) return false;
      const bool fresh = st.kv.emplace(op.key, op.value).second;
      return op.status == (fresh ? OpStatus::Ok : OpStatus::Duplicate);
    }
    case HistoryOp::Kind::Upsert: {
      if (m != ModelKind::UpsertMap) return false;
      st.kv[op.key] = op.value;
      return op.status == OpStatus::Ok;
    }
    case HistoryOp::Kind::Remove: {
      const bool present = st.kv.erase(op.key) > 0;
      return op.status == (present ? OpStatus::Ok : OpStatus::NotFound);
    }
    case HistoryOp::Kind::RegRead:
      return op.read_value == st.reg;
    case HistoryOp::Kind::RegPublish: {
      const bool ok = st.reg == op.expected;
      if (ok) st.reg = op.value;
      return op.ok == ok;
    }
  }
  return false;
}

bool precedes_some_pending(const std::vector<HistoryOp>& h,
                           std::uint32_t done, std::size_t cand) {
  // cand may be linearized next only if no other pending op already
  // responded before cand was invoked
  for (std::size_t j = 0; j < h.size(); ++j) {
    if (j == cand || (done >> j) & 1) continue;
    if (h[j].response_ts < h[cand].invoke_ts) return true;
  }
  return false;
}

bool search(const std::vector<HistoryOp>& h, ModelKind m, ModelState st,
            std::uint32_t done, std::unordered_set<std::string>& failed) {
  if (done == (std::uint32_t(1) << h.size()) - 1) return true;
  std::string memo = std::to_string(done) + "|" + st.serialize();
  if (failed.count(memo)) return false;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if ((done >> i) & 1) continue;
    if (precedes_some_pending(h, done, i)) continue;
    ModelState next = st;
    if (!apply(m, next, h[i])) continue;
    if (search(h, m, std::move(next), done | (std::uint32_t(1) << i),
               failed)) {
      return true;
    }
  }
  failed.insert(std::move(memo));
  return false;
}

bool naive(const std::vector<HistoryOp>& h, ModelKind m, const ModelState& st,
           std::vector<bool>& used, std::size_t placed) {
  if (placed == h.size()) return true;
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (used[i]) continue;
    bool blocked = false;
    for (std::size_t j = 0; j < h.size(); ++j) {
      if (!used[j] && j != i && h[j].response_ts < h[i].invoke_ts) {
        blocked = true;
        break;
      }
    }
    if (blocked) continue;
    ModelState next = st;
    if (!apply(m, next, h[i])) continue;
    used[i] = true;
    if (naive(h, m, next, used, placed + 1)) return true;
    used[i] = false;
  }
  return false;
}

}  // namespace

bool check_linearizable(const std::vector<HistoryOp>& history, ModelKind m,
                        Word register_init) {
  if (history.size() > 16) throw Error("history too large for brute force");
  for (const auto& op : history) {
    if (op.invoke_ts >= op.response_ts) throw Error("bad history timestamps");
  }
  ModelState st;
  st.reg = register_init;
  std::unordered_set<std::string> failed;
  return search(history, m, std::move(st), 0, failed);
}

bool check_linearizable_naive(const std::vector<HistoryOp>& history,
                              ModelKind m, Word register_init) {
  if (history.size() > 9) throw Error("history too large for naive check");
  ModelState st;
  st.reg = register_init;
  std::vector<bool> used(history.size(), false);
  return naive(history, m, st, used, 0);
}

}  // namespace pcc::harness
