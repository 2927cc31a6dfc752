#include "pcc/harness/config.hpp"

#include <fstream>
#include <sstream>

namespace pcc::harness {

namespace {
std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}
}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error("config line " + std::to_string(lineno) + ": expected key=value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto val = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw Error("config line " + std::to_string(lineno) + ": empty key");
    }
    out[key] = val;
  }
  return out;
}

std::map<std::string, std::string> parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

TimingConfig timing_from_config(
    const std::map<std::string, std::string>& cfg) {
  TimingConfig t;
  auto u64 = [&](const char* key, std::uint64_t& field) {
    const auto it = cfg.find(key);
    if (it != cfg.end()) field = std::stoull(it->second);
  };
  const auto it = cfg.find("timing");
  if (it != cfg.end()) t.enabled = it->second == "on" || it->second == "1";
  u64("lat_cache_hit_ns", t.lat_cache_hit_ns);
  u64("lat_pload_ns", t.lat_pload_ns);
  u64("lat_pstore_ns", t.lat_pstore_ns);
  u64("lat_pcas_ns", t.lat_pcas_ns);
  u64("lat_flush_ns", t.lat_flush_ns);
  const auto q = cfg.find("queue_count");
  if (q != cfg.end()) t.queue_count = std::stoul(q->second);
  return t;
}

}  // namespace pcc::harness
