#pragma once

#include <map>
#include <string>

#include "pcc/timing.hpp"

namespace pcc::harness {

/// Parses a `key = value` config file (one pair per line, `#` comments).
std::map<std::string, std::string> parse_config(const std::string& path);
std::map<std::string, std::string> parse_config_text(const std::string& text);

/// Keys: timing {on|off}, lat_cache_hit_ns, lat_pload_ns, lat_pstore_ns,
/// lat_pcas_ns, lat_flush_ns, queue_count. Missing keys keep defaults.
TimingConfig timing_from_config(
    const std::map<std::string, std::string>& cfg);

}  // namespace pcc::harness
