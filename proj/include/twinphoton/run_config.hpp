#pragma once

// Flat `key = value` run configuration. Keys name command-line options of the
// selected subcommand (underscores and dashes are interchangeable), so a key
// the subcommand does not know is rejected by the option parser.

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "twinphoton/error.hpp"

namespace twinphoton {

struct RunConfig {
  std::vector<std::pair<std::string, std::string>> entries;

  /// Entries as `--key=value` arguments.
  std::vector<std::string> as_arguments() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries) out.push_back("--" + k + "=" + v);
    return out;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline RunConfig parse_run_config(std::string_view text) {
  RunConfig cfg;
  std::size_t pos = 0, line_no = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw FormatError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key(detail::trim(line.substr(0, eq)));
    const std::string value(detail::trim(line.substr(eq + 1)));
    if (key.empty() || key.find_first_of(" \t") != std::string::npos) {
      throw FormatError("config line " + std::to_string(line_no) + ": bad key");
    }
    std::replace(key.begin(), key.end(), '_', '-');
    for (const auto& [k, v] : cfg.entries) {
      if (k == key) throw FormatError("config line " + std::to_string(line_no) + ": duplicate key " + key);
    }
    cfg.entries.emplace_back(std::move(key), value);
  }
  return cfg;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace twinphoton
