#pragma once

// Plain-text key-value form of GuidanceConfig:
//
//   # comment
//   delta_k = 1.1
//   delta_v = 1.15
//   lambda_k = 1
//   lambda_v = 1
//   token_range = auto        (or  begin:end, half-open)
//   guided_layers = all       (or  0,3,7)
//
// Missing keys keep their defaults; unknown or repeated keys are errors.

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>

#include "dcag/error.hpp"
#include "dcag/format.hpp"
#include "dcag/guidance.hpp"

namespace dcag {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline double parse_double(std::string_view text, std::string_view what) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || text.empty()) {
    throw ConfigError("cannot parse " + std::string(what) + " value '" + std::string(text) + "'");
  }
  return value;
}

inline std::size_t parse_index(std::string_view text, std::string_view what) {
  std::size_t value = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end || text.empty()) {
    throw ConfigError("cannot parse " + std::string(what) + " index '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace detail

inline std::string to_text(const GuidanceConfig& cfg) {
  std::ostringstream os;
  os << "delta_k = " << format_number(cfg.delta_k) << '\n';
  os << "delta_v = " << format_number(cfg.delta_v) << '\n';
  os << "lambda_k = " << format_number(cfg.lambda_k) << '\n';
  os << "lambda_v = " << format_number(cfg.lambda_v) << '\n';
  os << "token_range = ";
  if (cfg.token_range) {
    os << cfg.token_range->begin << ':' << cfg.token_range->end;
  } else {
    os << "auto";
  }
  os << "\nguided_layers = ";
  if (cfg.guided_layers.empty()) {
    os << "all";
  } else {
    bool first = true;
    for (std::size_t l : cfg.guided_layers) {
      os << (first ? "" : ",") << l;
      first = false;
    }
  }
  os << '\n';
  return os.str();
}

inline GuidanceConfig parse_guidance_config(std::string_view text) {
  GuidanceConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;

    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");

    if (key == "delta_k") {
      cfg.delta_k = detail::parse_double(value, key);
    } else if (key == "delta_v") {
      cfg.delta_v = detail::parse_double(value, key);
    } else if (key == "lambda_k") {
      cfg.lambda_k = detail::parse_double(value, key);
    } else if (key == "lambda_v") {
      cfg.lambda_v = detail::parse_double(value, key);
    } else if (key == "token_range") {
      if (value == "auto") {
        cfg.token_range.reset();
      } else {
        const auto colon = value.find(':');
        if (colon == std::string_view::npos) throw ConfigError("token_range must be 'auto' or 'begin:end'");
        cfg.token_range = TokenRange{detail::parse_index(detail::trim(value.substr(0, colon)), key),
                                     detail::parse_index(detail::trim(value.substr(colon + 1)), key)};
      }
    } else if (key == "guided_layers") {
      cfg.guided_layers.clear();
      if (value != "all") {
        std::string_view rest = value;
        while (true) {
          const auto comma = rest.find(',');
          cfg.guided_layers.insert(detail::parse_index(detail::trim(rest.substr(0, comma)), key));
          if (comma == std::string_view::npos) break;
          rest = rest.substr(comma + 1);
        }
      }
    } else {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

inline GuidanceConfig load_guidance_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open guidance config '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_guidance_config(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace dcag
