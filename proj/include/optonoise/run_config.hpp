#pragma once

// Run configuration for the command-line tool: a flat key=value file, one key
// per line, '#' comments, SI units. Keys mirror PhysicalConfig and RunConfig
// field names; later assignments override earlier ones.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "optonoise/constants.hpp"
#include "optonoise/errors.hpp"
#include "optonoise/grid.hpp"
#include "optonoise/model.hpp"
#include "optonoise/spectra.hpp"

namespace optonoise {

enum class OutputFormat { csv, json };

struct RunConfig {
  PhysicalConfig physical;
  FrequencyGrid grid;
  std::optional<std::vector<double>> thetas;        // rad
  std::optional<std::vector<double>> temperatures;  // K, one run per entry
  std::optional<FeedbackSetting> feedback;
  LoopClosure closure = LoopClosure::open_record;
  double epsilon = 0.01;            // squeezing threshold for the bandwidth
  double rel_tol = 1e-9;            // oracle comparison tolerance
  std::size_t mc_realizations = 0;  // 0 disables the Monte Carlo check
  std::size_t mc_bins = 201;
  std::uint64_t seed = 1;
  std::string out_path;             // empty: stdout
  std::optional<OutputFormat> format;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline double parse_plain_number(std::string_view text, std::string_view key) {
  text = trim(text);
  double v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw usage_error("config: " + std::string(key) + ": not a number: '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace detail

/// Number, optionally written as a multiple of pi: "1.5", "pi", "pi/4", "3*pi/4".
inline double parse_number(std::string_view text, std::string_view key) {
  using detail::parse_plain_number;
  text = detail::trim(text);
  const auto at = text.find("pi");
  if (at == std::string_view::npos) return parse_plain_number(text, key);
  double factor = 1.0;
  if (at > 0) {
    const auto head = text.substr(0, at);
    if (head.back() != '*') throw usage_error("config: " + std::string(key) + ": bad multiple of pi");
    factor = parse_plain_number(head.substr(0, head.size() - 1), key);
  }
  auto tail = text.substr(at + 2);
  if (tail.empty()) return factor * constants::pi;
  if (tail.front() != '/') throw usage_error("config: " + std::string(key) + ": bad multiple of pi");
  return factor * constants::pi / parse_plain_number(tail.substr(1), key);
}

inline std::vector<double> parse_list(std::string_view text, std::string_view key) {
  std::vector<double> out;
  if (detail::trim(text).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    out.push_back(parse_number(text.substr(start, comma - start), key));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::size_t parse_count(std::string_view text, std::string_view key) {
  text = detail::trim(text);
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw usage_error("config: " + std::string(key) + ": not a non-negative integer: '" +
                      std::string(text) + "'");
  }
  return v;
}

/// off | fixed:VALUE | opt | opt-at:OMEGA
inline FeedbackSetting parse_lambda(std::string_view text) {
  text = detail::trim(text);
  if (text == "off") return FeedbackSetting::none();
  if (text == "opt") return FeedbackSetting::optimal();
  if (text.starts_with("fixed:")) return FeedbackSetting::fixed(parse_number(text.substr(6), "lambda"));
  if (text.starts_with("opt-at:")) {
    const double w = parse_number(text.substr(7), "lambda");
    if (!(w > 0.0)) throw usage_error("lambda: opt-at needs a positive frequency");
    return FeedbackSetting::optimal_at(w);
  }
  throw usage_error("lambda: expected off, fixed:VALUE, opt or opt-at:OMEGA, got '" +
                    std::string(text) + "'");
}

inline OutputFormat parse_format(std::string_view text) {
  text = detail::trim(text);
  if (text == "csv") return OutputFormat::csv;
  if (text == "json") return OutputFormat::json;
  throw usage_error("format: expected csv or json, got '" + std::string(text) + "'");
}

inline void apply_setting(RunConfig& rc, std::string_view key, std::string_view value) {
  key = detail::trim(key);
  value = detail::trim(value);
  auto& p = rc.physical;
  auto num = [&] { return parse_number(value, key); };

  if (key == "m") p.m = num();
  else if (key == "omega_m") p.omega_m = num();
  else if (key == "Q_m") p.Q_m = num();
  else if (key == "gamma") p.gamma = num();
  else if (key == "tau") p.tau = num();
  else if (key == "wavelength0") p.wavelength0 = num();
  else if (key == "P_in") p.P_in = num();
  else if (key == "Delta") p.Delta = num();
  else if (key == "T") rc.temperatures = std::vector<double>{num()};
  else if (key == "temperatures") rc.temperatures = parse_list(value, key);
  else if (key == "T_elec") p.T_elec = num();
  else if (key == "R") p.R = num();
  else if (key == "omega_e") p.omega_e = num();
  else if (key == "Q_e") p.Q_e = num();
  else if (key == "Omega_e") p.Omega_e = num();
  else if (key == "lambda_fb") rc.feedback = FeedbackSetting::fixed(num());
  else if (key == "lambda") rc.feedback = parse_lambda(value);
  else if (key == "omega_min") rc.grid.omega_min = num();
  else if (key == "omega_max") rc.grid.omega_max = num();
  else if (key == "n_points") rc.grid.n_points = parse_count(value, key);
  else if (key == "spacing") {
    if (value == "log") rc.grid.spacing = Spacing::log;
    else if (value == "linear") rc.grid.spacing = Spacing::linear;
    else throw usage_error("config: spacing must be linear or log");
  } else if (key == "thetas") rc.thetas = parse_list(value, key);
  else if (key == "closure") {
    if (value == "open_record") rc.closure = LoopClosure::open_record;
    else if (value == "self_consistent") rc.closure = LoopClosure::self_consistent;
    else throw usage_error("config: closure must be open_record or self_consistent");
  } else if (key == "epsilon") rc.epsilon = num();
  else if (key == "rel_tol") rc.rel_tol = num();
  else if (key == "mc_realizations") rc.mc_realizations = parse_count(value, key);
  else if (key == "mc_bins") rc.mc_bins = parse_count(value, key);
  else if (key == "seed") rc.seed = parse_count(value, key);
  else if (key == "out") rc.out_path = std::string(value);
  else if (key == "format") rc.format = parse_format(value);
  else throw usage_error("config: unknown key '" + std::string(key) + "'");
}

/// Applies "KEY=VALUE".
inline void apply_assignment(RunConfig& rc, std::string_view line) {
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) {
    throw usage_error("config: expected KEY=VALUE, got '" + std::string(line) + "'");
  }
  apply_setting(rc, line.substr(0, eq), line.substr(eq + 1));
}

inline void apply_config_text(RunConfig& rc, std::istream& in, const std::string& origin) {
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    try {
      apply_assignment(rc, line);
    } catch (const usage_error& e) {
      throw usage_error(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_config_file(RunConfig& rc, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw usage_error("cannot open config file '" + path + "'");
  apply_config_text(rc, in, path);
}

}  // namespace optonoise
