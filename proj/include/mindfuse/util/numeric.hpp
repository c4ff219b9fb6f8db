#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <charconv>
#include <optional>
#include <string>
#include <string_view>

namespace mindfuse::numeric {

/// Half-up (away from zero) rounding to `digits` decimals. A relative nudge
/// absorbs binary representation error so 1.005 rounds to 1.01.
inline double round_half_up(double x, int digits) {
  const double scale = std::pow(10.0, digits);
  const double scaled = std::abs(x) * scale;
  const double nudged = scaled + 0.5 + scaled * 1e-12;
  return std::copysign(std::floor(nudged) / scale, x);
}

inline std::string fixed(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, round_half_up(x, digits));
  return buf;
}

inline std::string fixed_or_na(const std::optional<double>& x, int digits) {
  return x ? fixed(*x, digits) : std::string("n/a");
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (end != tmp.c_str() + tmp.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<double> safe_div(double num, double den) {
  if (den == 0.0) return std::nullopt;
  return num / den;
}

}  // namespace mindfuse::numeric
