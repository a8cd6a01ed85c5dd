#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cctype>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace martrep {

/// Exact rational scalar used on the exact arithmetic track.
using Rat = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

inline Rat rat(long long num, long long den = 1) { return Rat(BigInt(num), BigInt(den)); }

/// Canonical text form: "p/q" for non-integers, "n" for integers.
inline std::string rat_str(const Rat& r) { return r.str(); }

inline double to_double(const Rat& r) { return r.convert_to<double>(); }

/// Parses "p/q" or "n" (optionally signed). Returns nullopt on malformed input
/// or zero denominator.
inline std::optional<Rat> parse_rat(std::string_view s) {
  if (s.empty()) return std::nullopt;
  auto is_int = [](std::string_view v) {
    if (v.empty()) return false;
    std::size_t i = (v[0] == '-' || v[0] == '+') ? 1 : 0;
    if (i == v.size()) return false;
    for (; i < v.size(); ++i)
      if (!std::isdigit(static_cast<unsigned char>(v[i]))) return false;
    return true;
  };
  auto slash = s.find('/');
  if (slash == std::string_view::npos) {
    if (!is_int(s)) return std::nullopt;
    return Rat(BigInt(std::string(s)));
  }
  std::string_view num = s.substr(0, slash);
  std::string_view den = s.substr(slash + 1);
  if (!is_int(num) || !is_int(den)) return std::nullopt;
  BigInt d{std::string(den)};
  if (d == 0) return std::nullopt;
  return Rat(BigInt(std::string(num)), d);
}

inline BigInt floor_rat(const Rat& r) {
  BigInt q = numerator(r) / denominator(r);
  if (r < 0 && q * denominator(r) != numerator(r)) --q;
  return q;
}

inline BigInt ceil_rat(const Rat& r) {
  BigInt q = numerator(r) / denominator(r);
  if (r > 0 && q * denominator(r) != numerator(r)) ++q;
  return q;
}

inline Rat rat_abs(const Rat& r) { return r < 0 ? Rat(-r) : r; }

}  // namespace martrep
