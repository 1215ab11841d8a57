#pragma once

// Exact fractions for parameter accounting. Intermediates are 128-bit so that
// products of table sizes and embedding widths cannot silently overflow.

#include <charconv>
#include <compare>
#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>

#include "aefs/errors.hpp"

namespace aefs {

class Rational {
 public:
  constexpr Rational() = default;
  constexpr Rational(std::int64_t n) : num_(n), den_(1) {}  // NOLINT: implicit from integers
  Rational(std::int64_t n, std::int64_t d) { assign(n, d); }

  std::int64_t num() const noexcept { return num_; }
  std::int64_t den() const noexcept { return den_; }

  // Parses "37.5", "-0.125", "3/8" or "42" without going through floating point.
  static Rational parse(std::string_view text) {
    if (text.empty()) throw ParseError("Rational: empty string");
    if (const auto slash = text.find('/'); slash != std::string_view::npos) {
      return Rational(parse_int(text.substr(0, slash)), parse_int(text.substr(slash + 1)));
    }
    bool negative = false;
    if (text.front() == '-' || text.front() == '+') {
      negative = text.front() == '-';
      text.remove_prefix(1);
    }
    const auto dot = text.find('.');
    const std::string_view whole = text.substr(0, dot);
    const std::string_view frac = dot == std::string_view::npos ? std::string_view{} : text.substr(dot + 1);
    if (whole.empty() && frac.empty()) throw ParseError("Rational: no digits");
    if (frac.size() > 17) throw ParseError("Rational: too many decimal places");
    std::int64_t den = 1;
    for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
    const std::int64_t w = whole.empty() ? 0 : parse_int(whole);
    const std::int64_t f = frac.empty() ? 0 : parse_int(frac);
    if (w < 0 || f < 0) throw ParseError("Rational: misplaced sign in '" + std::string(text) + "'");
    Rational r;
    r.assign_wide(static_cast<__int128>(w) * den + f, den);
    return negative ? -r : r;
  }

  double to_double() const noexcept { return static_cast<double>(num_) / static_cast<double>(den_); }

  std::int64_t floor() const noexcept {
    std::int64_t q = num_ / den_;
    if ((num_ % den_ != 0) && (num_ < 0)) --q;
    return q;
  }

  // Fixed-point decimal rendering, rounded half away from zero.
  std::string to_decimal(int places) const {
    __int128 scale = 1;
    for (int i = 0; i < places; ++i) scale *= 10;
    __int128 n = static_cast<__int128>(num_) * scale;
    const bool negative = n < 0;
    if (negative) n = -n;
    __int128 q = n / den_;
    if ((n % den_) * 2 >= den_) ++q;
    std::string digits;
    do {
      digits.insert(digits.begin(), static_cast<char>('0' + static_cast<int>(q % 10)));
      q /= 10;
    } while (q > 0);
    while (static_cast<int>(digits.size()) <= places) digits.insert(digits.begin(), '0');
    if (places > 0) digits.insert(digits.end() - places, '.');
    if (negative && digits.find_first_not_of("0.") != std::string::npos) digits.insert(0, "-");
    return digits;
  }

  std::string to_percent(int places) const { return (*this * 100).to_decimal(places) + "%"; }

  std::string to_string() const {
    return den_ == 1 ? std::to_string(num_) : std::to_string(num_) + "/" + std::to_string(den_);
  }

  Rational operator-() const { Rational r; r.num_ = -num_; r.den_ = den_; return r; }

  friend Rational operator+(const Rational& a, const Rational& b) {
    Rational r;
    r.assign_wide(static_cast<__int128>(a.num_) * b.den_ + static_cast<__int128>(b.num_) * a.den_,
                  static_cast<__int128>(a.den_) * b.den_);
    return r;
  }
  friend Rational operator-(const Rational& a, const Rational& b) { return a + (-b); }
  friend Rational operator*(const Rational& a, const Rational& b) {
    Rational r;
    r.assign_wide(static_cast<__int128>(a.num_) * b.num_, static_cast<__int128>(a.den_) * b.den_);
    return r;
  }
  friend Rational operator/(const Rational& a, const Rational& b) {
    if (b.num_ == 0) throw NumericError("Rational: division by zero");
    Rational r;
    r.assign_wide(static_cast<__int128>(a.num_) * b.den_, static_cast<__int128>(a.den_) * b.num_);
    return r;
  }
  Rational& operator+=(const Rational& o) { return *this = *this + o; }
  Rational& operator-=(const Rational& o) { return *this = *this - o; }

  friend bool operator==(const Rational&, const Rational&) = default;
  friend std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
    const __int128 l = static_cast<__int128>(a.num_) * b.den_;
    const __int128 r = static_cast<__int128>(b.num_) * a.den_;
    return l <=> r;
  }

  friend std::ostream& operator<<(std::ostream& os, const Rational& r) { return os << r.to_string(); }

 private:
  static std::int64_t parse_int(std::string_view s) {
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      throw ParseError("Rational: bad integer '" + std::string(s) + "'");
    }
    return v;
  }

  void assign(std::int64_t n, std::int64_t d) { assign_wide(n, d); }

  void assign_wide(__int128 n, __int128 d) {
    if (d == 0) throw NumericError("Rational: zero denominator");
    if (d < 0) {
      n = -n;
      d = -d;
    }
    __int128 a = n < 0 ? -n : n;
    __int128 b = d;
    while (b != 0) {
      const __int128 t = a % b;
      a = b;
      b = t;
    }
    if (a > 1) {
      n /= a;
      d /= a;
    }
    constexpr __int128 lim = INT64_MAX;
    if (n > lim || n < -lim || d > lim) throw NumericError("Rational: overflow");
    num_ = static_cast<std::int64_t>(n);
    den_ = static_cast<std::int64_t>(d);
  }

  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

}  // namespace aefs
