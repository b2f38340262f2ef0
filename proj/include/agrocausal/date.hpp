#pragma once

#include <compare>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "agrocausal/error.hpp"

namespace agrocausal {

/// Calendar date stored as days since 1970-01-01 (proleptic Gregorian).
class Date {
 public:
  constexpr Date() = default;
  constexpr explicit Date(std::int64_t days_since_epoch) : days_(days_since_epoch) {}

  static constexpr Date from_ymd(int year, unsigned month, unsigned day) {
    // days_from_civil, H. Hinnant
    const int y = year - (month <= 2 ? 1 : 0);
    const int era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (month + (month > 2 ? -3 : 9)) + 2) / 5 + day - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return Date(static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) - 719468);
  }

  /// Parses YYYY-MM-DD; throws Parse on anything else.
  static Date parse(std::string_view text) {
    int y = 0;
    unsigned m = 0, d = 0;
    char tail = 0;
    const std::string s(text);
    if (s.size() != 10 || std::sscanf(s.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3 ||
        m < 1 || m > 12 || d < 1 || d > days_in_month(y, m)) {
      throw Error(ErrorCode::Parse, "not an ISO-8601 date: '" + s + "'");
    }
    return from_ymd(y, m, d);
  }

  static bool try_parse(std::string_view text, Date& out) {
    try {
      out = parse(text);
      return true;
    } catch (const Error&) {
      return false;
    }
  }

  constexpr std::int64_t days() const { return days_; }

  std::string iso() const {
    // civil_from_days
    const std::int64_t z = days_ + 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp < 10 ? mp + 3 : mp - 9;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400 + (m <= 2 ? 1 : 0);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04lld-%02u-%02u", static_cast<long long>(y), m, d);
    return buf;
  }

  constexpr Date operator+(std::int64_t n) const { return Date(days_ + n); }
  constexpr Date operator-(std::int64_t n) const { return Date(days_ - n); }
  constexpr std::int64_t operator-(Date other) const { return days_ - other.days_; }
  constexpr auto operator<=>(const Date&) const = default;

 private:
  static constexpr unsigned days_in_month(int y, unsigned m) {
    constexpr unsigned table[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    const bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    return m == 2 && leap ? 29 : table[m - 1];
  }

  std::int64_t days_ = 0;
};

}  // namespace agrocausal
