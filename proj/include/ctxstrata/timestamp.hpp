#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "ctxstrata/error.hpp"

namespace ctxstrata {

/// Microseconds since the Unix epoch, UTC.
struct Timestamp {
  std::int64_t micros = 0;

  friend auto operator<=>(const Timestamp&, const Timestamp&) = default;
};

namespace detail {

inline bool read_digits(std::string_view s, std::size_t pos, std::size_t count,
                        int& out) {
  if (pos + count > s.size()) return false;
  int v = 0;
  for (std::size_t i = 0; i < count; ++i) {
    char c = s[pos + i];
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  return true;
}

}  // namespace detail

/// Parses an RFC 3339 date-time, e.g. 2150-03-01T08:30:00Z or
/// 2150-03-01T08:30:00.25-05:00.
inline Timestamp parse_rfc3339(std::string_view s) {
  using namespace std::chrono;
  auto fail = [&]() -> Timestamp {
    throw Error(ErrorKind::value,
                "invalid RFC 3339 timestamp '" + std::string(s) + "'");
  };
  int y, mo, d, h, mi, sec;
  if (!detail::read_digits(s, 0, 4, y) || s.size() < 19 || s[4] != '-' ||
      !detail::read_digits(s, 5, 2, mo) || s[7] != '-' ||
      !detail::read_digits(s, 8, 2, d) ||
      (s[10] != 'T' && s[10] != 't' && s[10] != ' ') ||
      !detail::read_digits(s, 11, 2, h) || s[13] != ':' ||
      !detail::read_digits(s, 14, 2, mi) || s[16] != ':' ||
      !detail::read_digits(s, 17, 2, sec))
    return fail();
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)},
                     day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) return fail();

  std::size_t pos = 19;
  std::int64_t frac_us = 0;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    std::int64_t scale = 100000;
    std::size_t start = pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
      frac_us += (s[pos] - '0') * scale;
      scale /= 10;
      ++pos;
    }
    if (pos == start) return fail();
  }
  std::int64_t offset_min = 0;
  if (pos >= s.size()) return fail();
  if (s[pos] == 'Z' || s[pos] == 'z') {
    ++pos;
  } else if (s[pos] == '+' || s[pos] == '-') {
    int oh, om;
    if (!detail::read_digits(s, pos + 1, 2, oh) || pos + 3 >= s.size() ||
        s[pos + 3] != ':' || !detail::read_digits(s, pos + 4, 2, om))
      return fail();
    offset_min = (oh * 60 + om) * (s[pos] == '-' ? -1 : 1);
    pos += 6;
  } else {
    return fail();
  }
  if (pos != s.size()) return fail();

  std::int64_t days = sys_days{ymd}.time_since_epoch().count();
  std::int64_t secs = days * 86400 + h * 3600 + mi * 60 + sec - offset_min * 60;
  return Timestamp{secs * 1000000 + frac_us};
}

/// Formats as YYYY-MM-DDTHH:MM:SSZ (fractional seconds dropped when zero).
inline std::string format_rfc3339(Timestamp t) {
  using namespace std::chrono;
  std::int64_t secs = t.micros / 1000000;
  std::int64_t frac = t.micros % 1000000;
  if (frac < 0) {
    frac += 1000000;
    --secs;
  }
  std::int64_t days = secs / 86400;
  std::int64_t rem = secs % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  year_month_day ymd{sys_days{std::chrono::days{days}}};
  char buf[48];
  if (frac == 0) {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ",
                  static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()), static_cast<int>(rem / 3600),
                  static_cast<int>(rem / 60 % 60), static_cast<int>(rem % 60));
  } else {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%06dZ",
                  static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()), static_cast<int>(rem / 3600),
                  static_cast<int>(rem / 60 % 60), static_cast<int>(rem % 60),
                  static_cast<int>(frac));
  }
  return buf;
}

}  // namespace ctxstrata
