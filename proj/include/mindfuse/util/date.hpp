#pragma once

#include <chrono>
#include <compare>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

namespace mindfuse {

/// Calendar date with YYYY-MM-DD text form.
class Date {
 public:
  Date() = default;
  explicit Date(std::chrono::sys_days days) : days_(days) {}
  Date(int y, unsigned m, unsigned d)
      : days_(std::chrono::year_month_day{std::chrono::year{y},
                                          std::chrono::month{m},
                                          std::chrono::day{d}}) {}

  static std::optional<Date> parse(std::string_view s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    int y = 0;
    unsigned m = 0;
    unsigned d = 0;
    for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9}) {
      if (s[i] < '0' || s[i] > '9') return std::nullopt;
    }
    y = (s[0] - '0') * 1000 + (s[1] - '0') * 100 + (s[2] - '0') * 10 + (s[3] - '0');
    m = static_cast<unsigned>((s[5] - '0') * 10 + (s[6] - '0'));
    d = static_cast<unsigned>((s[8] - '0') * 10 + (s[9] - '0'));
    std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                    std::chrono::day{d}};
    if (!ymd.ok()) return std::nullopt;
    return Date(std::chrono::sys_days{ymd});
  }

  std::chrono::sys_days days() const { return days_; }

  std::string str() const {
    std::chrono::year_month_day ymd{days_};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return buf;
  }

  /// ISO-8601 week key, e.g. "2023-W41".
  std::string iso_week_key() const {
    using namespace std::chrono;
    // The ISO year is the year containing the Thursday of this week.
    const weekday wd{days_};
    const int iso_wd = static_cast<int>(wd.iso_encoding());  // Mon=1..Sun=7
    const sys_days thursday = days_ + std::chrono::days{4 - iso_wd};
    const year iso_year = year_month_day{thursday}.year();
    const sys_days jan1{iso_year / January / 1};
    const int week = static_cast<int>((thursday - jan1).count()) / 7 + 1;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-W%02d", static_cast<int>(iso_year), week);
    return buf;
  }

  Date operator+(int n) const { return Date(days_ + std::chrono::days{n}); }

  friend auto operator<=>(const Date&, const Date&) = default;
  friend bool operator==(const Date&, const Date&) = default;

 private:
  std::chrono::sys_days days_{};
};

}  // namespace mindfuse
