#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rfn/error.hpp"

namespace rfn::geo {

struct TripRecord {
  double event_time = 0.0;  // UTC seconds since the epoch
  double longitude = 0.0;
  double latitude = 0.0;
  std::optional<double> duration;  // seconds
  std::optional<std::string> user_id;
};

struct BoundingBox {
  double lon_min = 0.0;
  double lon_max = 1.0;
  double lat_min = 0.0;
  double lat_max = 1.0;

  void validate() const {
    if (!(lon_min < lon_max) || !(lat_min < lat_max)) {
      throw UsageError("bounding box requires lon_min < lon_max and lat_min < lat_max");
    }
  }
  bool contains(double lon, double lat) const {
    return lon >= lon_min && lon <= lon_max && lat >= lat_min && lat <= lat_max;
  }
  // Affine map onto the unit square.
  std::pair<double, double> normalize(double lon, double lat) const {
    return {(lon - lon_min) / (lon_max - lon_min), (lat - lat_min) / (lat_max - lat_min)};
  }
  std::pair<double, double> denormalize(double x, double y) const {
    return {lon_min + x * (lon_max - lon_min), lat_min + y * (lat_max - lat_min)};
  }
  // log of the Jacobian between degree space and the unit square; a density
  // in normalized coordinates minus this value is a density per square degree.
  double log_jacobian() const { return std::log((lon_max - lon_min) * (lat_max - lat_min)); }
};

// Column mapping for delimited trip files. Duration comes either from a
// duration column or from an end-time column paired with the event time.
struct TripSchema {
  std::string time_column = "time";
  std::string longitude_column = "longitude";
  std::string latitude_column = "latitude";
  std::optional<std::string> duration_column;
  std::optional<std::string> end_time_column;
  std::optional<std::string> user_column;
  char delimiter = ',';
};

struct ParseReport {
  std::vector<TripRecord> records;
  std::size_t skipped = 0;
  std::vector<std::size_t> skipped_lines;  // 1-based line numbers
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == delim) {
      out.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

// RFC 3339 ("2016-03-01T10:00:00Z", optional fraction and +hh:mm offset),
// the space-separated variant without zone (read as UTC), or epoch seconds.
inline std::optional<double> parse_timestamp(std::string_view s) {
  s = detail::trim(s);
  if (s.size() < 19 || s[4] != '-' || s[7] != '-') return detail::parse_double(s);
  auto y = detail::parse_int(s.substr(0, 4));
  auto mo = detail::parse_int(s.substr(5, 2));
  auto d = detail::parse_int(s.substr(8, 2));
  if (s[10] != 'T' && s[10] != 't' && s[10] != ' ') return std::nullopt;
  if (s[13] != ':' || s[16] != ':') return std::nullopt;
  auto hh = detail::parse_int(s.substr(11, 2));
  auto mm = detail::parse_int(s.substr(14, 2));
  auto ss = detail::parse_int(s.substr(17, 2));
  if (!y || !mo || !d || !hh || !mm || !ss) return std::nullopt;
  if (*hh > 23 || *mm > 59 || *ss > 60) return std::nullopt;
  using namespace std::chrono;
  const year_month_day ymd{year{*y}, month{static_cast<unsigned>(*mo)},
                           day{static_cast<unsigned>(*d)}};
  if (!ymd.ok()) return std::nullopt;
  double t = static_cast<double>(sys_days(ymd).time_since_epoch().count()) * 86400.0 +
             *hh * 3600.0 + *mm * 60.0 + *ss;
  std::string_view rest = s.substr(19);
  if (!rest.empty() && rest.front() == '.') {
    std::size_t n = 1;
    while (n < rest.size() && rest[n] >= '0' && rest[n] <= '9') ++n;
    if (n == 1) return std::nullopt;
    auto frac = detail::parse_double(std::string("0") + std::string(rest.substr(0, n)));
    if (!frac) return std::nullopt;
    t += *frac;
    rest.remove_prefix(n);
  }
  if (rest.empty() || rest == "Z" || rest == "z") return t;
  if (rest.size() == 6 && (rest[0] == '+' || rest[0] == '-') && rest[3] == ':') {
    auto oh = detail::parse_int(rest.substr(1, 2));
    auto om = detail::parse_int(rest.substr(4, 2));
    if (!oh || !om) return std::nullopt;
    const double offset = *oh * 3600.0 + *om * 60.0;
    return rest[0] == '+' ? t - offset : t + offset;
  }
  return std::nullopt;
}

// Reads delimited text with a header row. Rows that fail to parse are
// skipped and counted; a missing mandatory column rejects the whole input.
inline ParseReport parse_trips(std::istream& in, const TripSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("parse_trips: empty input (no header row)");
  const auto header = detail::split(line, schema.delimiter);
  auto column = [&](const std::string& name, bool mandatory) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    if (mandatory) throw DataError("parse_trips: missing column '" + name + "'");
    return std::nullopt;
  };
  const std::size_t ti = *column(schema.time_column, true);
  const std::size_t loi = *column(schema.longitude_column, true);
  const std::size_t lai = *column(schema.latitude_column, true);
  std::optional<std::size_t> di, ei, ui;
  if (schema.duration_column) di = column(*schema.duration_column, true);
  if (schema.end_time_column) ei = column(*schema.end_time_column, true);
  if (schema.user_column) ui = column(*schema.user_column, true);

  ParseReport report;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split(line, schema.delimiter);
    auto skip = [&] {
      ++report.skipped;
      report.skipped_lines.push_back(line_no);
    };
    auto field = [&](std::size_t i) -> std::string_view {
      return i < fields.size() ? fields[i] : std::string_view();
    };
    auto t = parse_timestamp(field(ti));
    auto lon = detail::parse_double(field(loi));
    auto lat = detail::parse_double(field(lai));
    if (!t || !lon || !lat || *lon < -180.0 || *lon > 180.0 || *lat < -90.0 || *lat > 90.0) {
      skip();
      continue;
    }
    TripRecord r{*t, *lon, *lat, std::nullopt, std::nullopt};
    if (di) {
      auto d = detail::parse_double(field(*di));
      if (!d || *d < 0.0) {
        skip();
        continue;
      }
      r.duration = *d;
    } else if (ei) {
      auto e = parse_timestamp(field(*ei));
      if (!e || *e < *t) {
        skip();
        continue;
      }
      r.duration = *e - *t;
    }
    if (ui) {
      const auto u = field(*ui);
      if (u.empty()) {
        skip();
        continue;
      }
      r.user_id = std::string(u);
    }
    report.records.push_back(std::move(r));
  }
  return report;
}

struct FilterOptions {
  BoundingBox box;
  std::optional<double> min_duration;
  std::optional<double> max_duration;
  std::optional<double> dedup_window;  // seconds; one record per user per window
};

struct FilterReport {
  std::vector<TripRecord> records;
  std::size_t removed_outside = 0;
  std::size_t removed_duration = 0;
  std::size_t removed_duplicate = 0;

  std::size_t removed() const { return removed_outside + removed_duration + removed_duplicate; }
};

// Keeps records inside the box, with duration in [min, max] when bounds are
// given, and at most one record per user per dedup window (a record is kept
// when at least `window` seconds passed since that user's last kept record).
// Records lacking a duration fail an active duration bound. Output keeps the
// input order.
inline FilterReport filter_records(const std::vector<TripRecord>& records,
                                   const FilterOptions& opt) {
  opt.box.validate();
  FilterReport report;
  std::vector<char> keep(records.size(), 1);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (!opt.box.contains(r.longitude, r.latitude)) {
      keep[i] = 0;
      ++report.removed_outside;
      continue;
    }
    if (opt.min_duration || opt.max_duration) {
      const bool ok = r.duration && (!opt.min_duration || *r.duration >= *opt.min_duration) &&
                      (!opt.max_duration || *r.duration <= *opt.max_duration);
      if (!ok) {
        keep[i] = 0;
        ++report.removed_duration;
      }
    }
  }
  if (opt.dedup_window) {
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return records[a].event_time < records[b].event_time;
    });
    std::map<std::string, double> last_kept;
    for (std::size_t i : order) {
      if (!keep[i] || !records[i].user_id) continue;
      const auto& uid = *records[i].user_id;
      auto it = last_kept.find(uid);
      if (it != last_kept.end() && records[i].event_time - it->second < *opt.dedup_window) {
        keep[i] = 0;
        ++report.removed_duplicate;
        continue;
      }
      last_kept[uid] = records[i].event_time;
    }
  }
  for (std::size_t i = 0; i < records.size(); ++i)
    if (keep[i]) report.records.push_back(records[i]);
  return report;
}

}  // namespace rfn::geo
