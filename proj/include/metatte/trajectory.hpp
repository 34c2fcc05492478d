#pragma once

// GPS trajectory ingestion and preprocessing: parsing, the three keep/drop
// rules, conversion to per-segment delta rows, date splitting, task assembly
// and per-task feature standardisation.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "metatte/error.hpp"

namespace metatte {

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr std::size_t kWeekdays = 7;
inline constexpr std::size_t kHours = 24;

struct GpsPoint {
  double lat = 0.0;  // degrees
  double lon = 0.0;  // degrees
  double t = 0.0;    // unix seconds
};

inline bool valid_point(const GpsPoint& p) {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && std::isfinite(p.t) && p.lat >= -90.0 &&
         p.lat <= 90.0 && p.lon >= -180.0 && p.lon <= 180.0 && p.t >= 0.0;
}

struct RawTrajectory {
  std::string id;
  std::string task_id;
  std::vector<GpsPoint> points;
};

/// One segment of a trajectory: coordinate deltas to the next point plus the
/// calendar attributes of the segment's starting point.
struct MetaRow {
  double dlat = 0.0;
  double dlon = 0.0;
  int weekday = 0;  // 0 = Monday
  int hour = 0;
  double t = 0.0;

  friend bool operator==(const MetaRow&, const MetaRow&) = default;
};

struct MetaTrajectory {
  std::string id;
  std::string task_id;
  std::vector<MetaRow> rows;
  double label = 0.0;    // travel time, seconds
  double path_km = 0.0;  // cumulative great-circle length of the raw polyline

  std::size_t length() const { return rows.size(); }
  double start_time() const { return rows.empty() ? 0.0 : rows.front().t; }

  friend bool operator==(const MetaTrajectory&, const MetaTrajectory&) = default;
};

// ---------------------------------------------------------------------------
// Parsing

struct ParseOptions {
  bool has_header = false;
  char delimiter = ',';
};

struct ParseResult {
  std::vector<RawTrajectory> trajectories;
  std::size_t rows_read = 0;
  std::size_t skipped_rows = 0;
  std::vector<std::string> diagnostics;  // first few skip reasons
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

/// Read `traj_id, lat, lon, unix_seconds` rows. Rows are grouped by id in
/// order of first appearance and points are stably sorted by time. Malformed
/// or out-of-range rows are skipped and counted.
inline ParseResult parse_trajectories(std::istream& in, const std::string& task_id,
                                      const ParseOptions& opts = {}) {
  constexpr std::size_t kMaxDiagnostics = 20;
  ParseResult result;
  std::unordered_map<std::string, std::size_t> by_id;
  std::string line;
  std::size_t line_no = 0;
  bool header_pending = opts.has_header;
  auto skip = [&](const std::string& why) {
    ++result.skipped_rows;
    if (result.diagnostics.size() < kMaxDiagnostics) {
      result.diagnostics.push_back("line " + std::to_string(line_no) + ": " + why);
    }
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    ++result.rows_read;
    const auto fields = detail::split(line, opts.delimiter);
    if (fields.size() != 4) {
      skip("expected 4 fields, got " + std::to_string(fields.size()));
      continue;
    }
    const std::string id(detail::trim(fields[0]));
    const auto lat = detail::parse_double(fields[1]);
    const auto lon = detail::parse_double(fields[2]);
    const auto t = detail::parse_double(fields[3]);
    if (id.empty() || !lat || !lon || !t) {
      skip("non-numeric or missing field");
      continue;
    }
    const GpsPoint p{*lat, *lon, *t};
    if (!valid_point(p)) {
      skip("coordinate or timestamp out of range");
      continue;
    }
    auto [it, inserted] = by_id.emplace(id, result.trajectories.size());
    if (inserted) result.trajectories.push_back(RawTrajectory{id, task_id, {}});
    result.trajectories[it->second].points.push_back(p);
  }
  if (in.bad()) throw IoError("read error while parsing trajectories for task '" + task_id + "'");
  for (auto& traj : result.trajectories) {
    std::stable_sort(traj.points.begin(), traj.points.end(),
                     [](const GpsPoint& a, const GpsPoint& b) { return a.t < b.t; });
  }
  return result;
}

inline ParseResult parse_trajectories_file(const std::string& path, const std::string& task_id,
                                           const ParseOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory file '" + path + "'");
  return parse_trajectories(in, task_id, opts);
}

// ---------------------------------------------------------------------------
// Geometry

/// Great-circle distance on a sphere of radius 6371.0 km.
inline double haversine_km(const GpsPoint& a, const GpsPoint& b) {
  constexpr double kDegToRad = std::numbers::pi / 180.0;
  const double phi1 = a.lat * kDegToRad;
  const double phi2 = b.lat * kDegToRad;
  const double dphi = (b.lat - a.lat) * kDegToRad;
  const double dlambda = (b.lon - a.lon) * kDegToRad;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  h = std::clamp(h, 0.0, 1.0);
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

inline double path_length_km(const RawTrajectory& traj) {
  if (traj.points.size() < 2) {
    throw DegenerateInputError("path length of trajectory '" + traj.id + "' needs at least 2 points");
  }
  double total = 0.0;
  for (std::size_t j = 0; j + 1 < traj.points.size(); ++j) {
    total += haversine_km(traj.points[j], traj.points[j + 1]);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Preprocessing rules

/// Per-task keep window plus the civil-time offset used for weekday/hour.
struct TaskThresholds {
  double min_time = 0.0;  // seconds
  double max_time = 0.0;
  double min_dist = 0.0;  // kilometres
  double max_dist = 0.0;
  std::int64_t utc_offset_s = 0;

  void validate(const std::string& task_id) const {
    if (!(min_time > 0.0 && min_dist > 0.0 && min_time < max_time && min_dist < max_dist)) {
      throw ConfigError("task '" + task_id +
                        "': thresholds need 0 < min_time < max_time and 0 < min_dist < max_dist");
    }
  }
};

struct PreprocessConfig {
  std::map<std::string, TaskThresholds> tasks;

  const TaskThresholds& at(const std::string& task_id) const {
    auto it = tasks.find(task_id);
    if (it == tasks.end()) throw ConfigError("no preprocessing thresholds for task '" + task_id + "'");
    return it->second;
  }

  /// Table III values. Porto's distance floor follows the table (1.74 km).
  static PreprocessConfig paper_defaults() {
    PreprocessConfig cfg;
    cfg.tasks["chengdu"] = TaskThresholds{315.0, 1174.0, 1.84, 8.14, 8 * 3600};
    cfg.tasks["porto"] = TaskThresholds{315.0, 945.0, 1.74, 7.32, 0};
    return cfg;
  }
};

enum class Verdict { Keep, DropRule1Time, DropRule1Distance, DropRule2, DropRule3 };

inline const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Keep: return "keep";
    case Verdict::DropRule1Time: return "rule1_time";
    case Verdict::DropRule1Distance: return "rule1_distance";
    case Verdict::DropRule2: return "rule2";
    case Verdict::DropRule3: return "rule3";
  }
  return "?";
}

inline std::size_t distinct_coordinates(const RawTrajectory& traj) {
  std::set<std::pair<double, double>> seen;
  for (const auto& p : traj.points) seen.emplace(p.lat, p.lon);
  return seen.size();
}

/// Structural rules are checked before the Rule 1 windows, whose duration and
/// length are undefined on single-point or zero-duration trips.
inline Verdict apply_rules(const RawTrajectory& traj, const PreprocessConfig& cfg) {
  const TaskThresholds& th = cfg.at(traj.task_id);
  if (distinct_coordinates(traj) < 2) return Verdict::DropRule2;
  const double duration = traj.points.back().t - traj.points.front().t;
  if (!(duration > 0.0)) return Verdict::DropRule3;
  if (duration < th.min_time || duration > th.max_time) return Verdict::DropRule1Time;
  const double km = path_length_km(traj);
  if (km < th.min_dist || km > th.max_dist) return Verdict::DropRule1Distance;
  return Verdict::Keep;
}

// ---------------------------------------------------------------------------
// Delta representation

struct CalendarSlot {
  int weekday = 0;  // 0 = Monday
  int hour = 0;
};

inline std::int64_t local_day_number(double unix_seconds, std::int64_t utc_offset_s) {
  const auto local = static_cast<std::int64_t>(std::floor(unix_seconds)) + utc_offset_s;
  return local >= 0 ? local / 86400 : -((-local + 86399) / 86400);
}

inline CalendarSlot calendar_slot(double unix_seconds, std::int64_t utc_offset_s) {
  const auto local = static_cast<std::int64_t>(std::floor(unix_seconds)) + utc_offset_s;
  const std::int64_t day = local_day_number(unix_seconds, utc_offset_s);
  const std::int64_t second_of_day = local - day * 86400;
  // 1970-01-01 was a Thursday (Monday-based index 3).
  const auto weekday = static_cast<int>(((day + 3) % 7 + 7) % 7);
  return CalendarSlot{weekday, static_cast<int>(second_of_day / 3600)};
}

/// Row j carries point j+1 minus point j and the calendar slot of point j.
/// The label is the raw duration t_n - t_1.
inline MetaTrajectory to_meta_trajectory(const RawTrajectory& traj, std::int64_t utc_offset_s) {
  const auto& pts = traj.points;
  if (pts.size() < 2) {
    throw DegenerateInputError("trajectory '" + traj.id + "' needs at least 2 points");
  }
  MetaTrajectory out;
  out.id = traj.id;
  out.task_id = traj.task_id;
  out.rows.reserve(pts.size() - 1);
  for (std::size_t j = 0; j + 1 < pts.size(); ++j) {
    const CalendarSlot slot = calendar_slot(pts[j].t, utc_offset_s);
    out.rows.push_back(MetaRow{pts[j + 1].lat - pts[j].lat, pts[j + 1].lon - pts[j].lon,
                               slot.weekday, slot.hour, pts[j].t});
  }
  out.label = pts.back().t - pts.front().t;
  out.path_km = path_length_km(traj);
  return out;
}

// ---------------------------------------------------------------------------
// Date splitting

using Date = std::chrono::sys_days;

inline Date parse_date(std::string_view s) {
  s = detail::trim(s);
  int y = 0;
  unsigned m = 0, d = 0;
  auto bad = [&] { return ConfigError("invalid date '" + std::string(s) + "', expected YYYY-MM-DD"); };
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') throw bad();
  if (std::from_chars(s.data(), s.data() + 4, y).ec != std::errc() ||
      std::from_chars(s.data() + 5, s.data() + 7, m).ec != std::errc() ||
      std::from_chars(s.data() + 8, s.data() + 10, d).ec != std::errc()) {
    throw bad();
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw bad();
  return Date{ymd};
}

inline std::string format_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

/// Inclusive range of local calendar days.
struct DateRange {
  Date first;
  Date last;

  bool contains(Date d) const { return first <= d && d <= last; }
};

struct DateRanges {
  DateRange train, val, test;

  void validate(const std::string& task_id) const {
    for (const DateRange* r : {&train, &val, &test}) {
      if (r->first > r->last) {
        throw ConfigError("task '" + task_id + "': date range " + format_date(r->first) + ".." +
                          format_date(r->last) + " is reversed");
      }
    }
    if (!(train.last < val.first && val.last < test.first)) {
      throw ConfigError("task '" + task_id +
                        "': train/val/test date ranges must be disjoint and in that order");
    }
  }

  /// The Chengdu ranges, August 2014.
  static DateRanges chengdu() {
    return {{parse_date("2014-08-03"), parse_date("2014-08-16")},
            {parse_date("2014-08-21"), parse_date("2014-08-22")},
            {parse_date("2014-08-24"), parse_date("2014-08-29")}};
  }

  /// The Porto ranges, July 2013 to July 2014.
  static DateRanges porto() {
    return {{parse_date("2013-07-01"), parse_date("2014-02-28")},
            {parse_date("2014-03-01"), parse_date("2014-04-01")},
            {parse_date("2014-05-01"), parse_date("2014-07-01")}};
  }
};

struct Split {
  std::vector<MetaTrajectory> train, val, test;
  std::size_t discarded = 0;
};

/// Assign each trajectory by the local date of its first timestamp.
inline Split split_by_date(std::vector<MetaTrajectory> trajs, const DateRanges& ranges,
                           std::int64_t utc_offset_s, const std::string& task_id = "task") {
  ranges.validate(task_id);
  Split out;
  for (auto& m : trajs) {
    const Date day{std::chrono::days{local_day_number(m.start_time(), utc_offset_s)}};
    if (ranges.train.contains(day)) {
      out.train.push_back(std::move(m));
    } else if (ranges.val.contains(day)) {
      out.val.push_back(std::move(m));
    } else if (ranges.test.contains(day)) {
      out.test.push_back(std::move(m));
    } else {
      ++out.discarded;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tasks

using Pool = std::vector<MetaTrajectory>;

/// One city: its own training trajectories plus the validation and test pools
/// shared by every task (records keep their task_id tag).
struct TteTask {
  std::string task_id;
  std::vector<MetaTrajectory> train;
  std::shared_ptr<const Pool> val;
  std::shared_ptr<const Pool> test;
};

inline std::vector<TteTask> build_tasks(const std::vector<std::pair<std::string, Split>>& splits) {
  if (splits.empty()) throw DegenerateInputError("no tasks to build");
  auto val = std::make_shared<Pool>();
  auto test = std::make_shared<Pool>();
  std::set<std::string> seen;
  for (const auto& [id, s] : splits) {
    if (!seen.insert(id).second) throw ConfigError("task '" + id + "' listed twice");
    if (s.train.empty()) throw DegenerateInputError("task '" + id + "' has an empty train split");
    val->insert(val->end(), s.val.begin(), s.val.end());
    test->insert(test->end(), s.test.begin(), s.test.end());
  }
  std::vector<TteTask> tasks;
  for (const auto& [id, s] : splits) tasks.push_back(TteTask{id, s.train, val, test});
  return tasks;
}

// ---------------------------------------------------------------------------
// Feature scaling

inline constexpr double kVarianceFloor = 1e-12;

/// Per-task standardisation of coordinate deltas and travel-time labels.
struct Scaler {
  double dlat_mean = 0.0, dlat_std = 1.0;
  double dlon_mean = 0.0, dlon_std = 1.0;
  double label_mean = 0.0, label_std = 1.0;

  double normalize_label(double seconds) const { return (seconds - label_mean) / label_std; }
  double denormalize_label(double z) const { return z * label_std + label_mean; }

  friend bool operator==(const Scaler&, const Scaler&) = default;
};

struct ScalerFit {
  Scaler scaler;
  std::vector<std::string> warnings;
};

namespace detail {

struct MeanStd {
  double mean = 0.0;
  double std = 1.0;
  bool floored = false;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  if (*lo == *hi) {
    r.mean = *lo;
    r.std = std::sqrt(kVarianceFloor);
    r.floored = true;
    return r;
  }
  long double sum = 0.0L;
  for (double x : xs) sum += x;
  r.mean = static_cast<double>(sum / static_cast<long double>(xs.size()));
  long double ss = 0.0L;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  double var = static_cast<double>(ss / static_cast<long double>(xs.size()));
  if (var < kVarianceFloor) {
    var = kVarianceFloor;
    r.floored = true;
  }
  r.std = std::sqrt(var);
  return r;
}

}  // namespace detail

inline ScalerFit feature_scaler_fit(const std::vector<MetaTrajectory>& train) {
  if (train.empty()) throw DegenerateInputError("cannot fit a scaler on an empty training set");
  std::vector<double> dlat, dlon, labels;
  for (const auto& m : train) {
    for (const auto& r : m.rows) {
      dlat.push_back(r.dlat);
      dlon.push_back(r.dlon);
    }
    labels.push_back(m.label);
  }
  ScalerFit fit;
  const auto a = detail::mean_std(dlat);
  const auto b = detail::mean_std(dlon);
  const auto c = detail::mean_std(labels);
  fit.scaler = Scaler{a.mean, a.std, b.mean, b.std, c.mean, c.std};
  const std::string& task = train.front().task_id;
  if (a.floored) fit.warnings.push_back("task '" + task + "': latitude delta variance floored at 1e-12");
  if (b.floored) fit.warnings.push_back("task '" + task + "': longitude delta variance floored at 1e-12");
  if (c.floored) fit.warnings.push_back("task '" + task + "': label variance floored at 1e-12");
  return fit;
}

/// Standardise the coordinate deltas; weekday, hour, timestamps and label are untouched.
inline MetaTrajectory feature_scaler_apply(const Scaler& s, MetaTrajectory m) {
  for (auto& r : m.rows) {
    r.dlat = (r.dlat - s.dlat_mean) / s.dlat_std;
    r.dlon = (r.dlon - s.dlon_mean) / s.dlon_std;
  }
  return m;
}

}  // namespace metatte
