#pragma once

// Synthetic multi-city trip generator with a known noise-free travel time.
//
// A trip is a random-walk polyline whose segments are the distance a vehicle
// at the city's mean speed covers in one sampling interval. Timestamps advance
// by segment length / effective speed, where the effective speed is the mean
// speed scaled by the hour-of-day and day-of-week multipliers at departure and
// by a per-trip noise factor 1 + (sigma / mean) * z, z ~ N(0, 1).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "metatte/error.hpp"
#include "metatte/rng.hpp"
#include "metatte/trajectory.hpp"

namespace metatte {

struct CitySpec {
  std::string task_id;
  double center_lat = 0.0;
  double center_lon = 0.0;
  double mean_speed = 10.0;   // m/s
  double speed_sigma = 0.0;   // m/s
  std::array<double, kHours> hour_mult{};
  std::array<double, kWeekdays> weekday_mult{};
  double min_km = 2.0;
  double max_km = 7.0;
  double interval_s = 30.0;
  std::int64_t utc_offset_s = 0;
  Date start_date = parse_date("2014-08-04");
  std::size_t days = 28;
  double max_turn_deg = 30.0;
  double spread_km = 5.0;     // radius of trip origins around the centre

  CitySpec() {
    hour_mult.fill(1.0);
    weekday_mult.fill(1.0);
  }

  void validate() const {
    if (task_id.empty()) throw ConfigError("city spec needs a task id");
    if (!(mean_speed > 0.0) || speed_sigma < 0.0) throw ConfigError("city '" + task_id + "': invalid speed");
    for (double m : hour_mult) {
      if (!(m > 0.0)) throw ConfigError("city '" + task_id + "': hour multipliers must be positive");
    }
    for (double m : weekday_mult) {
      if (!(m > 0.0)) throw ConfigError("city '" + task_id + "': weekday multipliers must be positive");
    }
    if (!(min_km > 0.0 && min_km < max_km)) throw ConfigError("city '" + task_id + "': need 0 < min_km < max_km");
    if (!(interval_s > 0.0) || days == 0) throw ConfigError("city '" + task_id + "': invalid interval or days");
  }

  /// Noise-free speed for a departure at `unix_seconds`.
  double nominal_speed(double unix_seconds) const {
    const CalendarSlot slot = calendar_slot(unix_seconds, utc_offset_s);
    return mean_speed * hour_mult[static_cast<std::size_t>(slot.hour)] *
           weekday_mult[static_cast<std::size_t>(slot.weekday)];
  }

  double window_start_unix() const {
    return static_cast<double>(start_date.time_since_epoch().count() * 86400 - utc_offset_s);
  }
};

struct SyntheticTrip {
  RawTrajectory trajectory;
  double oracle_seconds = 0.0;
};

inline constexpr double kMetersPerDegree = kEarthRadiusKm * 1000.0 * std::numbers::pi / 180.0;

/// Great-circle destination `meters` from `p` along `bearing` (radians from north).
inline GpsPoint destination(const GpsPoint& p, double bearing, double meters) {
  constexpr double deg = std::numbers::pi / 180.0;
  const double delta = meters / (kEarthRadiusKm * 1000.0);
  const double phi1 = p.lat * deg, lam1 = p.lon * deg;
  const double phi2 = std::asin(std::sin(phi1) * std::cos(delta) + std::cos(phi1) * std::sin(delta) * std::cos(bearing));
  const double lam2 = lam1 + std::atan2(std::sin(bearing) * std::sin(delta) * std::cos(phi1),
                                        std::cos(delta) - std::sin(phi1) * std::sin(phi2));
  return GpsPoint{phi2 / deg, lam2 / deg, p.t};
}

/// One trip of `length_km` departing at `start`. Timestamps use the
/// great-circle length of each generated segment.
inline SyntheticTrip generate_trip(const CitySpec& spec, const std::string& id, double length_km, double start,
                                   Rng& rng) {
  start = std::floor(start);
  const double target_m = length_km * 1000.0;
  const double seg_m = spec.mean_speed * spec.interval_s;
  const double v0 = spec.nominal_speed(start);
  const double factor = std::max(0.2, 1.0 + spec.speed_sigma / spec.mean_speed * rng.normal());
  const double v = v0 * factor;
  const double turn = spec.max_turn_deg * std::numbers::pi / 180.0;

  // Origin uniformly inside a disc of spread_km around the centre.
  const double rr = spec.spread_km * 1000.0 * std::sqrt(rng.uniform());
  const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
  GpsPoint p{spec.center_lat + rr * std::sin(ang) / kMetersPerDegree, 0.0, start};
  p.lon = spec.center_lon + rr * std::cos(ang) / (kMetersPerDegree * std::cos(p.lat * std::numbers::pi / 180.0));

  SyntheticTrip trip;
  trip.trajectory.id = id;
  trip.trajectory.task_id = spec.task_id;
  trip.trajectory.points.push_back(p);
  double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  double covered = 0.0, path_km = 0.0;
  while (covered < target_m - 1e-9) {
    const double step = std::min(seg_m, target_m - covered);
    covered += step;
    heading += rng.uniform(-turn, turn);
    GpsPoint q = destination(p, heading, step);
    const double d_km = haversine_km(p, q);
    path_km += d_km;
    q.t = p.t + d_km * 1000.0 / v;
    trip.trajectory.points.push_back(q);
    p = q;
  }
  trip.oracle_seconds = path_km * 1000.0 / v0;
  return trip;
}

/// `n_trips` trips with departures uniform over the spec's date window.
/// Trip i draws from its own derived seed, so corpora are prefix-stable.
inline std::vector<SyntheticTrip> generate_city(const CitySpec& spec, std::size_t n_trips, std::uint64_t seed) {
  spec.validate();
  if (n_trips == 0) throw PreconditionError("generate_city needs n_trips >= 1");
  std::vector<SyntheticTrip> out;
  out.reserve(n_trips);
  const double window = static_cast<double>(spec.days) * 86400.0;
  const double t0 = spec.window_start_unix();
  for (std::size_t i = 0; i < n_trips; ++i) {
    Rng rng(derive_seed(derive_seed(seed, spec.task_id), i));
    const double start = t0 + rng.uniform(0.0, window);
    const double km = rng.uniform(spec.min_km, spec.max_km);
    char id[64];
    std::snprintf(id, sizeof id, "%s-%06zu", spec.task_id.c_str(), i);
    out.push_back(generate_trip(spec, id, km, start, rng));
  }
  return out;
}

/// Noise-free travel time of a generated trip: its path length over the
/// nominal speed at departure.
inline double oracle_predictor(const RawTrajectory& trip, const CitySpec& spec) {
  if (trip.task_id != spec.task_id) {
    throw ConsistencyError("trip '" + trip.id + "' belongs to '" + trip.task_id + "', not '" + spec.task_id + "'");
  }
  return path_length_km(trip) * 1000.0 / spec.nominal_speed(trip.points.front().t);
}

/// Point rows in the ingest format: traj_id,lat,lon,unix_seconds.
inline void write_points_csv(std::ostream& os, const std::vector<SyntheticTrip>& trips) {
  char buf[160];
  for (const auto& trip : trips) {
    for (const auto& p : trip.trajectory.points) {
      std::snprintf(buf, sizeof buf, "%s,%.9f,%.9f,%.3f\n", trip.trajectory.id.c_str(), p.lat, p.lon, p.t);
      os << buf;
    }
  }
}

inline void write_oracle_csv(std::ostream& os, const std::vector<SyntheticTrip>& trips) {
  char buf[128];
  os << "trip_id,oracle_seconds\n";
  for (const auto& trip : trips) {
    std::snprintf(buf, sizeof buf, "%s,%.6f\n", trip.trajectory.id.c_str(), trip.oracle_seconds);
    os << buf;
  }
}

/// Two cities with distinct speed regimes and temporal patterns. Sampling
/// intervals give both the same 240 m nominal segment, so trips of equal length
/// have equal point counts. Noise is set so the oracle's expected MAPE is about 5%.
inline std::vector<CitySpec> two_city_preset() {
  CitySpec slow;
  slow.task_id = "slowtown";
  slow.center_lat = 30.66;
  slow.center_lon = 104.06;
  slow.mean_speed = 8.0;
  slow.speed_sigma = 0.5;
  slow.interval_s = 30.0;
  slow.utc_offset_s = 8 * 3600;
  for (std::size_t h = 0; h < kHours; ++h) {
    if (h <= 5) slow.hour_mult[h] = 1.3;
    else if ((h >= 7 && h <= 9) || (h >= 17 && h <= 19)) slow.hour_mult[h] = 0.7;
    else slow.hour_mult[h] = 1.0;
  }
  slow.weekday_mult = {1.0, 1.0, 1.0, 1.0, 0.85, 1.15, 1.15};

  CitySpec fast;
  fast.task_id = "fastville";
  fast.center_lat = 41.15;
  fast.center_lon = -8.61;
  fast.mean_speed = 14.0;
  fast.speed_sigma = 0.875;
  fast.interval_s = 120.0 / 7.0;
  fast.utc_offset_s = 0;
  for (std::size_t h = 0; h < kHours; ++h) {
    if (h <= 6 || h >= 22) fast.hour_mult[h] = 1.25;
    else if ((h >= 8 && h <= 10) || (h >= 18 && h <= 20)) fast.hour_mult[h] = 0.75;
    else fast.hour_mult[h] = 1.0;
  }
  fast.weekday_mult = {0.95, 1.0, 1.0, 1.0, 0.9, 1.2, 1.25};
  return {slow, fast};
}

/// Keep windows and date ranges that admit the preset corpora: 20 training
/// days, 3 validation days, 5 test days.
inline TaskThresholds synthetic_thresholds(const CitySpec& spec) {
  return TaskThresholds{60.0, 3600.0, spec.min_km * 0.75, spec.max_km * 1.25, spec.utc_offset_s};
}

inline DateRanges synthetic_date_ranges(const CitySpec& spec) {
  using std::chrono::days;
  const auto d = [&](std::int64_t k) { return spec.start_date + days{k}; };
  const auto n = static_cast<std::int64_t>(spec.days);
  const std::int64_t train_end = n * 20 / 28 - 1;
  const std::int64_t val_end = n * 23 / 28 - 1;
  return DateRanges{{d(0), d(train_end)}, {d(train_end + 1), d(val_end)}, {d(val_end + 1), d(n - 1)}};
}

}  // namespace metatte
