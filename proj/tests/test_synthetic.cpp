#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "support.hpp"

using namespace metatte;

namespace {

CitySpec flat_city(double speed, double sigma) {
  CitySpec c;
  c.task_id = "flat";
  c.center_lat = 10.0;
  c.center_lon = 20.0;
  c.mean_speed = speed;
  c.speed_sigma = sigma;
  return c;
}

double duration(const RawTrajectory& t) { return t.points.back().t - t.points.front().t; }

}  // namespace

TEST(Synthetic, StraightTripAtTenMetersPerSecond) {
  CitySpec c = flat_city(10.0, 0.0);
  c.max_turn_deg = 0.0;
  Rng rng(1);
  const auto trip = generate_trip(c, "s", 3.6, c.window_start_unix() + 3600, rng);
  EXPECT_NEAR(trip.oracle_seconds, 360.0, 1e-6);
  EXPECT_NEAR(duration(trip.trajectory), 360.0, 1e-6);
  EXPECT_NEAR(path_length_km(trip.trajectory), 3.6, 1e-8);
  // 3.6 km in 300 m steps.
  EXPECT_EQ(trip.trajectory.points.size(), 13u);

  // A due-north polyline of 3.6 km needs exactly 360 s by the oracle.
  RawTrajectory north{"n", "flat", {}};
  for (int i = 0; i <= 4; ++i) {
    north.points.push_back(GpsPoint{10.0 + i * 0.9 / kMetersPerDegree * 1000.0, 20.0, 1.4e9 + 90.0 * i});
  }
  EXPECT_NEAR(oracle_predictor(north, c), 360.0, 1e-9);
}

TEST(Synthetic, SameSeedSameCorpus) {
  const auto cities = two_city_preset();
  std::ostringstream a, b, c;
  write_points_csv(a, generate_city(cities[0], 50, 7));
  write_points_csv(b, generate_city(cities[0], 50, 7));
  write_points_csv(c, generate_city(cities[0], 50, 8));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str(), c.str());
}

TEST(Synthetic, CorporaArePrefixStable) {
  const auto spec = two_city_preset()[1];
  const auto small = generate_city(spec, 10, 3);
  const auto big = generate_city(spec, 30, 3);
  for (std::size_t i = 0; i < small.size(); ++i) {
    EXPECT_EQ(small[i].trajectory.points.back().t, big[i].trajectory.points.back().t);
  }
}

TEST(Synthetic, EmpiricalMeanSpeedMatchesSpec) {
  const CitySpec c = flat_city(12.0, 1.5);
  const std::size_t n = 10000;
  double sum = 0;
  for (const auto& trip : generate_city(c, n, 11)) {
    sum += path_length_km(trip.trajectory) * 1000.0 / duration(trip.trajectory);
  }
  const double mean = sum / static_cast<double>(n);
  EXPECT_NEAR(mean, c.mean_speed, 3.0 * c.speed_sigma / std::sqrt(static_cast<double>(n)));
}

TEST(Synthetic, NoiselessCorpusHasZeroOracleError) {
  auto c = two_city_preset()[0];
  c.speed_sigma = 0.0;
  for (const auto& trip : generate_city(c, 500, 2)) {
    EXPECT_NEAR(duration(trip.trajectory), trip.oracle_seconds, 1e-6 * trip.oracle_seconds);
    EXPECT_NEAR(oracle_predictor(trip.trajectory, c), trip.oracle_seconds, 1e-6 * trip.oracle_seconds);
  }
}

TEST(Synthetic, OracleErrorMatchesMonteCarloNoiseModel) {
  // Trip time is L / (v f) against the oracle's L / v, so the oracle's MAE is
  // E[L / v] * E|1 / f - 1| with f = max(0.2, 1 + (sigma / v) z).
  const CitySpec c = flat_city(10.0, 1.0);
  const std::size_t n = 100000;
  double corpus_mae = 0;
  for (const auto& trip : generate_city(c, n, 21)) corpus_mae += std::abs(duration(trip.trajectory) - trip.oracle_seconds);
  corpus_mae /= static_cast<double>(n);

  std::mt19937_64 eng(12345);
  std::normal_distribution<double> z;
  double noise = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = std::max(0.2, 1.0 + c.speed_sigma / c.mean_speed * z(eng));
    noise += std::abs(1.0 / f - 1.0);
  }
  noise /= static_cast<double>(n);
  const double expected = (c.min_km + c.max_km) / 2.0 * 1000.0 / c.mean_speed * noise;
  EXPECT_NEAR(corpus_mae, expected, 0.015 * expected) << "expected " << expected;
}

TEST(Synthetic, OracleIsAFloorOnNoiselessCorpora) {
  auto c = flat_city(9.0, 0.0);
  const auto trips = generate_city(c, 200, 4);
  std::vector<double> y, oracle, naive;
  for (const auto& t : trips) {
    y.push_back(duration(t.trajectory));
    oracle.push_back(oracle_predictor(t.trajectory, c));
    naive.push_back(path_length_km(t.trajectory) * 1000.0 / c.mean_speed * 1.05);
  }
  EXPECT_LT(mae(oracle, y), 1e-6);
  EXPECT_LE(mae(oracle, y), mae(naive, y));
}

TEST(Synthetic, OracleRejectsForeignCity) {
  const auto cities = two_city_preset();
  const auto trips = generate_city(cities[0], 1, 1);
  EXPECT_THROW(oracle_predictor(trips[0].trajectory, cities[1]), ConsistencyError);
}

TEST(Synthetic, PresetKeepRateAndDistinctTasks) {
  double means[2];
  for (std::size_t ci = 0; ci < 2; ++ci) {
    const auto c = two_city_preset()[ci];
    PreprocessConfig cfg;
    cfg.tasks[c.task_id] = synthetic_thresholds(c);
    const auto trips = generate_city(c, 2000, 5);
    std::size_t kept = 0;
    double sum = 0;
    for (const auto& t : trips) {
      if (apply_rules(t.trajectory, cfg) == Verdict::Keep) {
        ++kept;
        sum += duration(t.trajectory);
      }
    }
    EXPECT_GE(static_cast<double>(kept) / 2000.0, 0.95) << c.task_id;
    means[ci] = sum / static_cast<double>(kept);
  }
  EXPECT_GE(means[0] / means[1], 1.4) << means[0] << " vs " << means[1];
}

TEST(Synthetic, SequenceLengthsAndTurns) {
  for (const auto& c : two_city_preset()) {
    EXPECT_NEAR(c.mean_speed * c.interval_s, 240.0, 1e-9);
    for (const auto& trip : generate_city(c, 300, 6)) {
      const auto& pts = trip.trajectory.points;
      EXPECT_GE(pts.size(), 10u);
      EXPECT_LE(pts.size(), 31u);
      EXPECT_NEAR(haversine_km(pts[0], pts[1]), 0.24, 1e-9);
      const double endpoint = haversine_km(pts.front(), pts.back());
      EXPECT_LE(endpoint, path_length_km(trip.trajectory) + 1e-9);
    }
  }
}

TEST(Synthetic, TemporalMultipliersShapeTheOracle) {
  auto c = flat_city(10.0, 0.0);
  c.hour_mult[8] = 0.5;
  c.weekday_mult[0] = 2.0;
  const double t0 = c.window_start_unix();  // 2014-08-04 local midnight, a Monday
  EXPECT_DOUBLE_EQ(c.nominal_speed(t0 + 8 * 3600 + 60), 10.0 * 0.5 * 2.0);
  EXPECT_DOUBLE_EQ(c.nominal_speed(t0 + 86400 + 8 * 3600), 10.0 * 0.5);
  EXPECT_DOUBLE_EQ(c.nominal_speed(t0 + 86400 + 12 * 3600), 10.0);
}

TEST(Synthetic, CsvRoundTripsThroughTheParser) {
  const auto trips = generate_city(two_city_preset()[0], 20, 3);
  std::stringstream ss;
  write_points_csv(ss, trips);
  const auto parsed = parse_trajectories(ss, "slowtown");
  EXPECT_EQ(parsed.skipped_rows, 0u);
  ASSERT_EQ(parsed.trajectories.size(), trips.size());
  for (std::size_t i = 0; i < trips.size(); ++i) {
    EXPECT_EQ(parsed.trajectories[i].id, trips[i].trajectory.id);
    EXPECT_EQ(parsed.trajectories[i].points.size(), trips[i].trajectory.points.size());
    EXPECT_NEAR(path_length_km(parsed.trajectories[i]), path_length_km(trips[i].trajectory), 1e-5);
  }
  std::ostringstream oracle;
  write_oracle_csv(oracle, trips);
  EXPECT_EQ(oracle.str().substr(0, 24), "trip_id,oracle_seconds\ns");
}

TEST(Synthetic, InvalidSpecs) {
  CitySpec c = flat_city(10, 0);
  c.min_km = 5;
  c.max_km = 5;
  EXPECT_THROW(generate_city(c, 1, 0), ConfigError);
  c = flat_city(10, 0);
  c.hour_mult[3] = 0;
  EXPECT_THROW(generate_city(c, 1, 0), ConfigError);
  c = flat_city(-1, 0);
  EXPECT_THROW(generate_city(c, 1, 0), ConfigError);
  EXPECT_THROW(generate_city(flat_city(10, 0), 0, 0), PreconditionError);
}
