#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "support.hpp"

using namespace metatte;

namespace {

std::vector<EvalRecord> random_records(std::size_t n, Rng& rng) {
  std::vector<EvalRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = rng.uniform(60, 3600);
    out.push_back(EvalRecord{i % 3 == 0 ? "a" : "b", y, rng.uniform(0.5, 12), y * rng.uniform(0.6, 1.4)});
  }
  return out;
}

}  // namespace

TEST(Metrics, PerfectPredictionIsZero) {
  const std::vector<double> y{120, 300, 901};
  const Metrics m = compute_metrics(y, y);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_EQ(m.mape, 0.0);
  EXPECT_EQ(m.rmse, 0.0);
}

TEST(Metrics, TwoRecordExample) {
  const Metrics m = compute_metrics(std::vector<double>{110, 180}, std::vector<double>{100, 200});
  EXPECT_NEAR(m.mae, 15.0, 1e-12);
  EXPECT_NEAR(m.mape, 10.0, 1e-12);
  EXPECT_NEAR(m.rmse, std::sqrt(250.0), 1e-12);
  EXPECT_NEAR(m.rmse, 15.8114, 1e-4);
}

TEST(Metrics, SingleRecordExample) {
  const Metrics m = compute_metrics(std::vector<double>{300}, std::vector<double>{400});
  EXPECT_NEAR(m.mae, 100.0, 1e-12);
  EXPECT_NEAR(m.mape, 25.0, 1e-12);
  EXPECT_NEAR(m.rmse, 100.0, 1e-12);
}

TEST(Metrics, InputErrors) {
  const std::vector<double> a{1, 2}, b{1};
  EXPECT_THROW(mae(a, b), DimensionError);
  EXPECT_THROW(mape(a, b), DimensionError);
  EXPECT_THROW(rmse(a, b), DimensionError);
  EXPECT_THROW(mae(std::vector<double>{}, std::vector<double>{}), DegenerateInputError);
  EXPECT_THROW(mape(std::vector<double>{1, 2}, std::vector<double>{3, 0}), PreconditionError);
  EXPECT_NO_THROW(mae(std::vector<double>{1, 2}, std::vector<double>{3, 0}));
}

TEST(Metrics, PowerMeanAndBruteForce) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(40);
    std::vector<double> p(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform(10, 5000);
      p[i] = rng.uniform(0, 6000);
    }
    const Metrics m = compute_metrics(p, y);
    EXPECT_LE(m.mae, m.rmse + 1e-12);
    EXPECT_GE(m.mae, 0.0);
    double a = 0, pct = 0, sq = 0;
    for (std::size_t i = 0; i < n; ++i) {
      a += std::abs(p[i] - y[i]);
      pct += std::abs(p[i] - y[i]) / y[i];
      sq += (p[i] - y[i]) * (p[i] - y[i]);
    }
    const double nn = static_cast<double>(n);
    EXPECT_NEAR(m.mae, a / nn, 1e-12 * std::max(1.0, m.mae));
    EXPECT_NEAR(m.mape, 100.0 * pct / nn, 1e-12 * std::max(1.0, m.mape));
    EXPECT_NEAR(m.rmse, std::sqrt(sq / nn), 1e-12 * std::max(1.0, m.rmse));
  }
}

TEST(Metrics, EqualAbsoluteErrorsGiveMaeEqualRmse) {
  const Metrics m = compute_metrics(std::vector<double>{110, 190, 310}, std::vector<double>{100, 200, 300});
  EXPECT_NEAR(m.mae, m.rmse, 1e-12);
}

TEST(Metrics, PermutationAndDuplicationInvariant) {
  Rng rng(2);
  auto recs = random_records(50, rng);
  const auto base = build_reports(recs, {}).overall.metrics.value();
  auto doubled = recs;
  doubled.insert(doubled.end(), recs.begin(), recs.end());
  std::reverse(doubled.begin(), doubled.end());
  const auto dup = build_reports(doubled, {}).overall.metrics.value();
  EXPECT_NEAR(dup.mae, base.mae, 1e-9);
  EXPECT_NEAR(dup.mape, base.mape, 1e-9);
  EXPECT_NEAR(dup.rmse, base.rmse, 1e-9);
}

TEST(Bucketize, HalfOpenConvention) {
  const BucketSpec spec{BucketDimension::TravelTime, {300, 600, 900}};
  const auto b = bucketize({EvalRecord{"a", 600, 1, 650}, EvalRecord{"a", 300, 1, 300}}, spec);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].scope, "time:[300,600)");
  EXPECT_EQ(b[0].n, 1u);
  EXPECT_EQ(b[1].scope, "time:[600,900)");
  EXPECT_EQ(b[1].n, 1u);
  EXPECT_NEAR(b[1].metrics->mae, 50.0, 1e-12);
  EXPECT_EQ(b[2].scope, "time:overflow");
  EXPECT_EQ(b[2].n, 0u);
  EXPECT_FALSE(b[2].metrics.has_value());
}

TEST(Bucketize, OutsideEdgesGoesToOverflow) {
  const BucketSpec spec{BucketDimension::TravelDistance, {1, 2, 3}};
  const auto b = bucketize({EvalRecord{"a", 100, 0.5, 100}, EvalRecord{"a", 100, 3.0, 100},
                            EvalRecord{"a", 100, 2.5, 100}},
                           spec);
  EXPECT_EQ(b[0].n, 0u);
  EXPECT_FALSE(b[0].metrics.has_value());
  EXPECT_EQ(b[1].n, 1u);
  EXPECT_EQ(b[2].scope, "distance:overflow");
  EXPECT_EQ(b[2].n, 2u);
}

TEST(Bucketize, PartitionAndWeightedMean) {
  Rng rng(3);
  const auto recs = random_records(500, rng);
  for (const auto& spec : {BucketSpec::uniform(BucketDimension::TravelTime, 60, 3000, 120),
                           BucketSpec::uniform(BucketDimension::TravelDistance, 1, 10, 1)}) {
    const auto b = bucketize(recs, spec);
    std::size_t total = 0;
    double weighted = 0;
    for (const auto& r : b) {
      total += r.n;
      if (r.metrics) weighted += static_cast<double>(r.n) * r.metrics->mae;
    }
    EXPECT_EQ(total, recs.size());
    const double overall = build_reports(recs, {}).overall.metrics->mae;
    EXPECT_NEAR(weighted / static_cast<double>(total), overall, 1e-9);
  }
}

TEST(Bucketize, InvalidEdges) {
  EXPECT_THROW(bucketize({}, BucketSpec{BucketDimension::TravelTime, {1}}), ConfigError);
  EXPECT_THROW(bucketize({}, BucketSpec{BucketDimension::TravelTime, {1, 1, 2}}), ConfigError);
  EXPECT_THROW(BucketSpec::uniform(BucketDimension::TravelTime, 0, 10, 0), ConfigError);
}

TEST(Bucketize, UniformEdgesCoverUpperBound) {
  const auto s = BucketSpec::uniform(BucketDimension::TravelTime, 60, 300, 120);
  EXPECT_EQ(s.edges, (std::vector<double>{60, 180, 300, 420}));
  const auto b = bucketize({EvalRecord{"a", 300, 1, 300}}, s);
  EXPECT_EQ(b[2].n, 1u);
}

TEST(Reports, RowCountsAndOrder) {
  Rng rng(4);
  const auto recs = random_records(60, rng);
  const std::vector<BucketSpec> specs{BucketSpec{BucketDimension::TravelTime, {0, 1000, 2000, 4000}},
                                      BucketSpec{BucketDimension::TravelDistance, {0, 5, 13}}};
  const auto rs = build_reports(recs, specs);
  const auto rows = rs.rows();
  EXPECT_EQ(rows.size(), 1u + 2u + (3u + 1u) + (2u + 1u));
  EXPECT_EQ(rows[0].scope, "overall");
  EXPECT_EQ(rows[1].scope, "task:a");
  EXPECT_EQ(rows[2].scope, "task:b");
  EXPECT_EQ(rows[0].n, 60u);
  EXPECT_EQ(rows[1].n + rows[2].n, 60u);
  EXPECT_THROW(build_reports({}, specs), DegenerateInputError);
}

TEST(Reports, CsvWritesEmptyMetricsAsBlank) {
  std::ostringstream os;
  write_reports_csv(os, {MetricsReport{"overall", 2, Metrics{1.5, 2, 3}}, MetricsReport{"time:overflow", 0, {}}});
  EXPECT_EQ(os.str(), "scope,n,mae,mape,rmse\noverall,2,1.500000,2.000000,3.000000\ntime:overflow,0,,,\n");
}

TEST(Reports, DefaultBucketsFollowThresholds) {
  PreprocessConfig cfg;
  cfg.tasks["a"] = TaskThresholds{60, 3600, 0.5, 10, 0};
  cfg.tasks["b"] = TaskThresholds{120, 1800, 1.0, 15, 0};
  const auto specs = default_buckets(cfg, true, true);
  ASSERT_EQ(specs.size(), 2u);
  EXPECT_EQ(specs[0].edges.front(), 60.0);
  EXPECT_EQ(specs[0].edges[1] - specs[0].edges[0], 120.0);
  EXPECT_GT(specs[0].edges.back(), 3600.0);
  EXPECT_EQ(specs[1].edges.front(), 0.5);
  EXPECT_GT(specs[1].edges.back(), 15.0);
  EXPECT_EQ(default_buckets(cfg, false, true).size(), 1u);
  EXPECT_THROW(default_buckets(PreprocessConfig{}, true, true), ConfigError);
}

TEST(Evaluate, ConstantPredictorMatchesAnalyticMeanAbsoluteDeviation) {
  // Constant speed and no noise: the label is path length over speed, so with
  // lengths uniform on [a, b] it is uniform on [a/v, b/v]; its mean absolute
  // deviation about the mean is (b - a) / (4 v).
  CitySpec c;
  c.task_id = "flat";
  c.mean_speed = 10.0;
  c.speed_sigma = 0.0;
  c.min_km = 2.0;
  c.max_km = 8.0;
  const auto train = generate_city(c, 20000, 1);
  const auto test = generate_city(c, 40000, 2);
  double mean = 0;
  for (const auto& t : train) mean += t.oracle_seconds;
  mean /= static_cast<double>(train.size());
  std::vector<EvalRecord> recs;
  for (const auto& t : test) {
    const double y = t.trajectory.points.back().t - t.trajectory.points.front().t;
    recs.push_back(EvalRecord{"flat", y, path_length_km(t.trajectory), mean});
  }
  const double analytic = (c.max_km - c.min_km) * 1000.0 / (4.0 * c.mean_speed);
  const double got = build_reports(recs, {}).overall.metrics->mae;
  EXPECT_NEAR(got, analytic, 0.01 * analytic) << "analytic " << analytic;
}

TEST(Evaluate, ModelReportStructureAndDeterminism) {
  const auto st = metatte::testing::synthetic_tasks(150, 9);
  const DedModel model(metatte::testing::small_model(4));
  const auto params = model.init_params(1);
  const auto scalers = prepare_tasks(st.tasks).scalers();
  const Pool& test = *st.tasks.front().test;
  const auto specs = default_buckets(st.preprocess, true, true);
  const auto a = evaluate(model, params, scalers, test, specs);
  const auto b = evaluate(model, params, scalers, test, specs);
  std::ostringstream sa, sb;
  write_reports_csv(sa, a.rows());
  write_reports_csv(sb, b.rows());
  EXPECT_EQ(sa.str(), sb.str());
  const std::size_t buckets = (specs[0].edges.size()) + (specs[1].edges.size());
  EXPECT_EQ(a.rows().size(), 1 + st.tasks.size() + buckets);

  Pool doubled = test;
  doubled.insert(doubled.end(), test.begin(), test.end());
  const auto d = evaluate(model, params, scalers, doubled, specs);
  EXPECT_NEAR(d.overall.metrics->mae, a.overall.metrics->mae, 1e-9);
  EXPECT_EQ(d.overall.n, 2 * a.overall.n);
  EXPECT_THROW(evaluate(model, params, scalers, Pool{}, specs), DegenerateInputError);
  EXPECT_THROW(evaluate(model, params, {}, test, specs), ConsistencyError);
}
