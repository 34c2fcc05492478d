#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "metatte/error.hpp"
#include "metatte/model.hpp"
#include "metatte/trajectory.hpp"

namespace metatte {

namespace detail {

inline void check_metric_inputs(std::span<const double> pred, std::span<const double> y, const char* name) {
  if (pred.size() != y.size()) {
    throw DimensionError(std::string(name) + ": " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(y.size()) + " labels");
  }
  if (y.empty()) throw DegenerateInputError(std::string(name) + " of zero records");
}

}  // namespace detail

/// Mean absolute error, seconds.
inline double mae(std::span<const double> pred, std::span<const double> y) {
  detail::check_metric_inputs(pred, y, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::fabs(pred[i] - y[i]);
  return s / static_cast<double>(y.size());
}

/// Mean absolute percentage error, percent. Labels must be positive.
inline double mape(std::span<const double> pred, std::span<const double> y) {
  detail::check_metric_inputs(pred, y, "mape");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(y[i] > 0.0)) throw PreconditionError("mape needs positive labels, got " + std::to_string(y[i]));
    s += std::fabs(pred[i] - y[i]) / y[i];
  }
  return 100.0 * s / static_cast<double>(y.size());
}

/// Root mean squared error, seconds.
inline double rmse(std::span<const double> pred, std::span<const double> y) {
  detail::check_metric_inputs(pred, y, "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (pred[i] - y[i]) * (pred[i] - y[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

struct Metrics {
  double mae = 0.0;
  double mape = 0.0;
  double rmse = 0.0;
};

inline Metrics compute_metrics(std::span<const double> pred, std::span<const double> y) {
  return Metrics{mae(pred, y), mape(pred, y), rmse(pred, y)};
}

/// One scored trajectory.
struct EvalRecord {
  std::string task_id;
  double label = 0.0;      // seconds
  double path_km = 0.0;
  double predicted = 0.0;  // seconds
};

struct MetricsReport {
  std::string scope;
  std::size_t n = 0;
  std::optional<Metrics> metrics;  // absent when n == 0
};

inline MetricsReport report_for(std::string scope, const std::vector<const EvalRecord*>& recs) {
  MetricsReport r{std::move(scope), recs.size(), std::nullopt};
  if (!recs.empty()) {
    std::vector<double> p, y;
    for (const auto* rec : recs) {
      p.push_back(rec->predicted);
      y.push_back(rec->label);
    }
    r.metrics = compute_metrics(p, y);
  }
  return r;
}

enum class BucketDimension { TravelTime, TravelDistance };

/// Half-open buckets [edges[i], edges[i+1]) plus one overflow bucket for
/// records outside every edge.
struct BucketSpec {
  BucketDimension dimension = BucketDimension::TravelTime;
  std::vector<double> edges;

  void validate() const {
    if (edges.size() < 2) throw ConfigError("a bucket spec needs at least two edges");
    for (std::size_t i = 1; i < edges.size(); ++i) {
      if (!(edges[i] > edges[i - 1])) throw ConfigError("bucket edges must be strictly increasing");
    }
  }

  /// Evenly spaced edges covering [lo, hi]; the last bucket contains hi.
  static BucketSpec uniform(BucketDimension dim, double lo, double hi, double step) {
    if (!(step > 0.0) || !(hi >= lo)) throw ConfigError("invalid bucket range or step");
    BucketSpec s{dim, {}};
    for (std::size_t i = 0;; ++i) {
      const double e = lo + step * static_cast<double>(i);
      s.edges.push_back(e);
      if (e > hi) break;
    }
    return s;
  }
};

inline std::string format_edge(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline std::vector<MetricsReport> bucketize(const std::vector<EvalRecord>& records, const BucketSpec& spec) {
  spec.validate();
  const bool by_time = spec.dimension == BucketDimension::TravelTime;
  const std::string prefix = by_time ? "time:" : "distance:";
  const std::size_t nb = spec.edges.size() - 1;
  std::vector<std::vector<const EvalRecord*>> groups(nb + 1);
  for (const auto& rec : records) {
    const double key = by_time ? rec.label : rec.path_km;
    const auto it = std::upper_bound(spec.edges.begin(), spec.edges.end(), key);
    const auto pos = static_cast<std::size_t>(it - spec.edges.begin());
    // pos in [1, nb] means edges[pos-1] <= key < edges[pos].
    groups[(pos >= 1 && pos <= nb) ? pos - 1 : nb].push_back(&rec);
  }
  std::vector<MetricsReport> out;
  for (std::size_t i = 0; i < nb; ++i) {
    out.push_back(report_for(prefix + "[" + format_edge(spec.edges[i]) + "," + format_edge(spec.edges[i + 1]) + ")",
                             groups[i]));
  }
  out.push_back(report_for(prefix + "overflow", groups[nb]));
  return out;
}

struct ReportSet {
  MetricsReport overall;
  std::vector<MetricsReport> per_task;
  std::vector<MetricsReport> buckets;

  std::vector<MetricsReport> rows() const {
    std::vector<MetricsReport> r{overall};
    r.insert(r.end(), per_task.begin(), per_task.end());
    r.insert(r.end(), buckets.begin(), buckets.end());
    return r;
  }
};

/// Overall, per-task (in first-appearance order) and bucketed reports.
inline ReportSet build_reports(const std::vector<EvalRecord>& records, const std::vector<BucketSpec>& buckets) {
  if (records.empty()) throw DegenerateInputError("cannot evaluate an empty pool");
  ReportSet rs;
  std::vector<const EvalRecord*> all;
  std::vector<std::string> order;
  std::map<std::string, std::vector<const EvalRecord*>> by_task;
  for (const auto& r : records) {
    all.push_back(&r);
    if (!by_task.count(r.task_id)) order.push_back(r.task_id);
    by_task[r.task_id].push_back(&r);
  }
  rs.overall = report_for("overall", all);
  for (const auto& id : order) rs.per_task.push_back(report_for("task:" + id, by_task[id]));
  for (const auto& spec : buckets) {
    auto b = bucketize(records, spec);
    rs.buckets.insert(rs.buckets.end(), b.begin(), b.end());
  }
  return rs;
}

/// Score every trajectory of `pool` with the scaler of its own task.
inline std::vector<EvalRecord> predict_pool(const DedModel& model, const ParameterStore& params,
                                            const std::map<std::string, Scaler>& scalers, const Pool& pool,
                                            std::size_t chunk = 256) {
  std::vector<EvalRecord> out(pool.size());
  std::map<std::string, std::vector<std::size_t>> by_task;
  for (std::size_t i = 0; i < pool.size(); ++i) by_task[pool[i].task_id].push_back(i);
  for (const auto& [task, idx] : by_task) {
    auto it = scalers.find(task);
    if (it == scalers.end()) throw ConsistencyError("no scaler for task '" + task + "'");
    const Scaler& sc = it->second;
    for (std::size_t start = 0; start < idx.size(); start += chunk) {
      const std::size_t end = std::min(idx.size(), start + chunk);
      std::vector<MetaTrajectory> scaled;
      for (std::size_t j = start; j < end; ++j) scaled.push_back(feature_scaler_apply(sc, pool[idx[j]]));
      const auto z = model.predict(params, make_batch(scaled, task));
      for (std::size_t j = start; j < end; ++j) {
        const auto& m = pool[idx[j]];
        out[idx[j]] = EvalRecord{m.task_id, m.label, m.path_km, sc.denormalize_label(z[j - start])};
      }
    }
  }
  return out;
}

inline ReportSet evaluate(const DedModel& model, const ParameterStore& params,
                          const std::map<std::string, Scaler>& scalers, const Pool& pool,
                          const std::vector<BucketSpec>& buckets) {
  if (pool.empty()) throw DegenerateInputError("cannot evaluate an empty pool");
  return build_reports(predict_pool(model, params, scalers, pool), buckets);
}

inline Metrics overall_metrics(const std::vector<EvalRecord>& recs) {
  std::vector<double> p, y;
  for (const auto& r : recs) {
    p.push_back(r.predicted);
    y.push_back(r.label);
  }
  return compute_metrics(p, y);
}

/// Default buckets: 120 s over the union of the tasks' time windows and
/// 1 km over their distance windows.
inline std::vector<BucketSpec> default_buckets(const PreprocessConfig& cfg, bool time, bool distance,
                                               double time_step = 120.0, double dist_step = 1.0) {
  if (cfg.tasks.empty()) throw ConfigError("no task thresholds to derive bucket edges from");
  double tlo = 1e300, thi = -1e300, dlo = 1e300, dhi = -1e300;
  for (const auto& [id, th] : cfg.tasks) {
    tlo = std::min(tlo, th.min_time);
    thi = std::max(thi, th.max_time);
    dlo = std::min(dlo, th.min_dist);
    dhi = std::max(dhi, th.max_dist);
  }
  std::vector<BucketSpec> out;
  if (time) out.push_back(BucketSpec::uniform(BucketDimension::TravelTime, tlo, thi, time_step));
  if (distance) out.push_back(BucketSpec::uniform(BucketDimension::TravelDistance, dlo, dhi, dist_step));
  return out;
}

inline void write_reports_csv(std::ostream& os, const std::vector<MetricsReport>& rows) {
  os << "scope,n,mae,mape,rmse\n";
  char buf[160];
  for (const auto& r : rows) {
    if (r.metrics) {
      std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f", r.n, r.metrics->mae, r.metrics->mape, r.metrics->rmse);
    } else {
      std::snprintf(buf, sizeof buf, "%zu,,,", r.n);
    }
    os << r.scope << ',' << buf << '\n';
  }
}

inline void write_reports_table(std::ostream& os, const std::vector<MetricsReport>& rows) {
  std::size_t w = 5;
  for (const auto& r : rows) w = std::max(w, r.scope.size());
  os << std::left << std::setw(static_cast<int>(w)) << "scope" << std::right << std::setw(8) << "n"
     << std::setw(12) << "MAE(s)" << std::setw(10) << "MAPE(%)" << std::setw(12) << "RMSE(s)" << '\n';
  os << std::string(w + 42, '-') << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(w)) << r.scope << std::right << std::setw(8) << r.n;
    if (r.metrics) {
      os << std::fixed << std::setprecision(2) << std::setw(12) << r.metrics->mae << std::setw(10)
         << r.metrics->mape << std::setw(12) << r.metrics->rmse;
      os.unsetf(std::ios::floatfield);
    } else {
      os << std::setw(12) << "-" << std::setw(10) << "-" << std::setw(12) << "-";
    }
    os << '\n';
  }
}

}  // namespace metatte
