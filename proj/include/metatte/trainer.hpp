#pragma once

// First-order meta-training over TTE-Tasks.
//
// Each iteration r in [1, eta) samples one task, runs k Adam steps on k fresh
// batches from that task starting from the shared parameters theta_1, and then
// moves the shared parameters toward the adapted ones:
//
//   theta <- theta_1 + beta * (1 - r / eta) * (theta_2 - theta_1)

#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "metatte/checkpoint.hpp"
#include "metatte/evaluation.hpp"
#include "metatte/model.hpp"
#include "metatte/params.hpp"
#include "metatte/rng.hpp"
#include "metatte/train_config.hpp"
#include "metatte/trajectory.hpp"

namespace metatte {

/// A task's training trajectories with its fitted scaler already applied.
struct PreparedTask {
  std::string task_id;
  Scaler scaler;
  std::vector<MetaTrajectory> train;
};

struct PreparedTasks {
  std::vector<PreparedTask> tasks;
  std::vector<std::string> warnings;

  std::map<std::string, Scaler> scalers() const {
    std::map<std::string, Scaler> m;
    for (const auto& t : tasks) m.emplace(t.task_id, t.scaler);
    return m;
  }
};

inline PreparedTasks prepare_tasks(const std::vector<TteTask>& tasks) {
  PreparedTasks out;
  for (const auto& t : tasks) {
    if (t.train.empty()) throw DegenerateInputError("task '" + t.task_id + "' has no training data");
    auto fit = feature_scaler_fit(t.train);
    out.warnings.insert(out.warnings.end(), fit.warnings.begin(), fit.warnings.end());
    PreparedTask p{t.task_id, fit.scaler, {}};
    p.train.reserve(t.train.size());
    for (const auto& m : t.train) p.train.push_back(feature_scaler_apply(fit.scaler, m));
    out.tasks.push_back(std::move(p));
  }
  return out;
}

/// Uniform task index.
inline std::size_t sample_task(std::size_t n_tasks, Rng& rng) {
  if (n_tasks == 0) throw ConfigError("cannot sample from an empty task list");
  return rng.index(n_tasks);
}

/// Uniform draw with replacement from the task's (scaled) training set.
inline Batch sample_batch(const PreparedTask& task, std::size_t batch_size, Rng& rng) {
  if (task.train.empty()) throw DegenerateInputError("task '" + task.task_id + "' has no training data");
  std::vector<const MetaTrajectory*> picks;
  picks.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) picks.push_back(&task.train[rng.index(task.train.size())]);
  return make_batch(picks, task.task_id);
}

inline std::vector<double> normalized_targets(const Batch& batch, const Scaler& scaler) {
  std::vector<double> z;
  z.reserve(batch.labels.size());
  for (double y : batch.labels) z.push_back(scaler.normalize_label(y));
  return z;
}

/// One forward/backward/Adam step on a batch; returns the pre-update loss.
inline double adam_train_step(const DedModel& model, ParameterStore& params, const Batch& batch,
                              const Scaler& scaler, const AdamConfig& adam) {
  Tape tape;
  const VarMap vars = params.bind(tape);
  const Var loss = model.loss(tape, vars, batch, normalized_targets(batch, scaler));
  tape.backward(loss);
  params.adam_step(params.gradients(tape), adam);
  return loss.value().item();
}

struct InnerResult {
  Snapshot before;  // theta_1
  Snapshot after;   // theta_2
  double mean_loss = 0.0;
};

/// k Adam steps from freshly reset moments. On a numeric failure the
/// parameters are restored to theta_1 and the NumericError is rethrown.
inline InnerResult inner_loop(const DedModel& model, ParameterStore& params, const PreparedTask& task,
                              const TrainConfig& cfg, Rng& rng) {
  if (cfg.k < 1) throw PreconditionError("inner loop needs k >= 1");
  InnerResult res;
  res.before = params.snapshot();
  params.reset_adam();
  double total = 0.0;
  try {
    for (std::size_t j = 0; j < cfg.k; ++j) {
      const Batch batch = sample_batch(task, cfg.batch_size, rng);
      total += adam_train_step(model, params, batch, task.scaler, cfg.adam);
    }
    // Adam itself can overflow without any op noticing.
    for (const auto& e : params.entries()) {
      if (!e.value.all_finite()) throw NumericError("non-finite parameter '" + e.name + "' after Adam");
    }
  } catch (const NumericError&) {
    params.load(res.before);
    throw;
  }
  res.after = params.snapshot();
  res.mean_loss = total / static_cast<double>(cfg.k);
  return res;
}

/// Scheduled meta step size beta * (1 - r / eta).
inline double meta_step_factor(std::size_t r, std::size_t eta, double beta) {
  return beta * (1.0 - static_cast<double>(r) / static_cast<double>(eta));
}

/// theta_f = theta_1 + beta * (1 - r / eta) * (theta_2 - theta_1)
inline Snapshot meta_update(const Snapshot& before, const Snapshot& after, std::size_t r, std::size_t eta,
                            double beta) {
  if (before.size() != after.size()) throw ConsistencyError("meta_update: snapshots differ in tensor count");
  if (r < 1 || r >= eta) {
    throw PreconditionError("meta_update: iteration " + std::to_string(r) + " outside [1, " +
                            std::to_string(eta) + ")");
  }
  const double s = meta_step_factor(r, eta, beta);
  Snapshot out = before;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const Tensor& a = before[i].second;
    const Tensor& b = after[i].second;
    if (before[i].first != after[i].first || a.shape() != b.shape()) {
      throw ConsistencyError("meta_update: '" + before[i].first + "' " + shape_str(a.shape()) +
                             " does not match '" + after[i].first + "' " + shape_str(b.shape()));
    }
    Tensor& f = out[i].second;
    for (std::size_t j = 0; j < a.size(); ++j) f[j] = a[j] + s * (b[j] - a[j]);
  }
  return out;
}

struct HistoryRow {
  std::size_t iteration = 0;
  std::string task_id;
  std::optional<double> train_loss;  // empty when the iteration was aborted
  std::optional<Metrics> val;
};

struct TrainResult {
  ParameterStore best;
  ParameterStore final_params;
  std::map<std::string, Scaler> scalers;
  std::vector<HistoryRow> history;
  std::optional<double> best_val_mae;
  std::size_t best_iteration = 0;
  std::size_t aborted_iterations = 0;
  std::vector<std::string> warnings;
};

/// Validation records belonging to the trained tasks.
inline Pool validation_pool(const std::vector<TteTask>& tasks) {
  Pool out;
  if (tasks.empty() || !tasks.front().val) return out;
  std::map<std::string, bool> known;
  for (const auto& t : tasks) known[t.task_id] = true;
  for (const auto& m : *tasks.front().val) {
    if (known.count(m.task_id)) out.push_back(m);
  }
  return out;
}

inline TrainResult train(const DedModel& model, const std::vector<TteTask>& tasks, const TrainConfig& cfg,
                         std::optional<ParameterStore> init = std::nullopt) {
  cfg.validate();
  if (tasks.empty()) throw ConfigError("no tasks to train on");
  PreparedTasks prepared = prepare_tasks(tasks);
  TrainResult res;
  res.scalers = prepared.scalers();
  res.warnings = prepared.warnings;

  ParameterStore params = init ? std::move(*init) : model.init_params(derive_seed(cfg.seed, "init"));
  Rng task_rng(derive_seed(cfg.seed, "task-sampler"));
  Rng batch_rng(derive_seed(cfg.seed, "batch-sampler"));
  const Pool val = validation_pool(tasks);

  auto save_best = [&](const ParameterStore& p) {
    if (cfg.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(cfg.checkpoint_dir);
    Checkpoint ck{model.config(), cfg, res.scalers, p, {{"best_iteration", res.best_iteration}}};
    checkpoint_save((std::filesystem::path(cfg.checkpoint_dir) / "best.mtte").string(), ck);
  };

  res.best = params;
  std::size_t consecutive_failures = 0;
  for (std::size_t r = 1; r < cfg.eta; ++r) {
    const PreparedTask& task = prepared.tasks[sample_task(prepared.tasks.size(), task_rng)];
    HistoryRow row{r, task.task_id, std::nullopt, std::nullopt};
    try {
      const InnerResult inner = inner_loop(model, params, task, cfg, batch_rng);
      params.load(meta_update(inner.before, inner.after, r, cfg.eta, cfg.beta));
      row.train_loss = inner.mean_loss;
      consecutive_failures = 0;
    } catch (const NumericError& e) {
      ++res.aborted_iterations;
      if (++consecutive_failures > cfg.max_consecutive_failures) {
        throw NumericError("training aborted: " + std::to_string(consecutive_failures) +
                           " consecutive numeric failures, last at iteration " + std::to_string(r) + ": " +
                           e.what());
      }
    }
    const bool last = r + 1 == cfg.eta;
    if (!val.empty() && (r % cfg.eval_every == 0 || last)) {
      try {
        row.val = overall_metrics(predict_pool(model, params, res.scalers, val));
      } catch (const NumericError& e) {
        res.warnings.push_back("validation at iteration " + std::to_string(r) + " failed: " + e.what());
      }
      if (row.val && (!res.best_val_mae || row.val->mae < *res.best_val_mae)) {
        res.best_val_mae = row.val->mae;
        res.best_iteration = r;
        res.best = params;
        save_best(params);
      }
    }
    res.history.push_back(std::move(row));
  }
  if (val.empty()) {
    res.best = params;
    res.best_iteration = cfg.eta > 1 ? cfg.eta - 1 : 0;
  }
  res.final_params = std::move(params);
  return res;
}

inline void write_history_csv(std::ostream& os, const std::vector<HistoryRow>& rows) {
  os << "iteration,task_id,train_loss,val_mae,val_mape,val_rmse\n";
  char buf[128];
  for (const auto& r : rows) {
    os << r.iteration << ',' << r.task_id << ',';
    if (r.train_loss) {
      std::snprintf(buf, sizeof buf, "%.10g", *r.train_loss);
      os << buf;
    }
    if (r.val) {
      std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f", r.val->mae, r.val->mape, r.val->rmse);
      os << buf;
    } else {
      os << ",,,";
    }
    os << '\n';
  }
}

}  // namespace metatte
