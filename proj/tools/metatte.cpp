// metatte: preprocess, synth, train, evaluate and ablate from the command line.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3 I/O error.

#include <CLI11.hpp>

#include <cstdio>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "metatte/metatte.hpp"

namespace fs = std::filesystem;
using namespace metatte;

namespace {

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return RunConfig::from(KeyValueConfig{});
  return RunConfig::from(KeyValueConfig::parse_file(path));
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty()) return;
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file(path, text);
}

/// `id=path` pairs from repeated --input flags.
std::map<std::string, std::string> parse_assignments(const std::vector<std::string>& items, const char* flag) {
  std::map<std::string, std::string> out;
  for (const auto& s : items) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
      throw ConfigError(std::string(flag) + " expects TASK=PATH, got '" + s + "'");
    }
    out[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return out;
}

// ---------------------------------------------------------------- preprocess

struct PreprocessArgs {
  std::string config, out, report;
  std::vector<std::string> inputs;
  bool has_header = false;
  char delimiter = ',';
};

struct TaskCounts {
  std::string task_id;
  std::size_t rows_read = 0, rows_skipped = 0, trajectories = 0, kept = 0;
  std::map<Verdict, std::size_t> dropped;
  std::size_t train = 0, val = 0, test = 0, outside = 0;
};

int cmd_preprocess(const PreprocessArgs& a) {
  RunConfig rc = load_run_config(a.config);
  for (const auto& [id, path] : parse_assignments(a.inputs, "--input")) {
    if (std::find(rc.task_order.begin(), rc.task_order.end(), id) == rc.task_order.end()) rc.task_order.push_back(id);
    rc.inputs[id] = path;
  }
  std::vector<std::string> ids;
  for (const auto& id : rc.task_order) {
    if (rc.inputs.count(id)) ids.push_back(id);
  }
  if (ids.empty()) throw ConfigError("no task has an input file (set task.<id>.input or pass --input)");
  for (const auto& id : ids) {
    if (!rc.preprocess.tasks.count(id)) throw ConfigError("task '" + id + "': no thresholds configured");
    if (!rc.dates.count(id)) throw ConfigError("task '" + id + "': no train/val/test date ranges configured");
  }
  rc.check_paths();

  ParseOptions opts;
  opts.has_header = a.has_header;
  opts.delimiter = a.delimiter;
  std::vector<TaskCounts> counts;
  std::vector<std::pair<std::string, Split>> splits;
  for (const auto& id : ids) {
    const TaskThresholds& th = rc.preprocess.at(id);
    ParseResult parsed = parse_trajectories_file(rc.inputs.at(id), id, opts);
    for (const auto& d : parsed.diagnostics) std::cerr << "warning: " << id << ": " << d << '\n';
    TaskCounts c;
    c.task_id = id;
    c.rows_read = parsed.rows_read;
    c.rows_skipped = parsed.skipped_rows;
    c.trajectories = parsed.trajectories.size();
    std::vector<MetaTrajectory> kept;
    for (const auto& t : parsed.trajectories) {
      const Verdict v = apply_rules(t, rc.preprocess);
      if (v == Verdict::Keep) {
        kept.push_back(to_meta_trajectory(t, th.utc_offset_s));
      } else {
        ++c.dropped[v];
      }
    }
    c.kept = kept.size();
    Split s = split_by_date(std::move(kept), rc.dates.at(id), th.utc_offset_s, id);
    c.train = s.train.size();
    c.val = s.val.size();
    c.test = s.test.size();
    c.outside = s.discarded;
    counts.push_back(c);
    if (s.train.empty()) {
      std::cerr << "warning: task '" << id << "' has no training trajectories and is left out of the task set\n";
      continue;
    }
    splits.emplace_back(id, std::move(s));
  }

  std::ostringstream rep;
  rep << "task_id,rows_read,rows_skipped,trajectories,kept,drop_rule1_time,drop_rule1_distance,drop_rule2,"
         "drop_rule3,train,val,test,outside_dates\n";
  for (const auto& c : counts) {
    auto d = [&](Verdict v) { return c.dropped.count(v) ? c.dropped.at(v) : 0; };
    rep << c.task_id << ',' << c.rows_read << ',' << c.rows_skipped << ',' << c.trajectories << ',' << c.kept << ','
        << d(Verdict::DropRule1Time) << ',' << d(Verdict::DropRule1Distance) << ',' << d(Verdict::DropRule2) << ','
        << d(Verdict::DropRule3) << ',' << c.train << ',' << c.val << ',' << c.test << ',' << c.outside << '\n';
  }
  std::cout << rep.str();
  write_text(a.report, rep.str());

  if (splits.empty()) {
    std::cerr << "warning: no trajectories survived preprocessing; no task set written\n";
    return 0;
  }
  TaskSet ts;
  ts.tasks = build_tasks(splits);
  for (const auto& t : ts.tasks) ts.preprocess.tasks[t.task_id] = rc.preprocess.at(t.task_id);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  save_task_set(a.out, ts);
  std::cerr << "wrote " << a.out << " (" << ts.tasks.size() << " tasks, " << ts.val().size() << " val, "
            << ts.test().size() << " test)\n";
  return 0;
}

// --------------------------------------------------------------------- synth

struct SynthArgs {
  std::string config, out_dir;
  std::string preset = "two-city";
  std::size_t trips = 2000;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a, const CLI::App& sub) {
  std::vector<CitySpec> cities;
  std::map<std::string, std::size_t> trips;
  std::uint64_t seed = a.seed;
  if (!a.config.empty()) {
    const RunConfig rc = load_run_config(a.config);
    cities = rc.cities;
    trips = rc.city_trips;
    if (rc.has("seed") && sub.count("--seed") == 0) seed = rc.seed;
    if (cities.empty()) throw ConfigError("config '" + a.config + "' defines no synth.<city>.* cities");
  } else {
    if (a.preset != "two-city") throw ConfigError("unknown preset '" + a.preset + "' (expected two-city)");
    cities = two_city_preset();
  }
  for (const auto& c : cities) {
    if (sub.count("--trips") > 0 || !trips.count(c.task_id)) trips[c.task_id] = a.trips;
  }

  fs::create_directories(a.out_dir);
  std::map<std::string, std::string> inputs;
  for (const auto& c : cities) {
    const auto corpus = generate_city(c, trips.at(c.task_id), seed);
    std::ostringstream pts, oracle;
    write_points_csv(pts, corpus);
    write_oracle_csv(oracle, corpus);
    const fs::path base = fs::absolute(fs::path(a.out_dir));
    const std::string points_path = (base / (c.task_id + ".csv")).string();
    write_file(points_path, pts.str());
    write_file((base / (c.task_id + ".oracle.csv")).string(), oracle.str());
    inputs[c.task_id] = points_path;
    std::cerr << "wrote " << corpus.size() << " trips for '" << c.task_id << "'\n";
  }
  write_file((fs::path(a.out_dir) / "synth.cfg").string(), synthetic_run_config(cities, inputs, seed));
  std::cerr << "wrote " << (fs::path(a.out_dir) / "synth.cfg").string() << '\n';
  return 0;
}

// --------------------------------------------------------------------- train

/// Model and training flags shared by `train` and `ablate`. Each flag only
/// overrides the config file when given on the command line.
struct ModelTrainFlags {
  std::string cell = "gru", variant = "full", decoder_widths = "1024,512,256,64";
  std::size_t embed_dim = 64, rnn_units = 64, k = 10, batch_size = 32, eta = 7000, eval_every = 100;
  double beta = 0.1, lr = 1e-3;
  std::uint64_t seed = 0;

  void add_to(CLI::App& app, bool with_variant) {
    if (with_variant) {
      app.add_option("--cell", cell, "Recurrent cell: lstm, gru or bilstm")->capture_default_str();
      app.add_option("--variant", variant, "Model variant: full, wt (no temporal embeddings) or wa (mean fusion)")
          ->capture_default_str();
    }
    app.add_option("--embed-dim", embed_dim, "Embedding width D")->capture_default_str();
    app.add_option("--rnn-units", rnn_units, "Recurrent units n_r (must equal D)")->capture_default_str();
    app.add_option("--decoder-widths", decoder_widths, "Residual decoder widths, last must equal D")
        ->capture_default_str();
    app.add_option("--beta", beta, "Meta step size")->capture_default_str();
    app.add_option("--k", k, "Inner Adam steps per meta-iteration")->capture_default_str();
    app.add_option("--eta", eta, "Meta-iteration budget; iterations run over [1, eta)")->capture_default_str();
    app.add_option("--batch-size", batch_size, "Trajectories per inner batch")->capture_default_str();
    app.add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    app.add_option("--seed", seed, "Root seed for initialisation and sampling")->capture_default_str();
    app.add_option("--eval-every", eval_every, "Validate every N meta-iterations")->capture_default_str();
  }

  void apply(const CLI::App& app, ModelConfig& m, TrainConfig& t) const {
    auto given = [&](const char* flag) {
      const CLI::Option* o = app.get_option_no_throw(flag);
      return o != nullptr && o->count() > 0;
    };
    if (given("--cell")) m.cell = parse_cell(cell);
    if (given("--variant")) m.variant = parse_variant(variant);
    if (given("--embed-dim")) m.embed_dim = embed_dim;
    if (given("--rnn-units")) m.rnn_units = rnn_units;
    if (given("--decoder-widths")) {
      m.decoder_widths.clear();
      for (double w : detail::to_doubles("--decoder-widths", decoder_widths)) {
        if (w < 1 || w != std::floor(w)) throw ConfigError("--decoder-widths must be positive integers");
        m.decoder_widths.push_back(static_cast<std::size_t>(w));
      }
    }
    if (given("--beta")) t.beta = beta;
    if (given("--k")) t.k = k;
    if (given("--eta")) t.eta = eta;
    if (given("--batch-size")) t.batch_size = batch_size;
    if (given("--lr")) t.adam.lr = lr;
    if (given("--seed")) t.seed = seed;
    if (given("--eval-every")) t.eval_every = eval_every;
    m.validate();
    try {
      t.validate();
    } catch (const PreconditionError& e) {
      throw ConfigError(e.what());
    }
  }
};

/// Config-file view of the model and training settings; with no file the
/// defaults apply and the training seed is the root seed.
std::pair<ModelConfig, TrainConfig> base_configs(const std::string& config) {
  if (config.empty()) return {ModelConfig{}, TrainConfig{}};
  const RunConfig rc = load_run_config(config);
  return {rc.model, rc.train};
}

std::vector<TteTask> trainable_tasks(const TaskSet& ts) {
  if (ts.tasks.empty()) throw ConfigError("task set holds no tasks");
  return ts.tasks;
}

struct TrainOutcome {
  Checkpoint checkpoint;
  std::string history;
};

TrainOutcome run_training(const TaskSet& ts, const ModelConfig& mc, const TrainConfig& tc) {
  const DedModel model(mc);
  TrainResult res = train(model, trainable_tasks(ts), tc);
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  if (res.aborted_iterations > 0) std::cerr << "warning: " << res.aborted_iterations << " aborted iterations\n";
  nlohmann::json extra = {{"best_iteration", res.best_iteration}, {"task_ids", ts.task_ids()},
                          {"aborted_iterations", res.aborted_iterations}};
  if (res.best_val_mae) extra["best_val_mae"] = *res.best_val_mae;
  std::ostringstream hist;
  write_history_csv(hist, res.history);
  return {Checkpoint{mc, tc, res.scalers, std::move(res.best), extra}, hist.str()};
}

struct TrainArgs {
  std::string config, tasks, out, history;
  ModelTrainFlags flags;
};

int cmd_train(const TrainArgs& a, const CLI::App& sub) {
  auto [mc, tc] = base_configs(a.config);
  a.flags.apply(sub, mc, tc);
  const TaskSet ts = load_task_set(a.tasks);
  std::cerr << "training " << cell_name(mc.cell) << "/" << variant_name(mc.variant) << " on " << ts.tasks.size()
            << " tasks, eta " << tc.eta << ", k " << tc.k << ", seed " << tc.seed << '\n';
  const TrainOutcome out = run_training(ts, mc, tc);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  checkpoint_save(a.out, out.checkpoint);
  write_text(a.history, out.history);
  if (out.checkpoint.extra.contains("best_val_mae")) {
    std::cout << "best validation MAE " << out.checkpoint.extra["best_val_mae"].get<double>() << " s at iteration "
              << out.checkpoint.extra["best_iteration"].get<std::size_t>() << '\n';
  }
  return 0;
}

// ------------------------------------------------------------------ evaluate

struct EvaluateArgs {
  std::string checkpoint, tasks, config, report, buckets = "both", split = "test";
  std::vector<std::string> oracles;
};

/// Fail when the config names a model setting the checkpoint was not built with.
void check_model_matches(const RunConfig& rc, const ModelConfig& ck) {
  auto mismatch = [](const std::string& what, const std::string& cfg, const std::string& got) {
    return ConfigError("checkpoint " + what + " is " + got + " but the config says " + cfg);
  };
  const ModelConfig& m = rc.model;
  if (rc.has("model.embed_dim") && m.embed_dim != ck.embed_dim) {
    throw mismatch("embed_dim", std::to_string(m.embed_dim), std::to_string(ck.embed_dim));
  }
  if (rc.has("model.rnn_units") && m.rnn_units != ck.rnn_units) {
    throw mismatch("rnn_units", std::to_string(m.rnn_units), std::to_string(ck.rnn_units));
  }
  if (rc.has("model.cell") && m.cell != ck.cell) throw mismatch("cell", cell_name(m.cell), cell_name(ck.cell));
  if (rc.has("model.variant") && m.variant != ck.variant) {
    throw mismatch("variant", variant_name(m.variant), variant_name(ck.variant));
  }
  if (rc.has("model.decoder_widths") && m.decoder_widths != ck.decoder_widths) {
    throw ConfigError("checkpoint decoder widths differ from the config");
  }
}

std::map<std::string, double> read_oracle_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open oracle file '" + path + "'");
  std::map<std::string, double> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    if (++no == 1 || detail::trim(line).empty()) continue;
    const auto f = detail::split(line, ',');
    const auto v = f.size() == 2 ? detail::parse_double(f[1]) : std::nullopt;
    if (!v) throw FormatError(path + ":" + std::to_string(no) + ": expected trip_id,oracle_seconds");
    out[std::string(detail::trim(f[0]))] = *v;
  }
  return out;
}

int cmd_evaluate(const EvaluateArgs& a) {
  const RunConfig rc = load_run_config(a.config);
  const Checkpoint ck = checkpoint_load(a.checkpoint);
  check_model_matches(rc, ck.model);
  const TaskSet ts = load_task_set(a.tasks);
  if (ts.tasks.empty()) throw ConfigError("task set holds no tasks");
  const Pool& pool = a.split == "val" ? ts.val() : ts.test();
  for (const auto& m : pool) {
    if (!ck.scalers.count(m.task_id)) {
      throw ConfigError("checkpoint has no scaler for task '" + m.task_id + "' found in the task set");
    }
  }
  if (pool.empty()) throw DegenerateInputError("the " + a.split + " pool is empty");

  const bool time = a.buckets == "time" || a.buckets == "both";
  const bool dist = a.buckets == "distance" || a.buckets == "both";
  const auto buckets = (time || dist) ? default_buckets(ts.preprocess, time, dist, rc.eval_time_step,
                                                        rc.eval_distance_step)
                                      : std::vector<BucketSpec>{};
  const DedModel model(ck.model);
  const auto records = predict_pool(model, ck.params, ck.scalers, pool);
  std::vector<MetricsReport> rows = build_reports(records, buckets).rows();

  if (!a.oracles.empty()) {
    std::map<std::string, double> oracle;
    for (const auto& [task, path] : parse_assignments(a.oracles, "--oracle")) {
      for (const auto& [id, secs] : read_oracle_csv(path)) oracle[id] = secs;
    }
    std::vector<EvalRecord> floor;
    for (const auto& m : pool) {
      auto it = oracle.find(m.id);
      if (it != oracle.end()) floor.push_back(EvalRecord{m.task_id, m.label, m.path_km, it->second});
    }
    if (floor.empty()) throw ConsistencyError("no pool trajectory appears in the oracle files");
    ReportSet rs = build_reports(floor, {});
    for (auto r : rs.rows()) {
      if (r.scope.rfind("task:", 0) == 0 || r.scope == "overall") {
        r.scope = "oracle:" + r.scope;
        rows.push_back(r);
      }
    }
  }

  std::cout << "checkpoint " << a.checkpoint << " (" << cell_name(ck.model.cell) << "/"
            << variant_name(ck.model.variant) << ", D=" << ck.model.embed_dim << "), " << a.split << " pool\n";
  write_reports_table(std::cout, rows);
  if (!a.report.empty()) {
    std::ostringstream os;
    write_reports_csv(os, rows);
    write_text(a.report, os.str());
  }
  return 0;
}

// -------------------------------------------------------------------- ablate

struct AblateArgs {
  std::string config, tasks, out_dir;
  std::size_t max_runs = 0;
  ModelTrainFlags flags;
};

struct AblationRow {
  const char* name;
  CellKind cell;
  Variant variant;
};

constexpr AblationRow kAblationRows[] = {
    {"MetaTTE-WT", CellKind::LSTM, Variant::WithoutTemporal},
    {"MetaTTE-WA", CellKind::LSTM, Variant::WithoutAttention},
    {"MetaTTE-LSTM", CellKind::LSTM, Variant::Full},
    {"MetaTTE-BiLSTM", CellKind::BiLSTM, Variant::Full},
    {"MetaTTE-GRU", CellKind::GRU, Variant::Full},
};

/// A previous run's checkpoint is reused only if it was trained with the
/// same model and training settings.
std::optional<Checkpoint> completed_run(const fs::path& path, const ModelConfig& mc, const TrainConfig& tc) {
  if (!fs::exists(path)) return std::nullopt;
  try {
    Checkpoint ck = checkpoint_load(path.string());
    const auto& m = ck.model;
    if (m.embed_dim == mc.embed_dim && m.rnn_units == mc.rnn_units && m.cell == mc.cell && m.variant == mc.variant &&
        m.decoder_widths == mc.decoder_widths && ck.train == tc) {
      return ck;
    }
    std::cerr << "warning: " << path.string() << " was trained with other settings; retraining\n";
  } catch (const FormatError& e) {
    std::cerr << "warning: ignoring unreadable " << path.string() << ": " << e.what() << '\n';
  }
  return std::nullopt;
}

int cmd_ablate(const AblateArgs& a, const CLI::App& sub) {
  auto [base_mc, tc] = base_configs(a.config);
  a.flags.apply(sub, base_mc, tc);
  const TaskSet ts = load_task_set(a.tasks);
  fs::create_directories(a.out_dir);

  std::ostringstream csv;
  csv << "# seed " << tc.seed << '\n' << "variant,val_mae,val_mape,val_rmse,test_mae,test_mape,test_rmse\n";
  std::size_t trained = 0;
  bool complete = true;
  std::vector<std::pair<std::string, std::pair<Metrics, Metrics>>> results;
  for (const auto& row : kAblationRows) {
    ModelConfig mc = base_mc;
    mc.cell = row.cell;
    mc.variant = row.variant;
    const fs::path ck_path = fs::path(a.out_dir) / (std::string(row.name) + ".mtte");
    std::optional<Checkpoint> ck = completed_run(ck_path, mc, tc);
    if (ck) {
      std::cerr << row.name << ": reusing " << ck_path.string() << '\n';
    } else {
      if (a.max_runs > 0 && trained == a.max_runs) {
        complete = false;
        break;
      }
      std::cerr << row.name << ": training\n";
      TrainOutcome out = run_training(ts, mc, tc);
      write_file((fs::path(a.out_dir) / (std::string(row.name) + ".history.csv")).string(), out.history);
      checkpoint_save(ck_path.string(), out.checkpoint);
      ck = std::move(out.checkpoint);
      ++trained;
    }
    const DedModel model(ck->model);
    const Metrics val = overall_metrics(predict_pool(model, ck->params, ck->scalers, ts.val()));
    const Metrics test = overall_metrics(predict_pool(model, ck->params, ck->scalers, ts.test()));
    results.push_back({row.name, {val, test}});
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", row.name, val.mae, val.mape, val.rmse,
                  test.mae, test.mape, test.rmse);
    csv << buf;
  }
  if (!complete) {
    std::cerr << "stopped after " << trained << " training runs; rerun to continue\n";
    return 0;
  }
  write_file((fs::path(a.out_dir) / "ablation.csv").string(), csv.str());

  std::printf("ablation (shared seed %llu, eta %zu, k %zu, D %zu)\n", static_cast<unsigned long long>(tc.seed),
              tc.eta, tc.k, base_mc.embed_dim);
  std::printf("%-16s %10s %9s %10s %10s %9s %10s\n", "variant", "val MAE", "val MAPE", "val RMSE", "test MAE",
              "test MAPE", "test RMSE");
  for (const auto& [name, m] : results) {
    std::printf("%-16s %10.2f %9.2f %10.2f %10.2f %9.2f %10.2f\n", name.c_str(), m.first.mae, m.first.mape,
                m.first.rmse, m.second.mae, m.second.mape, m.second.rmse);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Keep freed tape buffers in the heap instead of returning them to the OS each step.
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Meta-learned travel time estimation over multi-city GPS trajectories"};
  app.require_subcommand(1);

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "Parse, filter and split raw trajectories into a task-set file");
  p->add_option("--config", pre.config, "Run config with task.<id>.* thresholds and date ranges")->required();
  p->add_option("--input", pre.inputs, "TASK=PATH raw point file; overrides task.<id>.input (repeatable)");
  p->add_flag("--has-header", pre.has_header, "Input files start with a header row");
  p->add_option("--delimiter", pre.delimiter, "Field delimiter")->capture_default_str();
  p->add_option("--out", pre.out, "Task-set file to write")->required();
  p->add_option("--report", pre.report, "Keep/drop report CSV to write (always printed)");

  SynthArgs syn;
  auto* s = app.add_subcommand("synth", "Generate a synthetic multi-city corpus with oracle travel times");
  s->add_option("--preset", syn.preset, "Built-in city set")->capture_default_str();
  s->add_option("--config", syn.config, "Config with synth.<city>.* keys; replaces the preset");
  s->add_option("--trips", syn.trips, "Trips per city")->capture_default_str();
  s->add_option("--seed", syn.seed, "Generator seed")->capture_default_str();
  s->add_option("--out-dir", syn.out_dir, "Directory for <city>.csv, <city>.oracle.csv and synth.cfg")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Meta-train one model over every task in a task set");
  t->add_option("--config", tr.config, "Run config with model.* and train.* keys");
  t->add_option("--tasks", tr.tasks, "Task-set file from `preprocess`")->required();
  t->add_option("--out", tr.out, "Checkpoint of the best-validation parameters")->required();
  t->add_option("--history", tr.history, "Per-iteration history CSV");
  tr.flags.add_to(*t, true);

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Report MAE/MAPE/RMSE overall, per task and per bucket");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint from `train`")->required();
  e->add_option("--tasks", ev.tasks, "Task-set file")->required();
  e->add_option("--config", ev.config, "Run config; model.* keys must match the checkpoint");
  e->add_option("--split", ev.split, "Pool to score")->check(CLI::IsMember({"val", "test"}))->capture_default_str();
  e->add_option("--buckets", ev.buckets, "Bucket families")
      ->check(CLI::IsMember({"none", "time", "distance", "both"}))
      ->capture_default_str();
  e->add_option("--oracle", ev.oracles, "TASK=PATH oracle sidecar; adds oracle floor rows (repeatable)");
  e->add_option("--report", ev.report, "Report CSV to write (table always printed)");

  AblateArgs ab;
  auto* b = app.add_subcommand("ablate", "Train and compare WT, WA, LSTM, BiLSTM and GRU variants");
  b->add_option("--config", ab.config, "Run config with model.* and train.* keys");
  b->add_option("--tasks", ab.tasks, "Task-set file")->required();
  b->add_option("--out-dir", ab.out_dir, "Directory for per-variant checkpoints, histories and ablation.csv")
      ->required();
  b->add_option("--max-runs", ab.max_runs, "Stop after training this many variants (0: no limit)")
      ->capture_default_str();
  ab.flags.add_to(*b, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*p) return cmd_preprocess(pre);
    if (*s) return cmd_synth(syn, *s);
    if (*t) return cmd_train(tr, *t);
    if (*e) return cmd_evaluate(ev);
    if (*b) return cmd_ablate(ab, *b);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return 2;
  } catch (const IoError& err) {
    std::cerr << "i/o error: " << err.what() << '\n';
    return 3;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 1;
}
