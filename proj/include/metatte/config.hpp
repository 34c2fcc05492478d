#pragma once

// Flat `key = value` run configuration with dotted section prefixes:
//
//   seed = 7
//   task.chengdu.min_time = 315
//   task.chengdu.train_dates = 2014-08-03..2014-08-16
//   model.cell = gru
//   train.eta = 7000
//
// Unknown keys are rejected.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <optional>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "metatte/error.hpp"
#include "metatte/model.hpp"
#include "metatte/synthetic.hpp"
#include "metatte/train_config.hpp"
#include "metatte/trajectory.hpp"

namespace metatte {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& source = "<config>") {
    KeyValueConfig cfg;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
      ++no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto body = detail::trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError(source + ":" + std::to_string(no) + ": expected 'key = value'");
      }
      const std::string key(detail::trim(body.substr(0, eq)));
      const std::string value(detail::trim(body.substr(eq + 1)));
      if (key.empty()) throw ConfigError(source + ":" + std::to_string(no) + ": empty key");
      if (cfg.values_.count(key)) throw ConfigError(source + ":" + std::to_string(no) + ": duplicate key '" + key + "'");
      cfg.values_[key] = value;
      cfg.order_.push_back(key);
    }
    return cfg;
  }

  static KeyValueConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    return parse(in, path);
  }

  static KeyValueConfig parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& raw(const std::string& key) const { return values_.at(key); }
  const std::vector<std::string>& keys() const { return order_; }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
  const auto d = parse_double(v);
  if (!d) throw ConfigError("key '" + key + "': '" + v + "' is not a number");
  return *d;
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto s = trim(v);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError("key '" + key + "': '" + v + "' is not a non-negative integer");
  }
  return out;
}

inline std::int64_t to_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  const auto s = trim(v);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
  return out;
}

inline std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (auto part : split(v, ',')) out.push_back(to_double(key, std::string(part)));
  return out;
}

inline DateRange to_date_range(const std::string& key, const std::string& v) {
  const auto pos = v.find("..");
  if (pos == std::string::npos) throw ConfigError("key '" + key + "': expected FIRST..LAST dates, got '" + v + "'");
  return DateRange{parse_date(v.substr(0, pos)), parse_date(v.substr(pos + 2))};
}

}  // namespace detail

/// Everything a CLI command may need, merged from one config file.
struct RunConfig {
  std::uint64_t seed = 0;
  std::vector<std::string> task_order;
  PreprocessConfig preprocess;
  std::map<std::string, DateRanges> dates;
  std::map<std::string, std::string> inputs;
  ModelConfig model;
  TrainConfig train;
  double eval_time_step = 120.0;
  double eval_distance_step = 1.0;
  std::vector<CitySpec> cities;
  std::map<std::string, std::size_t> city_trips;
  std::vector<std::string> keys;  // every key present in the source, in order

  bool has(const std::string& key) const { return std::find(keys.begin(), keys.end(), key) != keys.end(); }

  /// Fail early if an input path is missing.
  void check_paths() const {
    for (const auto& [id, path] : inputs) {
      if (!std::filesystem::exists(path)) throw IoError("task '" + id + "': input file '" + path + "' does not exist");
    }
  }

  static RunConfig from(const KeyValueConfig& kv) {
    RunConfig rc;
    rc.keys = kv.keys();
    bool train_seed_set = false;
    std::map<std::string, std::map<std::string, std::string>> task_keys, synth_keys;
    std::vector<std::string> synth_order;
    for (const auto& key : kv.keys()) {
      const std::string& v = kv.raw(key);
      const auto parts = detail::split(key, '.');
      auto unknown = [&] { return ConfigError("unknown config key '" + key + "'"); };
      if (key == "seed") {
        rc.seed = detail::to_uint(key, v);
      } else if (parts.size() == 3 && parts[0] == "task") {
        const std::string id(parts[1]);
        if (!task_keys.count(id)) rc.task_order.push_back(id);
        task_keys[id][std::string(parts[2])] = v;
      } else if (parts.size() == 3 && parts[0] == "synth") {
        const std::string id(parts[1]);
        if (!synth_keys.count(id)) synth_order.push_back(id);
        synth_keys[id][std::string(parts[2])] = v;
      } else if (parts.size() == 2 && parts[0] == "model") {
        const std::string f(parts[1]);
        if (f == "embed_dim") rc.model.embed_dim = detail::to_uint(key, v);
        else if (f == "rnn_units") rc.model.rnn_units = detail::to_uint(key, v);
        else if (f == "cell") rc.model.cell = parse_cell(v);
        else if (f == "variant") rc.model.variant = parse_variant(v);
        else if (f == "decoder_widths") {
          rc.model.decoder_widths.clear();
          for (double w : detail::to_doubles(key, v)) {
            if (w < 1 || w != std::floor(w)) throw ConfigError("key '" + key + "': widths must be positive integers");
            rc.model.decoder_widths.push_back(static_cast<std::size_t>(w));
          }
        } else throw unknown();
      } else if (parts.size() == 2 && parts[0] == "train") {
        const std::string f(parts[1]);
        if (f == "k") rc.train.k = detail::to_uint(key, v);
        else if (f == "batch_size") rc.train.batch_size = detail::to_uint(key, v);
        else if (f == "beta") rc.train.beta = detail::to_double(key, v);
        else if (f == "eta") rc.train.eta = detail::to_uint(key, v);
        else if (f == "seed") { rc.train.seed = detail::to_uint(key, v); train_seed_set = true; }
        else if (f == "eval_every") rc.train.eval_every = detail::to_uint(key, v);
        else if (f == "lr") rc.train.adam.lr = detail::to_double(key, v);
        else throw unknown();
      } else if (parts.size() == 2 && parts[0] == "eval") {
        const std::string f(parts[1]);
        if (f == "time_step_s") rc.eval_time_step = detail::to_double(key, v);
        else if (f == "distance_step_km") rc.eval_distance_step = detail::to_double(key, v);
        else throw unknown();
      } else {
        throw unknown();
      }
    }
    if (!train_seed_set) rc.train.seed = derive_seed(rc.seed, "train");

    for (const auto& id : rc.task_order) {
      const auto& f = task_keys[id];
      TaskThresholds th;
      std::size_t n_th = 0;
      std::optional<DateRange> tr, va, te;
      for (const auto& [name, v] : f) {
        const std::string key = "task." + id + "." + name;
        if (name == "min_time") { th.min_time = detail::to_double(key, v); ++n_th; }
        else if (name == "max_time") { th.max_time = detail::to_double(key, v); ++n_th; }
        else if (name == "min_dist") { th.min_dist = detail::to_double(key, v); ++n_th; }
        else if (name == "max_dist") { th.max_dist = detail::to_double(key, v); ++n_th; }
        else if (name == "utc_offset_s") th.utc_offset_s = detail::to_int(key, v);
        else if (name == "input") rc.inputs[id] = v;
        else if (name == "train_dates") tr = detail::to_date_range(key, v);
        else if (name == "val_dates") va = detail::to_date_range(key, v);
        else if (name == "test_dates") te = detail::to_date_range(key, v);
        else throw ConfigError("unknown config key '" + key + "'");
      }
      if (n_th > 0) {
        for (const char* k : {"min_time", "max_time", "min_dist", "max_dist"}) {
          if (!f.count(k)) throw ConfigError("task '" + id + "': missing threshold '" + k + "'");
        }
        th.validate(id);
        rc.preprocess.tasks[id] = th;
      }
      if (tr || va || te) {
        if (!(tr && va && te)) throw ConfigError("task '" + id + "': train_dates, val_dates and test_dates go together");
        DateRanges dr{*tr, *va, *te};
        dr.validate(id);
        rc.dates[id] = dr;
      }
    }

    for (const auto& id : synth_order) {
      CitySpec c;
      c.task_id = id;
      std::size_t trips = 2000;
      for (const auto& [name, v] : synth_keys[id]) {
        const std::string key = "synth." + id + "." + name;
        if (name == "center_lat") c.center_lat = detail::to_double(key, v);
        else if (name == "center_lon") c.center_lon = detail::to_double(key, v);
        else if (name == "mean_speed") c.mean_speed = detail::to_double(key, v);
        else if (name == "speed_sigma") c.speed_sigma = detail::to_double(key, v);
        else if (name == "min_km") c.min_km = detail::to_double(key, v);
        else if (name == "max_km") c.max_km = detail::to_double(key, v);
        else if (name == "interval_s") c.interval_s = detail::to_double(key, v);
        else if (name == "utc_offset_s") c.utc_offset_s = detail::to_int(key, v);
        else if (name == "start_date") c.start_date = parse_date(v);
        else if (name == "days") c.days = detail::to_uint(key, v);
        else if (name == "trips") trips = detail::to_uint(key, v);
        else if (name == "max_turn_deg") c.max_turn_deg = detail::to_double(key, v);
        else if (name == "hour_mult" || name == "weekday_mult") {
          const auto xs = detail::to_doubles(key, v);
          const std::size_t want = name == "hour_mult" ? kHours : kWeekdays;
          if (xs.size() != want) throw ConfigError("key '" + key + "' needs " + std::to_string(want) + " values");
          if (name == "hour_mult") std::copy(xs.begin(), xs.end(), c.hour_mult.begin());
          else std::copy(xs.begin(), xs.end(), c.weekday_mult.begin());
        } else throw ConfigError("unknown config key '" + key + "'");
      }
      c.validate();
      rc.cities.push_back(c);
      rc.city_trips[id] = trips;
    }
    return rc;
  }
};

/// Config text that preprocesses a generated corpus: thresholds, date ranges
/// and input paths for each city.
inline std::string synthetic_run_config(const std::vector<CitySpec>& cities,
                                        const std::map<std::string, std::string>& inputs, std::uint64_t seed) {
  std::ostringstream os;
  os << "# generated by `metatte synth`\n";
  os << "seed = " << seed << "\n";
  for (const auto& c : cities) {
    const TaskThresholds th = synthetic_thresholds(c);
    const DateRanges dr = synthetic_date_ranges(c);
    const std::string p = "task." + c.task_id + ".";
    os << p << "min_time = " << th.min_time << "\n"
       << p << "max_time = " << th.max_time << "\n"
       << p << "min_dist = " << th.min_dist << "\n"
       << p << "max_dist = " << th.max_dist << "\n"
       << p << "utc_offset_s = " << th.utc_offset_s << "\n"
       << p << "train_dates = " << format_date(dr.train.first) << ".." << format_date(dr.train.last) << "\n"
       << p << "val_dates = " << format_date(dr.val.first) << ".." << format_date(dr.val.last) << "\n"
       << p << "test_dates = " << format_date(dr.test.first) << ".." << format_date(dr.test.last) << "\n";
    auto it = inputs.find(c.task_id);
    if (it != inputs.end()) os << p << "input = " << it->second << "\n";
  }
  return os.str();
}

}  // namespace metatte
