#pragma once

// Task-set files: every TTE-Task's training trajectories plus the shared
// validation/test pools, stored in the MTTE container. Each trajectory's
// payload block is [label, path_km, (dlat, dlon, weekday, hour, t) * rows].

#include <memory>
#include <string>
#include <vector>

#include "metatte/container.hpp"
#include "metatte/trajectory.hpp"

namespace metatte {

struct TaskSet {
  std::vector<TteTask> tasks;
  PreprocessConfig preprocess;

  const Pool& val() const { return *tasks.at(0).val; }
  const Pool& test() const { return *tasks.at(0).test; }

  std::vector<std::string> task_ids() const {
    std::vector<std::string> ids;
    for (const auto& t : tasks) ids.push_back(t.task_id);
    return ids;
  }

  const TteTask& task(const std::string& id) const {
    for (const auto& t : tasks) {
      if (t.task_id == id) return t;
    }
    throw ConsistencyError("task set has no task '" + id + "'");
  }
};

namespace detail {

inline nlohmann::json encode_pool(const Pool& pool, std::vector<double>& payload) {
  auto arr = nlohmann::json::array();
  for (const auto& m : pool) {
    arr.push_back({{"id", m.id}, {"task_id", m.task_id}, {"rows", m.rows.size()}, {"offset", payload.size()}});
    payload.push_back(m.label);
    payload.push_back(m.path_km);
    for (const auto& r : m.rows) {
      payload.insert(payload.end(), {r.dlat, r.dlon, static_cast<double>(r.weekday),
                                     static_cast<double>(r.hour), r.t});
    }
  }
  return arr;
}

inline Pool decode_pool(const nlohmann::json& arr, const std::vector<double>& payload) {
  Pool pool;
  for (const auto& j : arr) {
    MetaTrajectory m;
    m.id = j.at("id").get<std::string>();
    m.task_id = j.at("task_id").get<std::string>();
    const auto rows = j.at("rows").get<std::size_t>();
    const auto off = j.at("offset").get<std::size_t>();
    if (off + 2 + 5 * rows > payload.size()) throw FormatError("task set record '" + m.id + "' exceeds payload");
    m.label = payload[off];
    m.path_km = payload[off + 1];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* p = payload.data() + off + 2 + 5 * r;
      m.rows.push_back(MetaRow{p[0], p[1], static_cast<int>(p[2]), static_cast<int>(p[3]), p[4]});
    }
    pool.push_back(std::move(m));
  }
  return pool;
}

}  // namespace detail

inline Container encode_task_set(const TaskSet& ts) {
  Container c;
  auto& mf = c.manifest;
  mf["kind"] = "taskset";
  mf["tasks"] = nlohmann::json::array();
  for (const auto& t : ts.tasks) {
    mf["tasks"].push_back({{"task_id", t.task_id}, {"train", detail::encode_pool(t.train, c.payload)}});
  }
  mf["val"] = detail::encode_pool(ts.tasks.empty() ? Pool{} : ts.val(), c.payload);
  mf["test"] = detail::encode_pool(ts.tasks.empty() ? Pool{} : ts.test(), c.payload);
  mf["thresholds"] = nlohmann::json::object();
  for (const auto& [id, th] : ts.preprocess.tasks) {
    mf["thresholds"][id] = {{"min_time", th.min_time}, {"max_time", th.max_time},
                            {"min_dist", th.min_dist}, {"max_dist", th.max_dist},
                            {"utc_offset_s", th.utc_offset_s}};
  }
  return c;
}

inline TaskSet decode_task_set(const Container& c) {
  const auto& mf = c.manifest;
  if (mf.value("kind", "") != "taskset") throw FormatError("container is not a task set");
  try {
    TaskSet ts;
    auto val = std::make_shared<Pool>(detail::decode_pool(mf.at("val"), c.payload));
    auto test = std::make_shared<Pool>(detail::decode_pool(mf.at("test"), c.payload));
    for (const auto& t : mf.at("tasks")) {
      ts.tasks.push_back(TteTask{t.at("task_id").get<std::string>(),
                                 detail::decode_pool(t.at("train"), c.payload), val, test});
    }
    for (const auto& [id, th] : mf.at("thresholds").items()) {
      ts.preprocess.tasks[id] =
          TaskThresholds{th.at("min_time").get<double>(), th.at("max_time").get<double>(),
                         th.at("min_dist").get<double>(), th.at("max_dist").get<double>(),
                         th.at("utc_offset_s").get<std::int64_t>()};
    }
    return ts;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed task set manifest: ") + e.what());
  }
}

inline void save_task_set(const std::string& path, const TaskSet& ts) {
  save_container(path, encode_task_set(ts));
}

inline TaskSet load_task_set(const std::string& path) { return decode_task_set(load_container(path)); }

}  // namespace metatte
