#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "metatte/metatte.hpp"

namespace metatte::testing {

/// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero gradients from
/// turning rounding noise into huge relative errors.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::string worst;  // "name[index]"
  std::size_t checked = 0;
};

using LossBuilder = std::function<Var(Tape&, const std::map<std::string, Var>&)>;

/// Analytic gradients of `build` against central differences over every
/// element of every leaf.
inline GradCheck grad_check(const std::map<std::string, Tensor>& leaves, const LossBuilder& build,
                            double h = 1e-5, double floor = 1e-3) {
  std::map<std::string, Tensor> analytic;
  {
    Tape tape;
    std::map<std::string, Var> vars;
    for (const auto& [name, t] : leaves) vars.emplace(name, tape.variable(t, name));
    const Var loss = build(tape, vars);
    tape.backward(loss);
    for (const auto& [name, v] : vars) analytic.emplace(name, tape.grad(v));
  }
  auto eval = [&](const std::map<std::string, Tensor>& at) {
    Tape tape;
    std::map<std::string, Var> vars;
    for (const auto& [name, t] : at) vars.emplace(name, tape.constant(t));
    return build(tape, vars).value().item();
  };
  GradCheck out;
  std::map<std::string, Tensor> probe = leaves;
  for (const auto& [name, t] : leaves) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      Tensor& p = probe.at(name);
      const double x = p[i];
      p[i] = x + h;
      const double up = eval(probe);
      p[i] = x - h;
      const double down = eval(probe);
      p[i] = x;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic.at(name)[i], numeric, floor);
      ++out.checked;
      if (err > out.max_rel_err) {
        out.max_rel_err = err;
        out.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Scalar loss sum(out * weights) with fixed random weights, so every output
/// element contributes a distinct adjoint.
inline Var weighted_sum(Tape& tape, Var out, std::uint64_t seed) {
  Rng rng(seed);
  return ad::reduce_sum(ad::mul(out, tape.constant(random_tensor(out.shape(), rng))));
}

/// Preprocessed two-city synthetic task set built in memory.
struct SyntheticTasks {
  std::vector<CitySpec> cities;
  PreprocessConfig preprocess;
  std::vector<TteTask> tasks;
  std::map<std::string, double> oracle;  // trip id -> oracle seconds
};

inline SyntheticTasks synthetic_tasks(std::size_t trips_per_city, std::uint64_t seed,
                                      std::vector<CitySpec> cities = two_city_preset()) {
  SyntheticTasks out;
  out.cities = cities;
  std::vector<std::pair<std::string, Split>> splits;
  for (const auto& c : cities) out.preprocess.tasks[c.task_id] = synthetic_thresholds(c);
  for (const auto& c : cities) {
    std::vector<MetaTrajectory> kept;
    for (const auto& trip : generate_city(c, trips_per_city, seed)) {
      out.oracle[trip.trajectory.id] = trip.oracle_seconds;
      if (apply_rules(trip.trajectory, out.preprocess) == Verdict::Keep) {
        kept.push_back(to_meta_trajectory(trip.trajectory, c.utc_offset_s));
      }
    }
    splits.emplace_back(c.task_id, split_by_date(std::move(kept), synthetic_date_ranges(c), c.utc_offset_s, c.task_id));
  }
  out.tasks = build_tasks(splits);
  return out;
}

inline ModelConfig small_model(std::size_t d, CellKind cell = CellKind::GRU, Variant variant = Variant::Full) {
  ModelConfig m;
  m.embed_dim = d;
  m.rnn_units = d;
  m.cell = cell;
  m.variant = variant;
  m.decoder_widths = {2 * d, d};
  return m;
}

}  // namespace metatte::testing
