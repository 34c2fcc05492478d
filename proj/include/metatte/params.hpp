#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "metatte/autodiff.hpp"
#include "metatte/error.hpp"
#include "metatte/rng.hpp"
#include "metatte/tensor.hpp"

namespace metatte {

/// Xavier/Glorot uniform initialisation.
///
/// fan_in is the first extent and fan_out the last; a rank-1 shape uses
/// fan_in = 1 and fan_out = its length.
inline Tensor xavier_init(const Shape& shape, std::uint64_t seed) {
  if (shape.empty()) throw DimensionError("xavier_init needs at least one extent");
  const double fan_in = shape.size() == 1 ? 1.0 : static_cast<double>(shape.front());
  const double fan_out = static_cast<double>(shape.back());
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Rng rng(seed);
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

using Gradients = std::map<std::string, Tensor>;

/// Deep copy of parameter values only; Adam moments are not part of it.
using Snapshot = std::vector<std::pair<std::string, Tensor>>;

inline std::size_t snapshot_bytes(const Snapshot& s) {
  std::size_t n = 0;
  for (const auto& [name, t] : s) n += t.size() * sizeof(double);
  return n;
}

/// Ordered collection of named trainable tensors with their Adam state.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor m;  // first moment
    Tensor v;  // second moment
  };

  Tensor& add(const std::string& name, Tensor value) {
    if (index_.count(name)) throw ConsistencyError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    Tensor m(value.shape()), v(value.shape());
    entries_.push_back(Entry{name, std::move(value), std::move(m), std::move(v)});
    return entries_.back().value;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Tensor& get(const std::string& name) const { return entries_[lookup(name)].value; }
  Tensor& get(const std::string& name) { return entries_[lookup(name)].value; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::uint64_t adam_steps() const { return step_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

  /// Register every parameter on `tape` as a named differentiable leaf.
  std::map<std::string, Var> bind(Tape& tape) const {
    std::map<std::string, Var> vars;
    for (const auto& e : entries_) vars.emplace(e.name, tape.variable(e.value, e.name));
    return vars;
  }

  /// Gradients for every parameter; parameters the loss never touched get zeros.
  Gradients gradients(const Tape& tape) const {
    Gradients g;
    for (const auto& e : entries_) {
      g.emplace(e.name, tape.has_variable(e.name) ? tape.grad(e.name) : Tensor(e.value.shape()));
    }
    return g;
  }

  /// One bias-corrected Adam update of every parameter.
  void adam_step(const Gradients& grads, const AdamConfig& cfg = {}) {
    for (const auto& e : entries_) {
      auto it = grads.find(e.name);
      if (it == grads.end()) throw ConsistencyError("missing gradient for parameter '" + e.name + "'");
      if (it->second.shape() != e.value.shape()) {
        throw ConsistencyError("gradient shape " + shape_str(it->second.shape()) + " for '" +
                               e.name + "' does not match " + shape_str(e.value.shape()));
      }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
    for (auto& e : entries_) {
      const Tensor& g = grads.at(e.name);
      for (std::size_t i = 0; i < g.size(); ++i) {
        e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g[i];
        e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double m_hat = e.m[i] / bc1;
        const double v_hat = e.v[i] / bc2;
        e.value[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
      }
    }
  }

  /// Zero every moment and the step count.
  void reset_adam() {
    for (auto& e : entries_) {
      e.m.fill(0.0);
      e.v.fill(0.0);
    }
    step_ = 0;
  }

  Snapshot snapshot() const {
    Snapshot s;
    s.reserve(entries_.size());
    for (const auto& e : entries_) s.emplace_back(e.name, e.value);
    return s;
  }

  void load(const Snapshot& s) {
    if (s.size() != entries_.size()) {
      throw ConsistencyError("snapshot has " + std::to_string(s.size()) + " tensors, store has " +
                             std::to_string(entries_.size()));
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto& [name, t] = s[i];
      if (name != entries_[i].name || t.shape() != entries_[i].value.shape()) {
        throw ConsistencyError("snapshot entry '" + name + "' " + shape_str(t.shape()) +
                               " does not match parameter '" + entries_[i].name + "' " +
                               shape_str(entries_[i].value.shape()));
      }
    }
    for (std::size_t i = 0; i < s.size(); ++i) entries_[i].value = s[i].second;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConsistencyError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t step_ = 0;
};

}  // namespace metatte
