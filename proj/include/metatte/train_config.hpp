#pragma once

#include <cstdint>
#include <string>

#include "metatte/error.hpp"
#include "metatte/params.hpp"

namespace metatte {

struct TrainConfig {
  std::size_t k = 10;            // inner Adam steps per meta-iteration
  std::size_t batch_size = 32;
  double beta = 0.1;             // meta step size
  std::size_t eta = 7000;        // iterations r run over [1, eta)
  std::uint64_t seed = 0;
  std::size_t eval_every = 100;
  AdamConfig adam;
  std::string checkpoint_dir;    // empty: keep the best parameters in memory only
  std::size_t max_consecutive_failures = 10;

  void validate() const {
    if (k < 1) throw PreconditionError("k must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(beta > 0.0)) throw ConfigError("beta must be positive");
    if (eta < 1) throw ConfigError("eta must be at least 1");
    if (eval_every < 1) throw ConfigError("eval_every must be at least 1");
    if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be positive");
  }

  friend bool operator==(const TrainConfig& a, const TrainConfig& b) {
    return a.k == b.k && a.batch_size == b.batch_size && a.beta == b.beta && a.eta == b.eta &&
           a.seed == b.seed && a.eval_every == b.eval_every && a.adam.lr == b.adam.lr;
  }
};

}  // namespace metatte
