#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "rfn/diffcore/parameters.hpp"

namespace rfn::diff {

struct AdamState {
  long step_count = 0;
  std::map<std::string, RealArray> first_moment;
  std::map<std::string, RealArray> second_moment;
  double learning_rate = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Global gradient-norm clipping threshold; 0 disables clipping.
  double clip_norm = 0.0;
};

// Bias-corrected Adam descent step on every trainable parameter.
// Gradients are used as-is: callers minimizing -objective ascend the objective.
inline void adam_step(ParameterSet& params, AdamState& state) {
  double norm2 = 0.0;
  params.for_each([&](Parameter& p) {
    if (!p.trainable) return;
    if (!p.gradient.same_shape(p.value) || p.gradient.size() != p.value.size()) {
      throw UsageError("adam_step: missing gradient for parameter '" + p.id + "'");
    }
    for (double g : p.gradient.values()) norm2 += g * g;
  });
  double clip = 1.0;
  if (state.clip_norm > 0.0) {
    const double norm = std::sqrt(norm2);
    if (norm > state.clip_norm) clip = state.clip_norm / norm;
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  params.for_each([&](Parameter& p) {
    if (!p.trainable) return;
    auto& m = state.first_moment[p.id];
    auto& v = state.second_moment[p.id];
    if (!m.same_shape(p.value)) m = RealArray(p.value.rows(), p.value.cols());
    if (!v.same_shape(p.value)) v = RealArray(p.value.rows(), p.value.cols());
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = clip * p.gradient[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  });
}

// Reduce-on-plateau for a higher-is-better metric.
struct PlateauSchedule {
  long patience = 100;
  double factor = 0.1;
  double best_metric = -std::numeric_limits<double>::infinity();
  long epochs_since_improvement = 0;
};

// Returns true when the learning rate was reduced this epoch.
inline bool plateau_update(PlateauSchedule& sched, double metric, double& learning_rate) {
  if (metric > sched.best_metric) {
    sched.best_metric = metric;
    sched.epochs_since_improvement = 0;
    return false;
  }
  sched.epochs_since_improvement += 1;
  if (sched.epochs_since_improvement > sched.patience) {
    learning_rate *= sched.factor;
    sched.epochs_since_improvement = 0;
    return true;
  }
  return false;
}

}  // namespace rfn::diff
