#pragma once

// Shared oracles for the test binaries: central finite differences and small
// fixtures built independently of the code under test.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "rfn/diffcore/primitives.hpp"
#include "rfn/random.hpp"

namespace rfn::test {

using diff::RealArray;

// Relative error with a scale floor: gradients below 1e-3 in magnitude are
// compared on an absolute scale of 1e-3, so 1e-4 relative means 1e-7
// absolute there (the roundoff level of a central difference at step 1e-5).
inline double grad_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradReport {
  double max_error = 0.0;
  std::string worst;
  std::size_t checked = 0;

  void add(double err, const std::string& where) {
    ++checked;
    if (err > max_error || !std::isfinite(err)) {
      max_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
      worst = where;
    }
  }
};

inline double inner(const RealArray& a, const RealArray& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Checks the pullback of one primitive against central differences of the
// scalar <w, op(inputs)> for a random cotangent w.
inline GradReport check_primitive(const std::string& op, const std::vector<RealArray>& inputs,
                                  const diff::PrimitiveOptions& opt, Rng& rng,
                                  double step = 1e-5) {
  const auto res = diff::primitive_forward_backward(op, inputs, opt);
  const RealArray w = normal_array(rng, res.output.rows(), res.output.cols());
  const std::vector<RealArray> grads = res.pullback(w);
  GradReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto shifted = [&](double h) {
        std::vector<RealArray> in = inputs;
        in[k][i] += h;
        return inner(w, diff::primitive_forward_backward(op, in, opt).output);
      };
      const double numeric = (shifted(step) - shifted(-step)) / (2.0 * step);
      report.add(grad_error(grads[k][i], numeric),
                 op + " input " + std::to_string(k) + " index " + std::to_string(i));
    }
  }
  return report;
}

// Checks accumulated parameter gradients against central differences of
// `objective`, on up to `per_tensor` randomly chosen entries of every
// trainable tensor. `backward` must zero and fill the parameter gradients
// of the same objective.
inline GradReport check_parameter_gradients(diff::ParameterSet& ps,
                                            const std::function<double()>& objective,
                                            const std::function<void()>& backward, Rng& rng,
                                            std::size_t per_tensor = 3, double step = 1e-5) {
  backward();
  GradReport report;
  ps.for_each([&](diff::Parameter& p) {
    if (!p.trainable) return;
    std::vector<std::size_t> idx(p.value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(per_tensor, idx.size()));
    for (std::size_t i : idx) {
      const double keep = p.value[i];
      p.value[i] = keep + step;
      const double up = objective();
      p.value[i] = keep - step;
      const double down = objective();
      p.value[i] = keep;
      report.add(grad_error(p.gradient[i], (up - down) / (2.0 * step)),
                 p.id + "[" + std::to_string(i) + "]");
    }
  });
  return report;
}

struct PrimitiveCase {
  std::vector<RealArray> inputs;
  diff::PrimitiveOptions options;
};

// Random inputs inside the domain of each primitive; `trial` varies shapes
// (broadcasting, axes) across calls.
inline PrimitiveCase primitive_case(const std::string& op, Rng& rng, std::size_t trial) {
  PrimitiveCase c;
  auto normal = [&](std::size_t r, std::size_t k) { return normal_array(rng, r, k); };
  auto away_from_zero = [&](std::size_t r, std::size_t k, double lo, double hi) {
    RealArray a = uniform_array(rng, r, k, lo, hi);
    for (double& v : a.values()) v = (std::uniform_int_distribution<int>(0, 1)(rng) ? v : -v);
    return a;
  };
  const bool broadcast = trial % 2 == 1;
  if (op == "matmul") {
    c.inputs = {normal(3, 4), normal(4, 2)};
  } else if (op == "add" || op == "subtract" || op == "multiply") {
    c.inputs = {normal(3, 4), normal(broadcast ? 1 : 3, 4)};
  } else if (op == "divide") {
    c.inputs = {normal(3, 4), away_from_zero(broadcast ? 1 : 3, 4, 0.5, 2.0)};
  } else if (op == "log") {
    c.inputs = {uniform_array(rng, 3, 4, 0.2, 3.0)};
  } else if (op == "relu") {
    c.inputs = {away_from_zero(3, 4, 0.1, 2.0)};
  } else if (op == "sum") {
    c.inputs = {normal(3, 4)};
    c.options.axis = static_cast<int>(trial % 3) - 1;
  } else if (op == "log-sum-exp") {
    c.inputs = {normal(3, 5)};
  } else if (op == "concatenate") {
    if (broadcast) {
      c.inputs = {normal(2, 3), normal(1, 3), normal(3, 3)};
      c.options.axis = 0;
    } else {
      c.inputs = {normal(3, 2), normal(3, 1), normal(3, 3)};
    }
  } else if (op == "slice") {
    c.inputs = {normal(4, 5)};
    c.options.axis = broadcast ? 0 : 1;
    c.options.begin = 1;
    c.options.end = broadcast ? 3 : 4;
  } else if (op == "elementwise-affine") {
    c.inputs = {normal(3, 4)};
    c.options.scale = 1.7;
    c.options.shift = -0.3;
  } else if (op == "gather") {
    c.inputs = {normal(3, 4)};
    c.options.index = {2, 0, 0, 1, 2};
  } else if (op == "segment-sum") {
    c.inputs = {normal(5, 3)};
    c.options.index = {1, 0, 1, 2, 1};
    c.options.segments = 3;
  } else {
    c.inputs = {normal(3, 4)};  // exp, tanh, sigmoid, softplus
  }
  return c;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rfn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace rfn::test
