#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "rfn/recurrent/gaussian.hpp"

// Mixture density network emission over 2-D points. Each component has a
// lower-triangular Cholesky factor L = [[l11, 0], [l21, l22]] with positive
// diagonal; the diagonal variant fixes l21 = 0.

namespace rfn::models {

using diff::RealArray;
using diff::Tape;
using diff::Var;

struct MdnParams {
  std::vector<double> weights;
  std::vector<std::array<double, 2>> means;
  std::vector<std::array<double, 3>> factors;  // (l11, l21, l22)

  std::size_t size() const { return weights.size(); }

  void validate() const {
    const std::size_t K = weights.size();
    if (K == 0 || means.size() != K || factors.size() != K) {
      throw UsageError("mdn: mismatched component counts");
    }
    double s = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw UsageError("mdn: negative mixture weight");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-9) throw UsageError("mdn: mixture weights do not sum to 1");
    for (const auto& f : factors) {
      if (!(f[0] > 0.0) || !(f[2] > 0.0)) throw UsageError("mdn: non-positive Cholesky diagonal");
    }
  }
};

// log sum_k pi_k N(point; mu_k, L_k L_k^T) via log-sum-exp.
inline double mdn_log_prob(const std::array<double, 2>& point, const MdnParams& p) {
  p.validate();
  std::vector<double> terms;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p.weights[k] == 0.0) continue;
    const auto [l11, l21, l22] = p.factors[k];
    const double w1 = (point[0] - p.means[k][0]) / l11;
    const double w2 = (point[1] - p.means[k][1] - l21 * w1) / l22;
    const double lp = std::log(p.weights[k]) - std::log(2.0 * std::numbers::pi) -
                      std::log(l11) - std::log(l22) - 0.5 * (w1 * w1 + w2 * w2);
    terms.push_back(lp);
    best = std::max(best, lp);
  }
  double s = 0.0;
  for (double lp : terms) s += std::exp(lp - best);
  return best + std::log(s);
}

inline RealArray mdn_sample(const MdnParams& p, std::size_t n, Rng& rng) {
  p.validate();
  std::discrete_distribution<std::size_t> pick(p.weights.begin(), p.weights.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  RealArray out(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = pick(rng);
    const double e1 = normal(rng), e2 = normal(rng);
    const auto [l11, l21, l22] = p.factors[k];
    out(i, 0) = p.means[k][0] + l11 * e1;
    out(i, 1) = p.means[k][1] + l21 * e1 + l22 * e2;
  }
  return out;
}

// Network head: context -> K mixture weights, means and Cholesky factors.
// Output columns: [logits | mean x | mean y | raw l11 | raw l22 | l21 (full)],
// K columns each.
class MdnHead {
 public:
  MdnHead() = default;
  MdnHead(diff::ParameterSet& ps, const std::string& name, std::size_t context_width,
          std::size_t components, bool full, std::size_t hidden, std::size_t hidden_layers,
          nn::Activation act, Rng& rng)
      : K_(components),
        full_(full),
        net_(ps, name, context_width, std::vector<std::size_t>(hidden_layers, hidden),
             components * (full ? 6 : 5), act, rng) {}

  std::size_t components() const { return K_; }
  bool full() const { return full_; }

  // Per-point log-density (N x 1) of points (N x 2) under the mixture given
  // by each point's context row.
  Var log_prob(Tape& t, Var points, const nn::Context& context) const {
    using namespace diff;
    if (points.cols() != 2) throw UsageError("mdn_log_prob: points must have 2 columns");
    Var raw = net_.forward(t, context.value);
    Var logits = slice_cols(raw, 0, K_);
    Var log_w = sub(logits, logsumexp_cols(logits));
    Var l11 = softplus(slice_cols(raw, 3 * K_, 4 * K_));
    Var l22 = softplus(slice_cols(raw, 4 * K_, 5 * K_));
    const double log_2pi = std::log(2.0 * std::numbers::pi);
    Var constant = sub(sub(log_w, log(l11)), log(l22));
    Var x = slice_cols(points, 0, 1);
    Var y = slice_cols(points, 1, 2);
    Var w1 = div(sub(x, context.expand(slice_cols(raw, K_, 2 * K_))), context.expand(l11));
    Var dy = sub(y, context.expand(slice_cols(raw, 2 * K_, 3 * K_)));
    if (full_) dy = sub(dy, mul(context.expand(slice_cols(raw, 5 * K_, 6 * K_)), w1));
    Var w2 = div(dy, context.expand(l22));
    Var quad = affine(add(mul(w1, w1), mul(w2, w2)), -0.5, -log_2pi);
    return logsumexp_cols(add(quad, context.expand(constant)));
  }

  // Mixture parameters for a single context row.
  MdnParams params(Tape& t, Var context) const {
    using namespace diff;
    if (context.rows() != 1) throw UsageError("mdn params: expects one context row");
    const RealArray raw = net_.forward(t, context).value();
    MdnParams p;
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K_; ++k) m = std::max(m, raw[k]);
    double s = 0.0;
    for (std::size_t k = 0; k < K_; ++k) s += std::exp(raw[k] - m);
    for (std::size_t k = 0; k < K_; ++k) {
      p.weights.push_back(std::exp(raw[k] - m) / s);
      p.means.push_back({raw[K_ + k], raw[2 * K_ + k]});
      p.factors.push_back({diff::detail::softplus_value(raw[3 * K_ + k]),
                           full_ ? raw[5 * K_ + k] : 0.0,
                           diff::detail::softplus_value(raw[4 * K_ + k])});
    }
    // Renormalize against rounding so the simplex check holds to 1e-9.
    double total = 0.0;
    for (double w : p.weights) total += w;
    for (double& w : p.weights) w /= total;
    return p;
  }

 private:
  std::size_t K_ = 0;
  bool full_ = false;
  nn::Mlp net_;
};

}  // namespace rfn::models
