#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "rfn/recurrent/layers.hpp"

namespace rfn::nn {

// Diagonal Gaussian with softplus-positive scale. Rows index independent
// distributions sharing the same width.
struct GaussianParams {
  Var mean;
  Var scale;
};

struct LatentSample {
  Var z;
  RealArray noise;
  enum class Source { prior, posterior } source = Source::posterior;
};

// Maps concatenated conditioning blocks to (mean, softplus scale).
// Realizes both the conditional prior over z_t and the inference network.
class GaussianNet {
 public:
  GaussianNet() = default;
  GaussianNet(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t hidden,
              std::size_t width, Activation act, Rng& rng)
      : width_(width),
        net_(ps, name, in, hidden > 0 ? std::vector<std::size_t>{hidden}
                                       : std::vector<std::size_t>{},
             2 * width, act, rng) {}

  std::size_t width() const { return width_; }
  const Mlp& net() const { return net_; }

  GaussianParams forward(Tape& t, const std::vector<Var>& parts) const {
    Var raw = net_.forward(t, parts);
    return {diff::slice_cols(raw, 0, width_), diff::softplus(diff::slice_cols(raw, width_, 2 * width_))};
  }

 private:
  std::size_t width_ = 0;
  Mlp net_;
};

// z = mean + scale * noise; gradients reach mean and scale. A one-row
// distribution broadcasts over several noise rows (particles).
inline LatentSample reparam_sample(Tape& t, const GaussianParams& p, const RealArray& noise,
                                   LatentSample::Source source = LatentSample::Source::posterior) {
  if (noise.cols() != p.mean.cols() || (p.mean.rows() != 1 && p.mean.rows() != noise.rows())) {
    throw UsageError("reparam_sample: noise shape does not match the distribution width");
  }
  Var z = diff::add(p.mean, diff::mul(p.scale, t.constant(noise)));
  return {z, noise, source};
}

// Per-row log N(x; mean, diag(scale^2)) summed over the width: (R x 1).
inline Var gaussian_log_density(Var x, const GaussianParams& p) {
  using namespace diff;
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  Var u = div(sub(x, p.mean), p.scale);
  Var per_dim = sub(affine(mul(u, u), -0.5, -half_log_2pi), log(p.scale));
  return sum_cols(per_dim);
}

// Closed-form KL(q || p) between diagonal Gaussians, summed over the width.
inline Var kl_diag_gaussians(const GaussianParams& q, const GaussianParams& p) {
  using namespace diff;
  if (q.mean.cols() != p.mean.cols()) {
    throw UsageError("kl_diag_gaussians: widths differ");
  }
  Var ratio = div(q.scale, p.scale);
  Var d = div(sub(q.mean, p.mean), p.scale);
  // log(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2
  Var per_dim = add(affine(add(mul(ratio, ratio), mul(d, d)), 0.5, -0.5), -log(ratio));
  return sum_cols(per_dim);
}

}  // namespace rfn::nn
