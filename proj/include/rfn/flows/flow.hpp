#pragma once

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "rfn/recurrent/gaussian.hpp"

// Conditional normalizing flow over 2-D points.
//
// Generative direction (sampling):  b ~ N(mu_b(ctx), diag sigma_b(ctx)^2),
// x = T_L(...T_1(b)). Density direction: b = T^-1(x) and
// log p(x) = log p_b(b) + sum of inverse log-dets. Contexts broadcast over
// the point rows, so one (1 x C) context can condition N points; a Context
// with a row index conditions each point on its own group's row.

namespace rfn::flows {

using diff::Parameter;
using diff::ParameterSet;
using diff::RealArray;
using diff::Tape;
using diff::Var;
using nn::Activation;
using nn::Context;

enum class FlowMode { training, evaluation };

struct FlowConfig {
  std::size_t depth = 35;          // number of [coupling, norm, permutation] triplets
  std::size_t hidden = 128;        // width of the s/t/base networks
  std::size_t hidden_layers = 2;   // hidden layers per network
  double clamp = 5.0;              // |s| <= clamp via clamp * tanh(s_raw / clamp)
  double epsilon = 1e-5;           // normalization epsilon
  double momentum = 0.1;           // running-statistics momentum
  Activation activation = Activation::tanh;
};

// Output of one layer (or of the whole stack): the transformed points and
// the log |det J| of that transformation, one value per row (or 1 x 1 when
// it does not depend on the row).
struct Transformed {
  Var points;
  Var log_det;
};

class ConditionalBase {
 public:
  ConditionalBase() = default;
  ConditionalBase(ParameterSet& ps, const std::string& name, std::size_t context_width,
                  const FlowConfig& cfg, Rng& rng)
      : net_(ps, name, context_width, std::vector<std::size_t>(cfg.hidden_layers, cfg.hidden), 4,
             cfg.activation, rng) {}

  const nn::Mlp& net() const { return net_; }

  nn::GaussianParams params(Tape& t, const Context& context) const {
    Var raw = net_.forward(t, context.value);
    return {context.expand(diff::slice_cols(raw, 0, 2)),
            context.expand(diff::softplus(diff::slice_cols(raw, 2, 4)))};
  }

 private:
  nn::Mlp net_;
};

// Affine coupling with split d = 1: the first coordinate conditions the
// scale/translation of the second.
class ConditionalCoupling {
 public:
  ConditionalCoupling() = default;
  ConditionalCoupling(ParameterSet& ps, const std::string& name, std::size_t context_width,
                      const FlowConfig& cfg, Rng& rng)
      : clamp_(cfg.clamp),
        scale_net_(ps, name + ".s", 1 + context_width,
                   std::vector<std::size_t>(cfg.hidden_layers, cfg.hidden), 1, cfg.activation, rng),
        translate_net_(ps, name + ".t", 1 + context_width,
                       std::vector<std::size_t>(cfg.hidden_layers, cfg.hidden), 1, cfg.activation,
                       rng) {}

  const nn::Mlp& scale_net() const { return scale_net_; }
  const nn::Mlp& translate_net() const { return translate_net_; }
  double clamp() const { return clamp_; }

  // b -> x: x1 = b1, x2 = (b2 - t) exp(-s); log_det = -s.
  Transformed forward(Tape& t, Var b, const Context& context) const {
    using namespace diff;
    Var b1 = slice_cols(b, 0, 1);
    Var b2 = slice_cols(b, 1, 2);
    auto [s, shift] = scale_shift(t, b1, context);
    Var x2 = mul(sub(b2, shift), exp(-s));
    return {concat_cols({b1, x2}), -s};
  }

  // x -> b: b1 = x1, b2 = x2 exp(s) + t; log_det = +s.
  Transformed inverse(Tape& t, Var x, const Context& context) const {
    using namespace diff;
    Var x1 = slice_cols(x, 0, 1);
    Var x2 = slice_cols(x, 1, 2);
    auto [s, shift] = scale_shift(t, x1, context);
    Var b2 = add(mul(x2, exp(s)), shift);
    return {concat_cols({x1, b2}), s};
  }

 private:
  std::pair<Var, Var> scale_shift(Tape& t, Var cond, const Context& context) const {
    std::vector<Context> parts{Context(cond)};
    if (context.value.valid() && context.cols() > 0) parts.push_back(context);
    Var raw = scale_net_.forward_parts(t, parts);
    Var s = diff::affine(diff::tanh(diff::affine(raw, 1.0 / clamp_)), clamp_);
    return {s, translate_net_.forward_parts(t, parts)};
  }

  double clamp_ = 5.0;
  nn::Mlp scale_net_;
  nn::Mlp translate_net_;
};

// Batch normalization inside the flow. The density direction normalizes,
// the generative direction de-normalizes with running statistics.
class FlowNorm {
 public:
  FlowNorm() = default;
  FlowNorm(ParameterSet& ps, const std::string& name, const FlowConfig& cfg)
      : epsilon_(cfg.epsilon), momentum_(cfg.momentum) {
    running_mean_ = &ps.add(name + ".running_mean", RealArray(1, 2, 0.0), false);
    running_var_ = &ps.add(name + ".running_var", RealArray(1, 2, 1.0), false);
  }

  const RealArray& running_mean() const { return running_mean_->value; }
  const RealArray& running_var() const { return running_var_->value; }
  double epsilon() const { return epsilon_; }
  double momentum() const { return momentum_; }

  // v -> (v - mean) / sqrt(var + eps); log_det = -1/2 sum log(var + eps).
  Transformed normalize(Tape& t, Var v, FlowMode mode) const {
    using namespace diff;
    if (mode == FlowMode::evaluation) {
      RealArray shift(1, 2), inv_std(1, 2);
      double ld = 0.0;
      for (std::size_t d = 0; d < 2; ++d) {
        const double var = running_var_->value[d] + epsilon_;
        shift[d] = running_mean_->value[d];
        inv_std[d] = 1.0 / std::sqrt(var);
        ld -= 0.5 * std::log(var);
      }
      Var out = mul(sub(v, t.constant(shift)), t.constant(inv_std));
      return {out, t.constant(RealArray::scalar(ld))};
    }
    if (v.rows() < 2) {
      throw UsageError("flow_norm_apply: training mode needs a batch of at least 2 points");
    }
    Var mean = mean_rows(v);
    Var centered = sub(v, mean);
    Var var = mean_rows(mul(centered, centered));
    Var log_var = log(affine(var, 1.0, epsilon_));
    Var out = mul(centered, exp(affine(log_var, -0.5)));
    Var ld = affine(sum(log_var), -0.5);

    const double m = momentum_;
    for (std::size_t d = 0; d < 2; ++d) {
      running_mean_->value[d] = (1.0 - m) * running_mean_->value[d] + m * mean.value()[d];
      running_var_->value[d] = (1.0 - m) * running_var_->value[d] + m * var.value()[d];
    }
    return {out, ld};
  }

  // Generative direction with running statistics.
  Transformed denormalize(Tape& t, Var v) const {
    using namespace diff;
    RealArray shift(1, 2), std_dev(1, 2);
    double ld = 0.0;
    for (std::size_t d = 0; d < 2; ++d) {
      const double var = running_var_->value[d] + epsilon_;
      shift[d] = running_mean_->value[d];
      std_dev[d] = std::sqrt(var);
      ld += 0.5 * std::log(var);
    }
    Var out = add(mul(v, t.constant(std_dev)), t.constant(shift));
    return {out, t.constant(RealArray::scalar(ld))};
  }

 private:
  double epsilon_ = 1e-5;
  double momentum_ = 0.1;
  Parameter* running_mean_ = nullptr;
  Parameter* running_var_ = nullptr;
};

// Coordinate swap; self-inverse with zero log-det.
struct Permutation {
  Transformed apply(Tape& t, Var v) const {
    Var swapped = diff::concat_cols({diff::slice_cols(v, 1, 2), diff::slice_cols(v, 0, 1)});
    return {swapped, t.constant(RealArray::scalar(0.0))};
  }
};

using FlowLayer = std::variant<ConditionalCoupling, FlowNorm, Permutation>;

// Result of pushing points through the whole stack, with per-layer log-dets
// kept for composition checks.
struct StackPass {
  Var points;
  Var log_det;                     // sum of layer log-dets, broadcastable to (N x 1)
  std::vector<Var> layer_log_dets;  // in the order the layers were applied
};

class FlowStack {
 public:
  FlowStack() = default;
  FlowStack(ParameterSet& ps, const std::string& name, std::size_t context_width,
            const FlowConfig& cfg, Rng& rng)
      : context_width_(context_width),
        base_(ps, name + ".base", context_width, cfg, rng) {
    for (std::size_t i = 0; i < cfg.depth; ++i) {
      const std::string p = name + ".layer" + std::to_string(i);
      layers_.emplace_back(ConditionalCoupling(ps, p + ".coupling", context_width, cfg, rng));
      layers_.emplace_back(FlowNorm(ps, p + ".norm", cfg));
      layers_.emplace_back(Permutation{});
    }
  }

  // Stack built from explicit layers (tests, custom arrangements).
  FlowStack(ConditionalBase base, std::vector<FlowLayer> layers, std::size_t context_width)
      : context_width_(context_width), base_(std::move(base)), layers_(std::move(layers)) {}

  std::size_t context_width() const { return context_width_; }
  const ConditionalBase& base() const { return base_; }
  const std::vector<FlowLayer>& layers() const { return layers_; }

  nn::GaussianParams base_params(Tape& t, const Context& context) const { return base_.params(t, context); }

  // x -> b, applying member inverses in reverse order.
  StackPass inverse(Tape& t, Var x, const Context& context, FlowMode mode) const {
    StackPass pass{x, t.constant(RealArray::scalar(0.0)), {}};
    for (std::size_t k = layers_.size(); k-- > 0;) {
      Transformed step = std::visit(
          [&](const auto& layer) -> Transformed {
            using L = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<L, ConditionalCoupling>) {
              return layer.inverse(t, pass.points, context);
            } else if constexpr (std::is_same_v<L, FlowNorm>) {
              return layer.normalize(t, pass.points, mode);
            } else {
              return layer.apply(t, pass.points);
            }
          },
          layers_[k]);
      if (!step.points.value().all_finite() || !step.log_det.value().all_finite()) {
        throw DomainError("flow_log_prob: non-finite value at layer " + std::to_string(k));
      }
      pass.points = step.points;
      pass.layer_log_dets.push_back(step.log_det);
      pass.log_det = diff::add(pass.log_det, step.log_det);
    }
    return pass;
  }

  // b -> x, applying members in order (evaluation statistics for norms).
  StackPass forward(Tape& t, Var b, const Context& context) const {
    StackPass pass{b, t.constant(RealArray::scalar(0.0)), {}};
    for (const auto& layer : layers_) {
      Transformed step = std::visit(
          [&](const auto& l) -> Transformed {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, ConditionalCoupling>) {
              return l.forward(t, pass.points, context);
            } else if constexpr (std::is_same_v<L, FlowNorm>) {
              return l.denormalize(t, pass.points);
            } else {
              return l.apply(t, pass.points);
            }
          },
          layer);
      pass.points = step.points;
      pass.layer_log_dets.push_back(step.log_det);
      pass.log_det = diff::add(pass.log_det, step.log_det);
    }
    return pass;
  }

  // log p(x | context) per row: (N x 1).
  Var log_prob(Tape& t, Var x, const Context& context, FlowMode mode) const {
    if (x.cols() != 2) throw UsageError("flow_log_prob: points must have 2 columns");
    StackPass pass = inverse(t, x, context, mode);
    nn::GaussianParams base = base_params(t, context);
    Var lp = diff::add(nn::gaussian_log_density(pass.points, base), pass.log_det);
    if (!lp.value().all_finite()) {
      throw DomainError("flow_log_prob: non-finite log-density at the base distribution");
    }
    return lp;
  }

  // x = T(mu_b + sigma_b * noise); noise is (N x 2) standard normal.
  Var sample(Tape& t, const Context& context, const RealArray& noise) const {
    nn::GaussianParams base = base_params(t, context);
    Var b = diff::add(base.mean, diff::mul(base.scale, t.constant(noise)));
    return forward(t, b, context).points;
  }

 private:
  std::size_t context_width_ = 0;
  ConditionalBase base_;
  std::vector<FlowLayer> layers_;
};

}  // namespace rfn::flows
