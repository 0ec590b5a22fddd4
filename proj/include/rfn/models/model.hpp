#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "rfn/geodata/histogram.hpp"
#include "rfn/models/config.hpp"
#include "rfn/models/mdn.hpp"
#include "rfn/recurrent/lstm.hpp"

// Sequence model over binned point sets:
//   h_t = LSTM(h_{t-1}, phi(u_t))                 u_t = frame_{t-1}, u_1 = 0
//   p(z_t | z_{t-1}, h_t)                         conditional prior
//   q(z_t | z_{t-1}, h_t, phi(x_t))               filtering encoder
//   p(x_t | z_t, h_t)                             flow or MDN emission
// Deterministic-transition variants drop z and condition the emission on h.

namespace rfn::models {

using diff::ParameterSet;
using flows::FlowMode;
using geo::HistogramSequence;
using geo::IndexRange;

// Recurrent state detached from any tape. z holds one row per particle.
struct StateValues {
  RealArray h, c, z;
};

struct StepVars {
  Var h, c, z;
};

struct StepOutcome {
  StepVars state;
  std::optional<nn::GaussianParams> prior;
  std::optional<nn::GaussianParams> posterior;
  Var kl;         // (P x 1), zero without an inferred latent
  Var log_ratio;  // (P x 1), log p(z) - log q(z) at the sampled z
  Var context;    // (P x C) emission context
};

class SequenceModel {
 public:
  explicit SequenceModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(cfg_.seed, "model.init"));
    const std::size_t H = cfg_.lstm_width, Z = cfg_.latent_width, W = cfg_.feature_width;
    h0_ = &ps_.add("init.h0", RealArray(1, H));
    c0_ = &ps_.add("init.c0", RealArray(1, H));
    features_ = nn::Mlp(ps_, "features", cfg_.k * cfg_.k,
                        std::vector<std::size_t>(cfg_.feature_layers - 1, W), W,
                        nn::Activation::relu, rng, nn::Activation::relu);
    lstm_ = nn::Lstm(ps_, "lstm", W, H, rng);
    if (cfg_.stochastic()) {
      z0_ = &ps_.add("init.z0", RealArray(1, Z));
      prior_ = nn::GaussianNet(ps_, "prior", Z + H, cfg_.latent_hidden, Z, nn::Activation::tanh,
                               rng);
      encoder_ = nn::GaussianNet(ps_, "encoder", Z + H + W, cfg_.latent_hidden, Z,
                                 nn::Activation::tanh, rng);
    }
    if (cfg_.emission == Emission::flow) {
      flow_ = flows::FlowStack(ps_, "flow", cfg_.context_width(), cfg_.flow_config(), rng);
    } else {
      mdn_ = MdnHead(ps_, "mdn", cfg_.context_width(), cfg_.mixtures(),
                     cfg_.emission == Emission::mdn_full, cfg_.emission_hidden,
                     cfg_.emission_layers, nn::Activation::tanh, rng);
    }
  }

  SequenceModel(const SequenceModel&) = delete;
  SequenceModel& operator=(const SequenceModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& parameters() { return ps_; }
  const ParameterSet& parameters() const { return ps_; }
  const flows::FlowStack& flow() const { return flow_; }
  const MdnHead& mdn() const { return mdn_; }
  const nn::Lstm& lstm() const { return lstm_; }
  const nn::GaussianNet& prior_net() const { return prior_; }
  const nn::GaussianNet& encoder_net() const { return encoder_; }
  const nn::Mlp& feature_net() const { return features_; }

  // Flattened frames, one per row, to features.
  Var features(Tape& t, const RealArray& frames) const {
    if (frames.cols() != cfg_.k * cfg_.k) {
      throw UsageError("features: frame width " + std::to_string(frames.cols()) +
                       " does not match k*k = " + std::to_string(cfg_.k * cfg_.k));
    }
    return features_.forward(t, t.constant(frames));
  }

  StepVars initial_state(Tape& t) const {
    StepVars s{t.param(*h0_), t.param(*c0_), Var{}};
    if (cfg_.stochastic()) s.z = t.param(*z0_);
    return s;
  }

  StepVars attach(Tape& t, const StateValues& v) const {
    StepVars s{t.constant(v.h), t.constant(v.c), Var{}};
    if (cfg_.stochastic()) s.z = t.constant(v.z);
    return s;
  }

  static StateValues detach(const StepVars& s) {
    return {s.h.value(), s.c.value(), s.z.valid() ? s.z.value() : RealArray()};
  }

  nn::GaussianParams prior(Tape& t, Var z_prev, Var h) const {
    return prior_.forward(t, {z_prev, h});
  }

  nn::GaussianParams posterior(Tape& t, Var z_prev, Var h, Var x_features) const {
    return encoder_.forward(t, {z_prev, h, x_features});
  }

  // One transition. `x_features` is invalid for an empty bin, in which case
  // z is drawn from the prior and contributes no KL. `noise` (P x latent)
  // fixes the particle count; it is ignored by deterministic models.
  StepOutcome step(Tape& t, const StepVars& prev, Var u_features, Var x_features,
                   const RealArray& noise) const {
    nn::LstmState next = lstm_.step(t, {prev.h, prev.c}, u_features);
    StepOutcome out;
    out.state = {next.h, next.c, Var{}};
    if (!cfg_.stochastic()) {
      out.kl = t.constant(RealArray(1, 1));
      out.log_ratio = t.constant(RealArray(1, 1));
      out.context = next.h;
      return out;
    }
    const std::size_t P = noise.rows();
    out.prior = prior(t, prev.z, next.h);
    if (x_features.valid()) {
      out.posterior = posterior(t, prev.z, next.h, x_features);
      nn::LatentSample s = nn::reparam_sample(t, *out.posterior, noise);
      out.state.z = s.z;
      out.kl = nn::kl_diag_gaussians(*out.posterior, *out.prior);
      out.log_ratio = diff::sub(nn::gaussian_log_density(s.z, *out.prior),
                                nn::gaussian_log_density(s.z, *out.posterior));
    } else {
      nn::LatentSample s = nn::reparam_sample(t, *out.prior, noise,
                                              nn::LatentSample::Source::prior);
      out.state.z = s.z;
      out.kl = t.constant(RealArray(P, 1));
      out.log_ratio = t.constant(RealArray(P, 1));
    }
    Var h = next.h;
    if (P > 1 && h.rows() == 1) h = diff::gather_rows(h, nn::RowIndex(P, 0));
    out.context = diff::concat_cols({out.state.z, h});
    return out;
  }

  // Emission log-density per point row (N x 1).
  Var emission_log_prob(Tape& t, Var points, const nn::Context& context, FlowMode mode) const {
    if (cfg_.emission == Emission::flow) return flow_.log_prob(t, points, context, mode);
    return mdn_.log_prob(t, points, context);
  }

  // n points from the emission for a single context row.
  RealArray emission_sample(Tape& t, Var context, std::size_t n, Rng& rng) const {
    if (cfg_.emission == Emission::flow) {
      return flow_.sample(t, context, normal_array(rng, n, 2)).value();
    }
    return mdn_sample(mdn_.params(t, context), n, rng);
  }

 private:
  ModelConfig cfg_;
  ParameterSet ps_;
  diff::Parameter* h0_ = nullptr;
  diff::Parameter* c0_ = nullptr;
  diff::Parameter* z0_ = nullptr;
  nn::Mlp features_;
  nn::Lstm lstm_;
  nn::GaussianNet prior_;
  nn::GaussianNet encoder_;
  flows::FlowStack flow_;
  MdnHead mdn_;
};

// Feature input rows for steps [begin, end): row 0 is u_begin (previous
// frame, zeros at the sequence start), row i + 1 is frame begin + i.
inline RealArray frame_rows(const HistogramSequence& seq, std::size_t begin, std::size_t end) {
  const std::size_t kk = seq.k * seq.k;
  RealArray rows(end - begin + 1, kk);
  auto put = [&](std::size_t row, const RealArray& f) {
    std::copy(f.values().begin(), f.values().end(), rows.values().begin() + row * kk);
  };
  if (begin > 0) put(0, seq.frames[begin - 1]);
  for (std::size_t t = begin; t < end; ++t) put(t - begin + 1, seq.frames[t]);
  return rows;
}

inline void check_sequence(const SequenceModel& m, const HistogramSequence& seq, IndexRange r) {
  if (seq.k != m.config().k) {
    throw UsageError("dataset k = " + std::to_string(seq.k) + " does not match model k = " +
                     std::to_string(m.config().k));
  }
  if (r.begin > r.end || r.end > seq.size()) throw UsageError("step range exceeds the sequence");
}

// Features of frame_rows(seq, begin, end) evaluated without a gradient.
inline RealArray feature_rows(const SequenceModel& m, const HistogramSequence& seq,
                              std::size_t begin, std::size_t end) {
  Tape t(false);
  const RealArray frames = frame_rows(seq, begin, end);
  return m.features(t, frames).value();
}

inline RealArray row_of(const RealArray& a, std::size_t r) {
  RealArray out(1, a.cols());
  std::copy_n(a.values().begin() + r * a.cols(), a.cols(), out.values().begin());
  return out;
}

struct ElboReport {
  std::vector<double> reconstruction;  // per step; 0 for empty bins
  std::vector<double> kl;              // per step
  double beta = 1.0;
  double objective = 0.0;  // sum reconstruction - beta * sum kl
  std::size_t points = 0;

  double total_reconstruction() const {
    double s = 0.0;
    for (double v : reconstruction) s += v;
    return s;
  }
  double total_kl() const {
    double s = 0.0;
    for (double v : kl) s += v;
    return s;
  }
};

struct WindowPass {
  ElboReport report;
  Var objective;
  StateValues final_state;
};

// Step-wise ELBO over steps [r.begin, r.end) with one posterior sample per
// step, starting from `carry` (or the learned initial state). All points of
// the window share one emission pass so normalization layers see the whole
// window as their batch; windows with fewer than two points fall back to
// running statistics.
inline WindowPass elbo_window(Tape& t, const SequenceModel& m, const HistogramSequence& seq,
                              IndexRange r, const StateValues* carry, double beta, Rng& rng,
                              FlowMode mode) {
  check_sequence(m, seq, r);
  if (beta < 0.0 || beta > 1.0) throw UsageError("step_elbo: beta must lie in [0, 1]");
  const ModelConfig& cfg = m.config();
  const RealArray frames = frame_rows(seq, r.begin, r.end);
  Var feats = m.features(t, frames);
  StepVars state = carry ? m.attach(t, *carry) : m.initial_state(t);

  WindowPass pass;
  pass.report.beta = beta;
  std::vector<Var> contexts, kls;
  std::vector<std::size_t> groups;
  std::size_t total_points = 0;
  std::vector<std::size_t> bin_of_group;
  for (std::size_t s = r.begin; s < r.end; ++s) {
    const std::size_t i = s - r.begin;
    const bool empty = seq.bins[s].count() == 0;
    Var u = diff::slice_rows(feats, i, i + 1);
    Var x = empty ? Var{} : diff::slice_rows(feats, i + 1, i + 2);
    const RealArray noise = cfg.stochastic() ? normal_array(rng, 1, cfg.latent_width) : RealArray(1, 1);
    StepOutcome o = m.step(t, state, u, x, noise);
    state = o.state;
    kls.push_back(o.kl);
    pass.report.kl.push_back(o.kl.scalar());
    pass.report.reconstruction.push_back(0.0);
    if (!empty) {
      contexts.push_back(o.context);
      bin_of_group.push_back(i);
      total_points += seq.bins[s].count();
    }
  }

  Var objective = t.constant(RealArray::scalar(0.0));
  if (!contexts.empty()) {
    RealArray points(total_points, 2);
    auto index = std::make_shared<nn::RowIndex>();
    index->reserve(total_points);
    std::size_t row = 0;
    for (std::size_t g = 0; g < bin_of_group.size(); ++g) {
      const auto& p = seq.bins[r.begin + bin_of_group[g]].points;
      std::copy(p.values().begin(), p.values().end(), points.values().begin() + row * 2);
      row += p.rows();
      index->insert(index->end(), p.rows(), g);
    }
    const FlowMode effective = total_points < 2 ? FlowMode::evaluation : mode;
    Var lp = m.emission_log_prob(t, t.constant(std::move(points)),
                                 nn::Context(diff::concat_rows(contexts), index), effective);
    Var per_bin = diff::segment_sum_rows(lp, *index, contexts.size());
    for (std::size_t g = 0; g < bin_of_group.size(); ++g) {
      pass.report.reconstruction[bin_of_group[g]] = per_bin.value()[g];
    }
    objective = diff::sum(per_bin);
  }
  pass.report.points = total_points;
  Var kl_total = diff::sum(diff::concat_rows(kls));
  if (beta != 0.0) objective = diff::sub(objective, diff::affine(kl_total, beta));
  pass.objective = objective;
  pass.report.objective = objective.scalar();
  pass.final_state = SequenceModel::detach(state);
  return pass;
}

// Single-step contribution of the ELBO at step s (see elbo_window).
inline WindowPass step_elbo(Tape& t, const SequenceModel& m, const HistogramSequence& seq,
                            std::size_t s, const StateValues* carry, double beta, Rng& rng,
                            FlowMode mode = FlowMode::evaluation) {
  return elbo_window(t, m, seq, {s, s + 1}, carry, beta, rng, mode);
}

// ELBO report without gradients.
inline ElboReport evaluate_elbo(const SequenceModel& m, const HistogramSequence& seq, IndexRange r,
                                const StateValues* carry, double beta, Rng& rng) {
  Tape t(false);
  return elbo_window(t, m, seq, r, carry, beta, rng, FlowMode::evaluation).report;
}

// Runs the transition over steps [r.begin, r.end) drawing z from the
// filtering posterior (prior for empty bins) with `particles` rows, without
// gradients or emissions. Returns the state after the last step;
// `trace[i]` receives the state after step r.begin + i.
inline StateValues filter_states(const SequenceModel& m, const HistogramSequence& seq,
                                 IndexRange r, const StateValues* carry, std::size_t particles,
                                 Rng& rng, std::vector<StateValues>* trace = nullptr) {
  check_sequence(m, seq, r);
  const ModelConfig& cfg = m.config();
  StateValues state;
  {
    Tape t(false);
    state = carry ? *carry : SequenceModel::detach(m.initial_state(t));
  }
  if (r.size() == 0) return state;
  const RealArray feats = feature_rows(m, seq, r.begin, r.end);
  for (std::size_t s = r.begin; s < r.end; ++s) {
    const std::size_t i = s - r.begin;
    Tape t(false);
    StepVars prev = m.attach(t, state);
    Var u = t.constant(row_of(feats, i));
    Var x = seq.bins[s].count() == 0 ? Var{} : t.constant(row_of(feats, i + 1));
    const RealArray noise =
        cfg.stochastic() ? normal_array(rng, particles, cfg.latent_width) : RealArray(1, 1);
    StepOutcome o = m.step(t, prev, u, x, noise);
    state = SequenceModel::detach(o.state);
    if (trace) trace->push_back(state);
  }
  return state;
}

// Emission log-densities of N points under P context rows: (P x N).
// Evaluated in chunks of at most `chunk_rows` point-context pairs.
inline RealArray emission_log_density_matrix(const SequenceModel& m, const RealArray& points,
                                             const RealArray& contexts,
                                             std::size_t chunk_rows = 4096) {
  const std::size_t P = contexts.rows(), N = points.rows();
  RealArray out(P, N);
  if (N == 0) return out;
  const std::size_t point_chunk = std::min(N, chunk_rows);
  const std::size_t particle_chunk = std::max<std::size_t>(1, chunk_rows / point_chunk);
  for (std::size_t p0 = 0; p0 < P; p0 += particle_chunk) {
    const std::size_t p1 = std::min(P, p0 + particle_chunk);
    for (std::size_t n0 = 0; n0 < N; n0 += point_chunk) {
      const std::size_t n1 = std::min(N, n0 + point_chunk);
      const std::size_t rows = (p1 - p0) * (n1 - n0);
      RealArray pts(rows, 2), ctx(p1 - p0, contexts.cols());
      auto index = std::make_shared<nn::RowIndex>();
      index->reserve(rows);
      std::size_t row = 0;
      for (std::size_t p = p0; p < p1; ++p) {
        std::copy_n(contexts.values().begin() + p * contexts.cols(), contexts.cols(),
                    ctx.values().begin() + (p - p0) * contexts.cols());
        for (std::size_t n = n0; n < n1; ++n, ++row) {
          pts(row, 0) = points(n, 0);
          pts(row, 1) = points(n, 1);
          index->push_back(p - p0);
        }
      }
      Tape t(false);
      const RealArray lp = m.emission_log_prob(t, t.constant(std::move(pts)),
                                               nn::Context(t.constant(std::move(ctx)), index),
                                               FlowMode::evaluation)
                               .value();
      row = 0;
      for (std::size_t p = p0; p < p1; ++p)
        for (std::size_t n = n0; n < n1; ++n, ++row) out(p, n) = lp[row];
    }
  }
  return out;
}

inline double log_mean_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s / static_cast<double>(v.size()));
}

// Predictive log-density per point: log of the mean density over the
// context rows.
inline std::vector<double> mixture_log_density(const SequenceModel& m, const RealArray& points,
                                               const RealArray& contexts) {
  const RealArray lp = emission_log_density_matrix(m, points, contexts);
  std::vector<double> out(points.rows());
  std::vector<double> col(contexts.rows());
  for (std::size_t n = 0; n < points.rows(); ++n) {
    for (std::size_t p = 0; p < contexts.rows(); ++p) col[p] = lp(p, n);
    out[n] = log_mean_exp(col);
  }
  return out;
}

struct PredictiveStep {
  StateValues state;  // after the transition, z drawn from the prior
  RealArray contexts;  // (S x C) emission contexts
  std::optional<std::pair<RealArray, RealArray>> prior;  // (mean, scale)
};

// One-step prediction for step s from the state after step s - 1, with
// `u` either the observed previous frame or a supplied model frame. Draws S
// latent samples from the conditional prior.
inline PredictiveStep predict_step(const SequenceModel& m, const StateValues& before,
                                   const RealArray& u_frame, std::size_t samples, Rng& rng) {
  const ModelConfig& cfg = m.config();
  Tape t(false);
  RealArray u_row(1, u_frame.size());
  std::copy(u_frame.values().begin(), u_frame.values().end(), u_row.values().begin());
  Var u = m.features(t, u_row);
  StepVars prev = m.attach(t, before);
  const RealArray noise =
      cfg.stochastic() ? normal_array(rng, samples, cfg.latent_width) : RealArray(1, 1);
  StepOutcome o = m.step(t, prev, u, Var{}, noise);
  PredictiveStep out;
  out.state = SequenceModel::detach(o.state);
  out.contexts = o.context.value();
  if (o.prior) out.prior = std::make_pair(o.prior->mean.value(), o.prior->scale.value());
  return out;
}

inline RealArray previous_frame(const HistogramSequence& seq, std::size_t s) {
  return s == 0 ? RealArray(seq.k, seq.k) : seq.frames[s - 1];
}

}  // namespace rfn::models
