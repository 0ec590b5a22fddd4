#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "rfn/models/model.hpp"

namespace rfn::models {

struct IsEstimate {
  double log_marginal = 0.0;
  std::size_t points = 0;
  std::size_t samples = 0;
  std::vector<double> log_weights;  // one per latent trajectory

  double per_point() const {
    return points == 0 ? 0.0 : log_marginal / static_cast<double>(points);
  }
};

// Importance-sampled log p(x_score | x_before) for steps [score.begin,
// score.end). The prefix [0, score.begin) is filtered with S posterior
// trajectories; each trajectory then accumulates
//   log w = sum_t [recon_t + log p(z_t | z_{t-1}, h_t) - log q(z_t | ...)]
// over the scored steps and the estimate is log-mean-exp over trajectories.
// Deterministic models return the exact log-likelihood.
inline IsEstimate is_log_marginal(const SequenceModel& m, const HistogramSequence& seq,
                                  IndexRange score, std::size_t samples, Rng& rng) {
  if (samples < 1) throw UsageError("is_log_marginal: samples must be at least 1");
  check_sequence(m, seq, score);
  const ModelConfig& cfg = m.config();
  const std::size_t S = cfg.stochastic() ? samples : 1;
  StateValues state = filter_states(m, seq, {0, score.begin}, nullptr, S, rng);
  IsEstimate est;
  est.samples = samples;
  std::vector<double> log_w(S, 0.0);
  if (score.size() == 0) {
    est.log_weights = log_w;
    return est;
  }
  const RealArray feats = feature_rows(m, seq, score.begin, score.end);
  for (std::size_t s = score.begin; s < score.end; ++s) {
    const std::size_t i = s - score.begin;
    const bool empty = seq.bins[s].count() == 0;
    Tape t(false);
    StepVars prev = m.attach(t, state);
    Var u = t.constant(row_of(feats, i));
    Var x = empty ? Var{} : t.constant(row_of(feats, i + 1));
    const RealArray noise =
        cfg.stochastic() ? normal_array(rng, S, cfg.latent_width) : RealArray(1, 1);
    StepOutcome o = m.step(t, prev, u, x, noise);
    const RealArray& ratio = o.log_ratio.value();
    for (std::size_t p = 0; p < S; ++p) log_w[p] += ratio[ratio.rows() == 1 ? 0 : p];
    if (!empty) {
      const RealArray lp = emission_log_density_matrix(m, seq.bins[s].points, o.context.value());
      for (std::size_t p = 0; p < S; ++p) {
        const std::size_t row = lp.rows() == 1 ? 0 : p;
        for (std::size_t n = 0; n < lp.cols(); ++n) log_w[p] += lp(row, n);
      }
      est.points += seq.bins[s].count();
    }
    state = SequenceModel::detach(o.state);
  }
  est.log_marginal = log_mean_exp(log_w);
  est.log_weights = std::move(log_w);
  return est;
}

struct RolloutStep {
  std::size_t index = 0;          // sequence position being predicted
  bool input_from_model = false;  // u came from the previous rollout step
  RealArray context;              // (1 x C) emission context
  RealArray prior_mean;           // empty for deterministic models
  RealArray prior_scale;
  RealArray points;               // sampled points (N x 2)
  RealArray frame;                // k x k histogram of the samples
  std::size_t outside = 0;        // samples outside the unit square
};

struct RolloutTrace {
  std::size_t start = 0;
  std::size_t horizon = 0;
  std::vector<RolloutStep> steps;
  StateValues final_state;
};

// Autoregressive generation of steps [start, start + horizon). `before` is
// the state after step start - 1 (one particle). The first step is
// conditioned on the observed frame start - 1; every later step is fed the
// histogram of the previous step's samples. Samples outside the unit square
// are kept in `points` and counted into the border cells of the histogram.
inline RolloutTrace rollout(const SequenceModel& m, const HistogramSequence& seq,
                            std::size_t start, const StateValues& before, std::size_t horizon,
                            std::size_t samples_per_step, Rng& rng) {
  if (horizon < 1) throw UsageError("rollout: horizon must be at least 1");
  if (samples_per_step < 1) throw UsageError("rollout: samples per step must be at least 1");
  if (start > seq.size()) throw UsageError("rollout: start lies beyond the sequence");
  if (seq.k != m.config().k) throw UsageError("rollout: dataset k does not match the model");
  RolloutTrace trace;
  trace.start = start;
  trace.horizon = horizon;
  StateValues state = before;
  RealArray u = previous_frame(seq, start);
  for (std::size_t h = 0; h < horizon; ++h) {
    PredictiveStep p = predict_step(m, state, u, 1, rng);
    RolloutStep step;
    step.index = start + h;
    step.input_from_model = h > 0;
    step.context = p.contexts;
    if (p.prior) {
      step.prior_mean = p.prior->first;
      step.prior_scale = p.prior->second;
    }
    {
      Tape t(false);
      step.points = m.emission_sample(t, t.constant(p.contexts), samples_per_step, rng);
    }
    for (std::size_t i = 0; i < step.points.rows(); ++i) {
      const double x = step.points(i, 0), y = step.points(i, 1);
      if (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0) ++step.outside;
    }
    step.frame = geo::histogram_frame(step.points, seq.k);
    u = step.frame;
    state = p.state;
    trace.steps.push_back(std::move(step));
  }
  trace.final_state = state;
  return trace;
}

inline nlohmann::json rollout_to_json(const RolloutTrace& trace) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : trace.steps) {
    steps.push_back({{"index", s.index},
                     {"input", s.input_from_model ? "model" : "data"},
                     {"prior_mean", s.prior_mean.storage()},
                     {"prior_scale", s.prior_scale.storage()},
                     {"samples", s.points.rows()},
                     {"outside", s.outside}});
  }
  return {{"start", trace.start}, {"horizon", trace.horizon}, {"steps", steps}};
}

}  // namespace rfn::models
