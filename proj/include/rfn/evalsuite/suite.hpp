#pragma once

#include <cmath>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rfn/evalsuite/grid.hpp"

namespace rfn::eval {

using diff::Tape;
using geo::IndexRange;
using diff::Var;
using models::StateValues;
using models::StepOutcome;

struct SuiteOptions {
  std::size_t samples = 30;      // importance / predictive samples
  std::size_t repetitions = 5;   // independent evaluation repetitions
  std::vector<std::size_t> horizons = {2, 5, 10, 0};  // 0 = the whole test split
  std::size_t quantize_grid = 64;
  bool quantized = true;
  bool rollouts = true;
  bool validation = true;
  std::size_t rollout_samples = 0;  // points per fed-back frame; 0 = mean training bin count
  std::uint64_t seed = 0;
};

struct MetricRecord {
  std::string model_id;
  std::string split;
  std::string metric;
  double total = 0.0;      // mean over repetitions
  double per_point = 0.0;  // total / points
  double stddev = 0.0;     // of the total over repetitions
  double per_point_stddev = 0.0;
  std::size_t points = 0;
  std::size_t excluded = 0;  // points outside the bounding box
  std::size_t samples = 0;
  std::size_t repetitions = 0;
  std::uint64_t seed = 0;
  bool degenerate = false;
  // log(dlon * dlat) of the dataset box; subtract from per-point values for
  // densities per square degree (never applied to the stored values).
  double log_jacobian = 0.0;

  nlohmann::json to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); };
    return {{"model_id", model_id},
            {"split", split},
            {"metric", metric},
            {"value", num(total)},
            {"per_point", num(per_point)},
            {"stddev", num(stddev)},
            {"per_point_stddev", num(per_point_stddev)},
            {"points", points},
            {"excluded", excluded},
            {"samples", samples},
            {"repetitions", repetitions},
            {"seed", seed},
            {"degenerate", degenerate},
            {"log_jacobian_degrees", log_jacobian}};
  }

  static MetricRecord from_json(const nlohmann::json& j) {
    auto num = [](const nlohmann::json& v) {
      return v.is_null() ? -std::numeric_limits<double>::infinity() : v.get<double>();
    };
    MetricRecord r;
    r.model_id = j.at("model_id").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.metric = j.at("metric").get<std::string>();
    r.total = num(j.at("value"));
    r.per_point = num(j.at("per_point"));
    r.stddev = num(j.at("stddev"));
    r.per_point_stddev = num(j.at("per_point_stddev"));
    r.points = j.at("points").get<std::size_t>();
    r.excluded = j.value("excluded", std::size_t{0});
    r.samples = j.at("samples").get<std::size_t>();
    r.repetitions = j.at("repetitions").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.degenerate = j.value("degenerate", false);
    r.log_jacobian = j.value("log_jacobian_degrees", 0.0);
    return r;
  }
};

struct MetricsReport {
  std::string model_id;
  std::vector<std::string> horizons;
  std::vector<MetricRecord> records;

  const MetricRecord* find(const std::string& split, const std::string& metric) const {
    for (const auto& r : records)
      if (r.split == split && r.metric == metric) return &r;
    return nullptr;
  }
};

// One JSON record per line.
inline void write_metrics(const MetricsReport& report, std::ostream& out) {
  for (const auto& r : report.records) out << r.to_json().dump() << '\n';
}

inline MetricsReport read_metrics(std::istream& in) {
  MetricsReport report;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    report.records.push_back(MetricRecord::from_json(nlohmann::json::parse(line)));
    report.model_id = report.records.back().model_id;
    const std::string& metric = report.records.back().metric;
    if (metric.rfind("rollout_", 0) == 0) report.horizons.push_back(metric.substr(8));
  }
  return report;
}

inline std::string horizon_name(std::size_t h) { return h == 0 ? "full" : std::to_string(h); }

inline std::size_t mean_points_per_bin(const geo::HistogramSequence& seq, IndexRange r) {
  std::size_t pts = 0, bins = 0;
  for (std::size_t t = r.begin; t < r.end; ++t) {
    if (seq.bins[t].count() == 0) continue;
    pts += seq.bins[t].count();
    ++bins;
  }
  return bins == 0 ? 1 : std::max<std::size_t>(1, (pts + bins / 2) / bins);
}

// Points of a bin inside the unit square, and the number left out.
inline std::pair<RealArray, std::size_t> inside_points(const RealArray& points) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    const double x = points(i, 0), y = points(i, 1);
    if (x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0) keep.push_back(i);
  }
  RealArray out(keep.size(), 2);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    out(r, 0) = points(keep[r], 0);
    out(r, 1) = points(keep[r], 1);
  }
  return {out, points.rows() - keep.size()};
}

struct Score {
  double total = 0.0;
  std::size_t points = 0;
  std::size_t excluded = 0;
  bool degenerate = false;
};

// A set of P rollout trajectories: per-particle recurrent state and the
// frame each particle feeds into its next step (P x k*k).
struct Particles {
  StateValues state;
  RealArray frames;
};

inline RealArray repeat_rows(const RealArray& row, std::size_t P) {
  if (row.empty()) return row;
  RealArray out(P, row.size());
  for (std::size_t p = 0; p < P; ++p)
    std::copy(row.values().begin(), row.values().end(), out.values().begin() + p * row.size());
  return out;
}

// P copies of a single-particle state fed the given frame.
inline Particles replicate(const StateValues& s, const RealArray& frame, std::size_t P) {
  return {{repeat_rows(s.h, P), repeat_rows(s.c, P), repeat_rows(s.z, P)}, repeat_rows(frame, P)};
}

// One predictive step for every particle: each draws a fresh latent from
// its conditional prior. Optionally scores the points of step s under the
// mixture over the P emission contexts, and samples each particle's next
// fed-back frame from its own context.
inline Particles predictive_advance(const SequenceModel& m, const geo::HistogramSequence& seq,
                                    const Particles& before, std::size_t s,
                                    std::size_t frame_samples, Rng& rng, Score* score) {
  const std::size_t P = before.frames.rows();
  Tape t(false);
  Var u = m.features(t, before.frames);
  const RealArray noise = m.config().stochastic()
                              ? normal_array(rng, P, m.config().latent_width)
                              : RealArray(1, 1);
  StepOutcome o = m.step(t, m.attach(t, before.state), u, Var{}, noise);
  const RealArray contexts = o.context.value();
  if (score && s < seq.size()) {
    auto [pts, excluded] = inside_points(seq.bins[s].points);
    score->excluded += excluded;
    score->points += pts.rows();
    for (double v : models::mixture_log_density(m, pts, contexts)) score->total += v;
  }
  Particles out;
  out.state = SequenceModel::detach(o.state);
  if (frame_samples > 0) {
    const std::size_t kk = seq.k * seq.k;
    out.frames = RealArray(P, kk);
    for (std::size_t p = 0; p < P; ++p) {
      Tape ts(false);
      const RealArray f = geo::histogram_frame(
          m.emission_sample(ts, ts.constant(models::row_of(contexts, p)), frame_samples, rng),
          seq.k);
      std::copy(f.values().begin(), f.values().end(), out.frames.values().begin() + p * kk);
    }
  }
  return out;
}

// States before every step of [0, end) under one filtered posterior path:
// result[i] is the state before step i, result[end] the state after the last.
inline std::vector<StateValues> filtered_states_before(const SequenceModel& m,
                                                       const geo::HistogramSequence& seq,
                                                       std::size_t end, std::size_t particles,
                                                       Rng& rng) {
  std::vector<StateValues> trace;
  const StateValues init = models::filter_states(m, seq, {0, 0}, nullptr, particles, rng);
  models::filter_states(m, seq, {0, end}, nullptr, particles, rng, &trace);
  std::vector<StateValues> before;
  before.push_back(init);
  for (auto& s : trace) before.push_back(std::move(s));
  return before;
}

// Scores each step s of `range` under the predictive density obtained by
// conditioning on data through step s - n and rolling the model forward for
// the n - 1 intermediate steps with its own sampled frames. The density is
// a mixture over `samples` independent trajectories, each drawing fresh
// prior latents and frames at every unrolled step. A deterministic model
// scored one step ahead needs a single trajectory. Horizon 0 rolls out once
// from the start of the range through its end, so step s is scored at
// horizon s - range.begin + 1.
inline Score rollout_score(const SequenceModel& m, const geo::HistogramSequence& seq,
                           IndexRange range, std::size_t horizon, std::size_t samples,
                           std::size_t frame_samples, const std::vector<StateValues>& before,
                           Rng& rng) {
  const std::size_t P =
      m.config().stochastic() || horizon != 1 ? std::max<std::size_t>(1, samples) : 1;
  Score score;
  if (horizon == 0) {
    Particles x = replicate(before[range.begin], models::previous_frame(seq, range.begin), P);
    for (std::size_t s = range.begin; s < range.end; ++s) {
      x = predictive_advance(m, seq, x, s, s + 1 < range.end ? frame_samples : 0, rng, &score);
    }
    return score;
  }
  for (std::size_t s = range.begin; s < range.end; ++s) {
    const std::size_t start = s + 1 >= horizon ? s + 1 - horizon : 0;
    Particles x = replicate(before[start], models::previous_frame(seq, start), P);
    for (std::size_t j = start; j < s; ++j) {
      x = predictive_advance(m, seq, x, j, frame_samples, rng, nullptr);
    }
    predictive_advance(m, seq, x, s, 0, rng, &score);
  }
  return score;
}

// Histogram counts of a point set on an m x m grid over the unit square.
inline RealArray grid_counts(const RealArray& points, std::size_t m) {
  return geo::count_cells(inside_points(points).first, m);
}

// Sum over steps of the categorical log-likelihood of each step's counts
// under the quantized one-step predictive density.
inline Score quantized_score(const SequenceModel& m, const geo::HistogramSequence& seq,
                             IndexRange range, std::size_t samples, std::size_t grid, Rng& rng) {
  const std::size_t S = m.config().stochastic() ? samples : 1;
  std::vector<StateValues> trace;
  const StateValues init = models::filter_states(m, seq, {0, 0}, nullptr, S, rng);
  models::filter_states(m, seq, {0, range.end}, nullptr, S, rng, &trace);
  const RealArray centers = cell_centers(grid);
  Score score;
  for (std::size_t s = range.begin; s < range.end; ++s) {
    const StateValues& before = s == 0 ? init : trace[s - 1];
    auto [pts, excluded] = inside_points(seq.bins[s].points);
    score.excluded += excluded;
    if (pts.rows() == 0) continue;
    models::PredictiveStep p = models::predict_step(m, before, models::previous_frame(seq, s), S, rng);
    const std::vector<double> lp = models::mixture_log_density(m, centers, p.contexts);
    RealArray logits(grid, grid);
    for (std::size_t i = 0; i < grid * grid; ++i) logits[i] = lp[i];
    CategoricalScore c = categorical_log_likelihood(log_softmax(logits), geo::count_cells(pts, grid));
    score.total += c.value;
    score.degenerate = score.degenerate || c.degenerate;
    score.points += pts.rows();
  }
  return score;
}

inline MetricRecord summarize(const SequenceModel& m, const std::string& split,
                              const std::string& metric, const std::vector<Score>& reps,
                              std::size_t samples, std::uint64_t seed) {
  MetricRecord r;
  r.model_id = m.config().model_id();
  r.split = split;
  r.metric = metric;
  r.samples = m.config().stochastic() ? samples : 1;
  r.repetitions = reps.size();
  r.seed = seed;
  r.points = reps.front().points;
  r.excluded = reps.front().excluded;
  double mean = 0.0;
  for (const auto& s : reps) {
    mean += s.total;
    r.degenerate = r.degenerate || s.degenerate;
  }
  mean /= static_cast<double>(reps.size());
  double var = 0.0;
  for (const auto& s : reps) var += (s.total - mean) * (s.total - mean);
  r.stddev = reps.size() > 1 ? std::sqrt(var / static_cast<double>(reps.size() - 1)) : 0.0;
  r.total = mean;
  const double n = static_cast<double>(std::max<std::size_t>(1, r.points));
  r.per_point = mean / n;
  r.per_point_stddev = r.stddev / n;
  return r;
}

// Metrics of a trained model on a dataset: importance-sampled one-step
// log-likelihood (validation and test splits, each conditioned on all data
// before it), rollout scores at the requested horizons and the quantized
// categorical score. Every stochastic evaluation is repeated with
// independent seeds derived from options.seed.
inline MetricsReport evaluate_suite(const SequenceModel& m, const geo::Dataset& ds,
                                    const SuiteOptions& opt) {
  if (opt.samples < 1) throw UsageError("eval.samples must be at least 1");
  if (opt.repetitions < 1) throw UsageError("eval.repetitions must be at least 1");
  const auto& seq = ds.sequence;
  const IndexRange test = ds.split.test;
  if (test.size() == 0) throw DataError("evaluate: empty test split");
  const std::size_t frame_samples =
      opt.rollout_samples > 0 ? opt.rollout_samples : mean_points_per_bin(seq, ds.split.train);

  MetricsReport report;
  report.model_id = m.config().model_id();
  for (std::size_t h : opt.horizons) report.horizons.push_back(horizon_name(h));

  std::vector<Score> val, tst, quant;
  std::vector<std::vector<Score>> roll(opt.horizons.size());
  for (std::size_t rep = 0; rep < opt.repetitions; ++rep) {
    auto rng_for = [&](const char* label) { return Rng(derive_seed(opt.seed, label, rep)); };
    auto is_score = [&](IndexRange r, Rng rng) {
      const models::IsEstimate e = models::is_log_marginal(m, seq, r, opt.samples, rng);
      return Score{e.log_marginal, e.points, 0, false};
    };
    if (opt.validation) val.push_back(is_score(ds.split.val, rng_for("eval.val")));
    tst.push_back(is_score(test, rng_for("eval.test")));
    if (opt.rollouts && !opt.horizons.empty()) {
      Rng rng = rng_for("eval.rollout");
      const auto before = filtered_states_before(m, seq, test.end, 1, rng);
      for (std::size_t h = 0; h < opt.horizons.size(); ++h) {
        roll[h].push_back(rollout_score(m, seq, test, opt.horizons[h], opt.samples, frame_samples,
                                        before, rng));
      }
    }
    if (opt.quantized) {
      Rng rng = rng_for("eval.quantized");
      quant.push_back(quantized_score(m, seq, test, opt.samples, opt.quantize_grid, rng));
    }
  }
  if (opt.validation) report.records.push_back(summarize(m, "val", "loglik", val, opt.samples, opt.seed));
  report.records.push_back(summarize(m, "test", "loglik", tst, opt.samples, opt.seed));
  if (opt.rollouts) {
    for (std::size_t h = 0; h < opt.horizons.size(); ++h) {
      report.records.push_back(summarize(m, "test", "rollout_" + horizon_name(opt.horizons[h]),
                                         roll[h], opt.samples, opt.seed));
    }
  }
  if (opt.quantized) {
    report.records.push_back(summarize(m, "test", "quantized_loglik", quant, opt.samples, opt.seed));
  }
  for (auto& r : report.records) r.log_jacobian = ds.box.log_jacobian();
  return report;
}

}  // namespace rfn::eval
