#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "rfn/geodata/dataset.hpp"
#include "rfn/random.hpp"

// Synthetic spatio-temporal point processes with closed-form per-bin
// densities: a Markov chain over regimes, each regime a 2-D Gaussian mixture
// whose means may drift on a deterministic sinusoidal schedule.

namespace rfn::synth {

using diff::RealArray;

struct MixtureComponent {
  double weight = 1.0;
  std::array<double, 2> mean{0.5, 0.5};
  std::array<double, 2> sigma{0.05, 0.05};
  double correlation = 0.0;
};

struct Regime {
  std::vector<MixtureComponent> components;
  std::array<double, 2> drift_amplitude{0.0, 0.0};
  double drift_period = 0.0;  // in bins; 0 = static

  std::array<double, 2> shift(std::size_t t) const {
    if (drift_period <= 0.0) return {0.0, 0.0};
    const double s = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / drift_period);
    return {drift_amplitude[0] * s, drift_amplitude[1] * s};
  }
};

struct OracleProcess {
  std::vector<Regime> regimes;
  std::vector<std::vector<double>> transition;  // row r: P(next | r)
  std::vector<double> initial;
  double points_per_bin = 100.0;  // Poisson mean
  std::uint64_t seed = 0;

  static constexpr double kMaxOutsideMass = 1e-6;

  // Upper bound on the mixture mass outside the unit square, over every
  // drift phase.
  static double outside_mass(const Regime& r) {
    auto tail = [](double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); };
    double mass = 0.0;
    for (const auto& c : r.components) {
      double m = 0.0;
      for (int d = 0; d < 2; ++d) {
        const double a = std::abs(r.drift_amplitude[d]);
        m += tail((c.mean[d] - a) / c.sigma[d]) + tail((1.0 - c.mean[d] - a) / c.sigma[d]);
      }
      mass += c.weight * m;
    }
    return mass;
  }

  void validate() const {
    if (regimes.empty()) throw UsageError("oracle process needs at least one regime");
    const std::size_t R = regimes.size();
    auto check_simplex = [](const std::vector<double>& p, const std::string& what) {
      double s = 0.0;
      for (double v : p) {
        if (v < 0.0) throw UsageError(what + " has a negative probability");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-9) throw UsageError(what + " does not sum to 1");
    };
    if (initial.size() != R) throw UsageError("initial distribution size mismatch");
    check_simplex(initial, "initial regime distribution");
    if (transition.size() != R) throw UsageError("transition matrix size mismatch");
    for (const auto& row : transition) {
      if (row.size() != R) throw UsageError("transition matrix size mismatch");
      check_simplex(row, "transition row");
    }
    if (!(points_per_bin > 0.0)) throw UsageError("points_per_bin must be positive");
    for (const auto& r : regimes) {
      if (r.components.empty()) throw UsageError("regime without mixture components");
      std::vector<double> w;
      for (const auto& c : r.components) {
        if (!(c.sigma[0] > 0.0) || !(c.sigma[1] > 0.0) || !(std::abs(c.correlation) < 1.0)) {
          throw UsageError("mixture covariance is not positive definite");
        }
        w.push_back(c.weight);
      }
      check_simplex(w, "mixture weights");
      if (outside_mass(r) > kMaxOutsideMass) {
        throw UsageError("mixture mass outside the unit square exceeds 1e-6");
      }
    }
  }
};

// Exact per-bin density for a realized regime path.
class OracleHandle {
 public:
  OracleHandle() = default;
  OracleHandle(OracleProcess process, std::vector<std::size_t> regime_path)
      : process_(std::move(process)), path_(std::move(regime_path)) {}

  std::size_t bins() const { return path_.size(); }
  const std::vector<std::size_t>& regime_path() const { return path_; }
  const OracleProcess& process() const { return process_; }

  std::vector<MixtureComponent> components(std::size_t t) const {
    if (t >= path_.size()) throw UsageError("oracle_log_density: bin index out of range");
    const Regime& r = process_.regimes[path_[t]];
    const auto s = r.shift(t);
    std::vector<MixtureComponent> out = r.components;
    for (auto& c : out) {
      c.mean[0] += s[0];
      c.mean[1] += s[1];
    }
    return out;
  }

  double log_density(std::size_t t, double x, double y) const {
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms;
    for (const auto& c : components(t)) {
      const double u = (x - c.mean[0]) / c.sigma[0];
      const double v = (y - c.mean[1]) / c.sigma[1];
      const double rho = c.correlation;
      const double one_m = 1.0 - rho * rho;
      const double q = (u * u - 2.0 * rho * u * v + v * v) / one_m;
      const double lp = std::log(c.weight) - std::log(2.0 * std::numbers::pi) -
                        std::log(c.sigma[0] * c.sigma[1]) - 0.5 * std::log(one_m) - 0.5 * q;
      terms.push_back(lp);
      best = std::max(best, lp);
    }
    double s = 0.0;
    for (double lp : terms) s += std::exp(lp - best);
    return best + std::log(s);
  }

 private:
  OracleProcess process_;
  std::vector<std::size_t> path_;
};

inline double oracle_log_density(const OracleHandle& h, std::size_t t,
                                 const std::array<double, 2>& p) {
  return h.log_density(t, p[0], p[1]);
}

struct SyntheticSample {
  std::vector<geo::TimeBin> bins;
  std::vector<std::size_t> regime_path;
  OracleHandle oracle;
};

inline SyntheticSample generate(const OracleProcess& process, std::size_t T,
                                double bin_width = 7200.0) {
  process.validate();
  if (T < 1) throw UsageError("generate: need at least one bin");
  Rng rng(derive_seed(process.seed, "synth.generate"));
  std::vector<std::size_t> path(T);
  {
    std::discrete_distribution<std::size_t> init(process.initial.begin(), process.initial.end());
    path[0] = init(rng);
    for (std::size_t t = 1; t < T; ++t) {
      const auto& row = process.transition[path[t - 1]];
      std::discrete_distribution<std::size_t> next(row.begin(), row.end());
      path[t] = next(rng);
    }
  }
  OracleHandle oracle(process, path);
  SyntheticSample out;
  std::poisson_distribution<std::size_t> count(process.points_per_bin);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t t = 0; t < T; ++t) {
    const auto comps = oracle.components(t);
    std::vector<double> w;
    for (const auto& c : comps) w.push_back(c.weight);
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    const std::size_t n = count(rng);
    geo::TimeBin bin;
    bin.bin_index = t;
    bin.start_time = static_cast<double>(t) * bin_width;
    bin.points = RealArray(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
      double x = 0.0, y = 0.0;
      do {  // outside mass is below 1e-6, so this almost never repeats
        const auto& c = comps[pick(rng)];
        const double z1 = normal(rng), z2 = normal(rng);
        x = c.mean[0] + c.sigma[0] * z1;
        y = c.mean[1] +
            c.sigma[1] * (c.correlation * z1 + std::sqrt(1.0 - c.correlation * c.correlation) * z2);
      } while (x < 0.0 || x > 1.0 || y < 0.0 || y > 1.0);
      bin.points(i, 0) = x;
      bin.points(i, 1) = y;
    }
    out.bins.push_back(std::move(bin));
  }
  out.regime_path = path;
  out.oracle = std::move(oracle);
  return out;
}

// Probability mass of each cell of an m x m grid over the unit square,
// renormalized to the square. Exact for uncorrelated components; correlated
// components integrate the exact conditional y mass with a 64-point midpoint
// rule along x.
inline RealArray oracle_cell_masses(const OracleHandle& h, std::size_t t, std::size_t m) {
  RealArray mass(m, m);
  auto cdf = [](double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); };
  const double w = 1.0 / static_cast<double>(m);
  for (const auto& c : h.components(t)) {
    if (c.correlation == 0.0) {
      std::vector<double> px(m), py(m);
      for (std::size_t i = 0; i < m; ++i) {
        const double a = i * w, b = (i + 1) * w;
        px[i] = cdf((b - c.mean[0]) / c.sigma[0]) - cdf((a - c.mean[0]) / c.sigma[0]);
        py[i] = cdf((b - c.mean[1]) / c.sigma[1]) - cdf((a - c.mean[1]) / c.sigma[1]);
      }
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) mass(i, j) += c.weight * px[i] * py[j];
    } else {
      // y given x is Gaussian, so only the x direction needs quadrature.
      constexpr int sub = 64;
      const double rho = c.correlation;
      const double cond_sigma = c.sigma[1] * std::sqrt(1.0 - rho * rho);
      const double hw = w / sub;
      for (std::size_t i = 0; i < m; ++i) {
        for (int a = 0; a < sub; ++a) {
          const double x = i * w + (a + 0.5) * hw;
          const double u = (x - c.mean[0]) / c.sigma[0];
          const double px = std::exp(-0.5 * u * u) / (c.sigma[0] * std::sqrt(2.0 * std::numbers::pi)) * hw;
          const double cond_mean = c.mean[1] + rho * c.sigma[1] * u;
          for (std::size_t j = 0; j < m; ++j) {
            const double py = cdf(((j + 1) * w - cond_mean) / cond_sigma) - cdf((j * w - cond_mean) / cond_sigma);
            mass(i, j) += c.weight * px * py;
          }
        }
      }
    }
  }
  const double total = mass.sum();
  for (double& v : mass.values()) v /= total;
  return mass;
}

// ---- serialization (stored in the dataset manifest) -----------------------

inline nlohmann::json process_to_json(const OracleProcess& p) {
  nlohmann::json regimes = nlohmann::json::array();
  for (const auto& r : p.regimes) {
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : r.components) {
      comps.push_back({{"weight", c.weight},
                       {"mean", c.mean},
                       {"sigma", c.sigma},
                       {"correlation", c.correlation}});
    }
    regimes.push_back({{"components", comps},
                       {"drift_amplitude", r.drift_amplitude},
                       {"drift_period", r.drift_period}});
  }
  return {{"regimes", regimes},
          {"transition", p.transition},
          {"initial", p.initial},
          {"points_per_bin", p.points_per_bin},
          {"seed", p.seed}};
}

inline OracleProcess process_from_json(const nlohmann::json& j) {
  OracleProcess p;
  for (const auto& r : j.at("regimes")) {
    Regime reg;
    for (const auto& c : r.at("components")) {
      reg.components.push_back({c.at("weight").get<double>(),
                                c.at("mean").get<std::array<double, 2>>(),
                                c.at("sigma").get<std::array<double, 2>>(),
                                c.value("correlation", 0.0)});
    }
    reg.drift_amplitude = r.value("drift_amplitude", std::array<double, 2>{0.0, 0.0});
    reg.drift_period = r.value("drift_period", 0.0);
    p.regimes.push_back(std::move(reg));
  }
  p.transition = j.at("transition").get<std::vector<std::vector<double>>>();
  p.initial = j.at("initial").get<std::vector<double>>();
  p.points_per_bin = j.at("points_per_bin").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  return p;
}

// ---- stock processes -------------------------------------------------------

// One static isotropic Gaussian at the center of the square.
inline OracleProcess single_gaussian_process(std::uint64_t seed, double points_per_bin = 100.0,
                                             double sigma = 0.05) {
  OracleProcess p;
  p.regimes = {Regime{{MixtureComponent{1.0, {0.5, 0.5}, {sigma, sigma}, 0.0}}}};
  p.transition = {{1.0}};
  p.initial = {1.0};
  p.points_per_bin = points_per_bin;
  p.seed = seed;
  return p;
}

// Two regimes, each three Gaussians laid along an arc; the arcs face each
// other from opposite halves of the square with no overlapping mass. The
// chain persists with probability `stay`.
inline OracleProcess two_regime_crescent_process(std::uint64_t seed, double points_per_bin = 100.0,
                                                 double stay = 0.7) {
  const double sigma = 0.035;
  const double radius = 0.14;
  auto arc = [&](double cx, double cy, double a0, double a1, double a2) {
    Regime r;
    for (double deg : {a0, a1, a2}) {
      const double a = deg * std::numbers::pi / 180.0;
      r.components.push_back(MixtureComponent{1.0 / 3.0,
                                              {cx + radius * std::cos(a), cy + radius * std::sin(a)},
                                              {sigma, sigma},
                                              0.0});
    }
    return r;
  };
  OracleProcess p;
  p.regimes = {arc(0.32, 0.64, -150.0, -90.0, -30.0), arc(0.68, 0.36, 30.0, 90.0, 150.0)};
  p.transition = {{stay, 1.0 - stay}, {1.0 - stay, stay}};
  p.initial = {0.5, 0.5};
  p.points_per_bin = points_per_bin;
  p.seed = seed;
  return p;
}

// Builds a dataset (unit bounding box, 2-hour bins) from a generated sample.
inline geo::Dataset to_dataset(const OracleProcess& process, const SyntheticSample& sample,
                               std::size_t k, const geo::SplitConfig& split,
                               double bin_width = 7200.0) {
  geo::Dataset ds;
  ds.box = {0.0, 1.0, 0.0, 1.0};
  ds.sequence.k = k;
  ds.sequence.bin_width = bin_width;
  for (const auto& b : sample.bins) {
    ds.sequence.frames.push_back(geo::histogram_frame(b.points, k));
    ds.sequence.empty.push_back(b.count() == 0);
    ds.sequence.bins.push_back(b);
  }
  ds.split = geo::split_indices(sample.bins.size(), split);
  ds.source = {{"kind", "synthetic"},
               {"process", process_to_json(process)},
               {"regime_path", sample.regime_path}};
  return ds;
}

// Rebuilds the oracle of a synthetic dataset from its manifest.
inline OracleHandle oracle_from_dataset(const geo::Dataset& ds) {
  if (ds.source.value("kind", std::string()) != "synthetic") {
    throw DataError("dataset was not produced by the synthetic generator");
  }
  return OracleHandle(process_from_json(ds.source.at("process")),
                      ds.source.at("regime_path").get<std::vector<std::size_t>>());
}

}  // namespace rfn::synth
