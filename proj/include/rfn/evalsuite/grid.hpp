#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <vector>

#include <nlohmann/json.hpp>

#include "rfn/geodata/dataset.hpp"
#include "rfn/models/inference.hpp"

namespace rfn::eval {

using diff::RealArray;
using models::SequenceModel;

// Log-density (or log-probability) values on an m x m grid of cell centers
// ((i + 0.5) / m, (j + 0.5) / m) of the unit square; values(i, j) belongs to
// cell i along x and j along y.
struct GridEvaluation {
  std::size_t m = 0;
  RealArray values;
  bool quantized = false;
  geo::BoundingBox box;
  nlohmann::json conditioning = nlohmann::json::object();

  static double center(std::size_t i, std::size_t m) {
    return (static_cast<double>(i) + 0.5) / static_cast<double>(m);
  }

  // Cell center in longitude / latitude.
  std::pair<double, double> center_lonlat(std::size_t i, std::size_t j) const {
    return box.denormalize(center(i, m), center(j, m));
  }

  // Log-density per square degree for continuous grids.
  double log_density_degrees(std::size_t i, std::size_t j) const {
    return values(i, j) - box.log_jacobian();
  }
};

// Points (N x 2) to per-point log-densities in normalized coordinates.
using DensityFn = std::function<std::vector<double>(const RealArray& points)>;

inline RealArray cell_centers(std::size_t m) {
  RealArray pts(m * m, 2);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      pts(i * m + j, 0) = GridEvaluation::center(i, m);
      pts(i * m + j, 1) = GridEvaluation::center(j, m);
    }
  return pts;
}

inline GridEvaluation evaluate_grid(const DensityFn& density, std::size_t m) {
  if (m < 2) throw UsageError("grid side must be at least 2");
  const std::vector<double> lp = density(cell_centers(m));
  GridEvaluation g;
  g.m = m;
  g.values = RealArray(m, m);
  for (std::size_t i = 0; i < m * m; ++i) g.values[i] = lp[i];
  return g;
}

// One-step predictive density of step `step` given all data before it:
// the prefix is filtered with S posterior particles, each particle draws a
// latent from the conditional prior, and the density is the mean emission
// density over the S latents (exact for deterministic models).
inline DensityFn predictive_density(const SequenceModel& m, const geo::HistogramSequence& seq,
                                    std::size_t step, std::size_t samples, Rng& rng) {
  if (step >= seq.size() + 1) throw UsageError("conditioning step lies beyond the sequence");
  const std::size_t S = m.config().stochastic() ? std::max<std::size_t>(1, samples) : 1;
  const models::StateValues state = models::filter_states(m, seq, {0, step}, nullptr, S, rng);
  const models::PredictiveStep p =
      models::predict_step(m, state, models::previous_frame(seq, step), S, rng);
  RealArray contexts = p.contexts;
  return [&m, contexts](const RealArray& points) {
    return models::mixture_log_density(m, points, contexts);
  };
}

inline nlohmann::json conditioning_record(const SequenceModel& m, std::size_t step,
                                          std::size_t samples) {
  return {{"step", step},
          {"model_id", m.config().model_id()},
          {"samples", m.config().stochastic() ? samples : 1}};
}

inline GridEvaluation grid_heatmap(const SequenceModel& m, const geo::HistogramSequence& seq,
                                   const geo::BoundingBox& box, std::size_t step, std::size_t grid,
                                   std::size_t samples, Rng& rng) {
  GridEvaluation g = evaluate_grid(predictive_density(m, seq, step, samples, rng), grid);
  g.box = box;
  g.conditioning = conditioning_record(m, step, samples);
  for (double v : g.values.values()) {
    if (!std::isfinite(v)) throw DomainError("grid_heatmap: non-finite log-density");
  }
  return g;
}

// Log-softmax over all cells.
inline RealArray log_softmax(const RealArray& logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits.values()) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits.values()) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  RealArray out = logits;
  for (double& v : out.values()) v -= lse;
  return out;
}

// Quantization: log-density at the m x m cell centers normalized with a
// softmax into a categorical distribution over cells.
inline GridEvaluation quantize(const DensityFn& density, std::size_t m = 64) {
  GridEvaluation g = evaluate_grid(density, m);
  g.values = log_softmax(g.values);
  g.quantized = true;
  return g;
}

inline GridEvaluation quantize(const SequenceModel& model, const geo::HistogramSequence& seq,
                               const geo::BoundingBox& box, std::size_t step, std::size_t samples,
                               Rng& rng, std::size_t m = 64) {
  GridEvaluation g = quantize(predictive_density(model, seq, step, samples, rng), m);
  g.box = box;
  g.conditioning = conditioning_record(model, step, samples);
  return g;
}

inline RealArray probabilities(const GridEvaluation& g) {
  RealArray p = g.values;
  for (double& v : p.values()) v = std::exp(v);
  return p;
}

struct CategoricalScore {
  double value = 0.0;
  bool degenerate = false;  // a cell with counts has zero probability
};

// sum_c count_c * log p_c over cells of matching shape.
inline CategoricalScore categorical_log_likelihood(const RealArray& log_probs,
                                                   const RealArray& counts) {
  if (!log_probs.same_shape(counts)) {
    throw UsageError("categorical_log_likelihood: counts grid does not match the quantization grid");
  }
  CategoricalScore s;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const double c = counts[i];
    if (c < 0.0 || c != std::floor(c)) {
      throw UsageError("categorical_log_likelihood: counts must be non-negative integers");
    }
    if (c == 0.0) continue;
    if (log_probs[i] == -std::numeric_limits<double>::infinity()) {
      s.degenerate = true;
      s.value = -std::numeric_limits<double>::infinity();
      continue;
    }
    if (!s.degenerate) s.value += c * log_probs[i];
  }
  return s;
}

inline CategoricalScore categorical_log_likelihood(const GridEvaluation& g, const RealArray& counts) {
  if (!g.quantized) throw UsageError("categorical_log_likelihood: grid is not quantized");
  return categorical_log_likelihood(g.values, counts);
}

// ---- export ----------------------------------------------------------------

// Delimited grid: m rows x m columns, first row = northernmost cells (highest
// y), columns west to east.
inline void write_grid_csv(const GridEvaluation& g, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t r = 0; r < g.m; ++r) {
    const std::size_t j = g.m - 1 - r;
    for (std::size_t i = 0; i < g.m; ++i) {
      if (i) out << ',';
      out << geo::format_double(g.values(i, j));
    }
    out << '\n';
  }
}

// 8-bit binary graymap with min-max scaling, same orientation as the CSV.
inline void write_grid_pgm(const GridEvaluation& g, const std::filesystem::path& path) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : g.values.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << g.m << ' ' << g.m << "\n255\n";
  for (std::size_t r = 0; r < g.m; ++r) {
    const std::size_t j = g.m - 1 - r;
    for (std::size_t i = 0; i < g.m; ++i) {
      const double u = hi > lo ? (g.values(i, j) - lo) / (hi - lo) : 0.0;
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * u))));
    }
  }
}

inline nlohmann::json grid_manifest(const GridEvaluation& g) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : g.values.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {{"m", g.m},
          {"kind", g.quantized ? "log-probability" : "log-density"},
          {"units", g.quantized ? "log probability per cell"
                                : "log density per unit area of the normalized square"},
          {"orientation", "row 0 = north (max latitude), column 0 = west (min longitude)"},
          {"bounding_box",
           {{"lon_min", g.box.lon_min},
            {"lon_max", g.box.lon_max},
            {"lat_min", g.box.lat_min},
            {"lat_max", g.box.lat_max}}},
          {"log_jacobian_degrees", g.box.log_jacobian()},
          {"min", lo},
          {"max", hi},
          {"conditioning", g.conditioning}};
}

// Writes <stem>.csv, <stem>.pgm and <stem>.json into dir.
inline void write_grid(const GridEvaluation& g, const std::filesystem::path& dir,
                       const std::string& stem) {
  std::filesystem::create_directories(dir);
  write_grid_csv(g, dir / (stem + ".csv"));
  write_grid_pgm(g, dir / (stem + ".pgm"));
  std::ofstream(dir / (stem + ".json")) << grid_manifest(g).dump(2) << '\n';
}

inline RealArray read_grid_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (auto f : geo::detail::split(line, ',')) {
      auto v = geo::detail::parse_double(f);
      if (!v) throw DataError("malformed grid value in " + path.string());
      row.push_back(*v);
    }
    rows.push_back(std::move(row));
  }
  const std::size_t m = rows.size();
  RealArray g(m, m);
  for (std::size_t r = 0; r < m; ++r) {
    if (rows[r].size() != m) throw DataError("grid file is not square: " + path.string());
    for (std::size_t i = 0; i < m; ++i) g(i, m - 1 - r) = rows[r][i];
  }
  return g;
}

}  // namespace rfn::eval
