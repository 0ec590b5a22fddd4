#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "rfn/diffcore/array.hpp"
#include "rfn/geodata/trips.hpp"

namespace rfn::geo {

using diff::RealArray;

// Points of one time bin in normalized [0,1]^2 coordinates (N x 2).
struct TimeBin {
  std::size_t bin_index = 0;
  double start_time = 0.0;
  RealArray points{0, 2};

  std::size_t count() const { return points.rows(); }
};

// Time-ordered k x k normalized histograms with the point sets they summarize.
// frames[t](i, j) is the mass of cell i along x and j along y.
struct HistogramSequence {
  std::size_t k = 64;
  double bin_width = 7200.0;
  std::vector<RealArray> frames;
  std::vector<TimeBin> bins;
  std::vector<bool> empty;
  std::size_t dropped_outside = 0;

  std::size_t size() const { return frames.size(); }
  std::size_t point_count() const {
    std::size_t n = 0;
    for (const auto& b : bins) n += b.count();
    return n;
  }
};

// Cell along one axis: [i/k, (i+1)/k), with 1.0 (and anything beyond the
// border) assigned to the edge cells.
inline std::size_t cell_index(double v, std::size_t k) {
  if (!(v > 0.0)) return 0;
  const auto i = static_cast<std::size_t>(std::floor(v * static_cast<double>(k)));
  return std::min(i, k - 1);
}

inline RealArray count_cells(const RealArray& points, std::size_t k) {
  RealArray counts(k, k);
  for (std::size_t r = 0; r < points.rows(); ++r) {
    counts(cell_index(points(r, 0), k), cell_index(points(r, 1), k)) += 1.0;
  }
  return counts;
}

// Normalized histogram of a point set; all zeros when the set is empty.
inline RealArray histogram_frame(const RealArray& points, std::size_t k) {
  RealArray frame = count_cells(points, k);
  const double n = static_cast<double>(points.rows());
  if (n > 0.0)
    for (double& v : frame.values()) v /= n;
  return frame;
}

// Maps records into the unit square, groups them into fixed-width bins
// aligned to multiples of bin_width since the epoch, and histograms each bin.
// Bins without records are kept as all-zero frames flagged empty.
inline HistogramSequence bin_and_normalize(const std::vector<TripRecord>& records,
                                           const BoundingBox& box, double bin_width,
                                           std::size_t k) {
  if (records.empty()) throw DataError("bin_and_normalize: no records");
  if (k < 2) throw UsageError("bin_and_normalize: k must be at least 2");
  if (!(bin_width > 0.0)) throw UsageError("bin_and_normalize: bin width must be positive");
  box.validate();

  double t_min = records.front().event_time, t_max = t_min;
  for (const auto& r : records) {
    t_min = std::min(t_min, r.event_time);
    t_max = std::max(t_max, r.event_time);
  }
  const double origin = std::floor(t_min / bin_width) * bin_width;
  const auto n_bins = static_cast<std::size_t>(std::floor((t_max - origin) / bin_width)) + 1;

  std::vector<std::vector<std::array<double, 2>>> grouped(n_bins);
  HistogramSequence seq;
  seq.k = k;
  seq.bin_width = bin_width;
  for (const auto& r : records) {
    if (!box.contains(r.longitude, r.latitude)) {
      ++seq.dropped_outside;
      continue;
    }
    const auto b = std::min(
        static_cast<std::size_t>(std::floor((r.event_time - origin) / bin_width)), n_bins - 1);
    auto [x, y] = box.normalize(r.longitude, r.latitude);
    grouped[b].push_back({x, y});
  }
  for (std::size_t b = 0; b < n_bins; ++b) {
    TimeBin bin;
    bin.bin_index = b;
    bin.start_time = origin + static_cast<double>(b) * bin_width;
    bin.points = RealArray(grouped[b].size(), 2);
    for (std::size_t i = 0; i < grouped[b].size(); ++i) {
      bin.points(i, 0) = grouped[b][i][0];
      bin.points(i, 1) = grouped[b][i][1];
    }
    seq.frames.push_back(histogram_frame(bin.points, k));
    seq.empty.push_back(grouped[b].empty());
    seq.bins.push_back(std::move(bin));
  }
  return seq;
}

struct SplitConfig {
  double train_fraction = 0.5;
  double val_fraction = 0.25;
  double test_fraction = 0.25;

  void validate() const {
    if (!(train_fraction > 0.0) || !(val_fraction > 0.0) || !(test_fraction > 0.0)) {
      throw UsageError("split fractions must be positive");
    }
    if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
      throw UsageError("split fractions must sum to 1");
    }
  }
};

// Half-open index ranges [begin, end) into a sequence.
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct SplitIndices {
  IndexRange train, val, test;
};

// Contiguous split, train earliest; floor-rounded sizes with the remainder
// going to the test split.
inline SplitIndices split_indices(std::size_t n, const SplitConfig& cfg) {
  cfg.validate();
  const auto floor_size = [n](double f) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * f + 1e-9));
  };
  const std::size_t n_train = floor_size(cfg.train_fraction);
  const std::size_t n_val = floor_size(cfg.val_fraction);
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
    throw DataError("split_temporal: " + std::to_string(n) +
                    " frames leave an empty train, validation or test split");
  }
  return {{0, n_train}, {n_train, n_train + n_val}, {n_train + n_val, n}};
}

inline HistogramSequence subsequence(const HistogramSequence& seq, IndexRange r) {
  HistogramSequence out;
  out.k = seq.k;
  out.bin_width = seq.bin_width;
  for (std::size_t i = r.begin; i < r.end; ++i) {
    out.frames.push_back(seq.frames[i]);
    out.bins.push_back(seq.bins[i]);
    out.empty.push_back(seq.empty[i]);
  }
  return out;
}

struct TemporalSplit {
  HistogramSequence train, val, test;
  SplitIndices indices;
};

inline TemporalSplit split_temporal(const HistogramSequence& seq, const SplitConfig& cfg) {
  const SplitIndices idx = split_indices(seq.size(), cfg);
  return {subsequence(seq, idx.train), subsequence(seq, idx.val), subsequence(seq, idx.test), idx};
}

}  // namespace rfn::geo
