#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "rfn/geodata/histogram.hpp"

// On-disk dataset directory:
//   manifest.json        k, bounding box, bin width, split ranges, counts
//   <split>_points.csv   bin_index,x,y          (normalized coordinates)
//   <split>_frames.csv   bin_index,start_time,empty,c_0_0,...,c_{k-1}_{k-1}

namespace rfn::geo {

struct Dataset {
  HistogramSequence sequence;
  BoundingBox box;
  SplitIndices split;
  nlohmann::json counts = nlohmann::json::object();
  nlohmann::json source = nlohmann::json::object();
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline const char* split_name(int s) {
  static const char* names[] = {"train", "val", "test"};
  return names[s];
}

inline IndexRange split_range(const SplitIndices& idx, int s) {
  return s == 0 ? idx.train : s == 1 ? idx.val : idx.test;
}

}  // namespace detail

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto& seq = ds.sequence;
  const std::size_t k = seq.k;

  nlohmann::json split = nlohmann::json::object();
  for (int s = 0; s < 3; ++s) {
    const IndexRange r = detail::split_range(ds.split, s);
    std::size_t points = 0;
    for (std::size_t t = r.begin; t < r.end; ++t) points += seq.bins[t].count();
    split[detail::split_name(s)] = {{"begin", r.begin}, {"end", r.end}, {"points", points}};
  }
  std::size_t empty_bins = 0;
  for (bool e : seq.empty) empty_bins += e ? 1 : 0;
  nlohmann::json counts = ds.counts;
  counts["bins"] = seq.size();
  counts["points"] = seq.point_count();
  counts["empty_bins"] = empty_bins;
  counts["dropped_outside"] = seq.dropped_outside;

  nlohmann::json manifest = {
      {"format", "rfn-dataset"},
      {"version", 1},
      {"k", k},
      {"bin_width", seq.bin_width},
      {"origin_time", seq.bins.empty() ? 0.0 : seq.bins.front().start_time},
      {"bounding_box",
       {{"lon_min", ds.box.lon_min},
        {"lon_max", ds.box.lon_max},
        {"lat_min", ds.box.lat_min},
        {"lat_max", ds.box.lat_max}}},
      {"log_jacobian_degrees", ds.box.log_jacobian()},
      {"coordinates", "normalized unit square"},
      {"split", split},
      {"counts", counts},
      {"source", ds.source}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';

  for (int s = 0; s < 3; ++s) {
    const IndexRange r = detail::split_range(ds.split, s);
    std::ofstream pts(dir / (std::string(detail::split_name(s)) + "_points.csv"));
    pts << "bin_index,x,y\n";
    std::ofstream frm(dir / (std::string(detail::split_name(s)) + "_frames.csv"));
    frm << "bin_index,start_time,empty";
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) frm << ",c_" << i << '_' << j;
    frm << '\n';
    for (std::size_t t = r.begin; t < r.end; ++t) {
      const auto& bin = seq.bins[t];
      for (std::size_t p = 0; p < bin.count(); ++p) {
        pts << t << ',' << format_double(bin.points(p, 0)) << ','
            << format_double(bin.points(p, 1)) << '\n';
      }
      frm << t << ',' << format_double(bin.start_time) << ',' << (seq.empty[t] ? 1 : 0);
      for (double v : seq.frames[t].values()) frm << ',' << format_double(v);
      frm << '\n';
    }
  }
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw DataError("dataset manifest not found: " + mpath.string());
  nlohmann::json m;
  try {
    std::ifstream(mpath) >> m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed dataset manifest " + mpath.string() + ": " + e.what());
  }
  if (m.value("format", std::string()) != "rfn-dataset") {
    throw DataError("not an rfn dataset manifest: " + mpath.string());
  }
  Dataset ds;
  ds.sequence.k = m.at("k").get<std::size_t>();
  ds.sequence.bin_width = m.at("bin_width").get<double>();
  const auto& bb = m.at("bounding_box");
  ds.box = {bb.at("lon_min").get<double>(), bb.at("lon_max").get<double>(),
            bb.at("lat_min").get<double>(), bb.at("lat_max").get<double>()};
  ds.counts = m.value("counts", nlohmann::json::object());
  ds.source = m.value("source", nlohmann::json::object());
  ds.sequence.dropped_outside = ds.counts.value("dropped_outside", std::size_t{0});
  IndexRange ranges[3];
  for (int s = 0; s < 3; ++s) {
    const auto& j = m.at("split").at(detail::split_name(s));
    ranges[s] = {j.at("begin").get<std::size_t>(), j.at("end").get<std::size_t>()};
  }
  ds.split = {ranges[0], ranges[1], ranges[2]};
  const std::size_t n = ranges[2].end;
  const std::size_t k = ds.sequence.k;
  ds.sequence.frames.assign(n, RealArray(k, k));
  ds.sequence.bins.assign(n, TimeBin{});
  ds.sequence.empty.assign(n, true);
  std::vector<std::vector<std::array<double, 2>>> pts(n);

  for (int s = 0; s < 3; ++s) {
    const std::string name = detail::split_name(s);
    std::ifstream frm(dir / (name + "_frames.csv"));
    if (!frm) throw DataError("missing frame file for split " + name);
    std::string line;
    std::getline(frm, line);
    while (std::getline(frm, line)) {
      if (line.empty()) continue;
      const auto fields = detail::split(line, ',');
      if (fields.size() != 3 + k * k) throw DataError("malformed frame row in " + name);
      const auto t = static_cast<std::size_t>(*detail::parse_double(fields[0]));
      if (t >= n) throw DataError("frame bin index out of range in " + name);
      ds.sequence.bins[t].bin_index = t;
      ds.sequence.bins[t].start_time = *detail::parse_double(fields[1]);
      ds.sequence.empty[t] = fields[2] == "1";
      for (std::size_t c = 0; c < k * k; ++c) {
        auto v = detail::parse_double(fields[3 + c]);
        if (!v) throw DataError("malformed frame value in " + name);
        ds.sequence.frames[t][c] = *v;
      }
    }
    std::ifstream pf(dir / (name + "_points.csv"));
    if (!pf) throw DataError("missing point file for split " + name);
    std::getline(pf, line);
    while (std::getline(pf, line)) {
      if (line.empty()) continue;
      const auto fields = detail::split(line, ',');
      auto t = detail::parse_double(fields.at(0));
      auto x = detail::parse_double(fields.at(1));
      auto y = detail::parse_double(fields.at(2));
      if (!t || !x || !y || *t < 0 || static_cast<std::size_t>(*t) >= n) {
        throw DataError("malformed point row in " + name);
      }
      pts[static_cast<std::size_t>(*t)].push_back({*x, *y});
    }
  }
  for (std::size_t t = 0; t < n; ++t) {
    RealArray p(pts[t].size(), 2);
    for (std::size_t i = 0; i < pts[t].size(); ++i) {
      p(i, 0) = pts[t][i][0];
      p(i, 1) = pts[t][i][1];
    }
    ds.sequence.bins[t].points = std::move(p);
  }
  return ds;
}

}  // namespace rfn::geo
