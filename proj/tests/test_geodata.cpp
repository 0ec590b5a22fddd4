#include <algorithm>
#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "rfn/geodata/dataset.hpp"
#include "support.hpp"

namespace rfn::geo {
namespace {

TripRecord at(double t, double lon, double lat) { return {t, lon, lat, std::nullopt, std::nullopt}; }

TEST(ParseTrips, MapsFieldsOfOneRow) {
  std::istringstream in("time,longitude,latitude\n2016-03-01T10:00:00Z,-73.98,40.75\n");
  const auto r = parse_trips(in, TripSchema{});
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_DOUBLE_EQ(r.records[0].longitude, -73.98);
  EXPECT_DOUBLE_EQ(r.records[0].latitude, 40.75);
  // 2016-03-01 is day 16861 since the epoch.
  EXPECT_DOUBLE_EQ(r.records[0].event_time, 16861.0 * 86400.0 + 10 * 3600.0);
  EXPECT_EQ(r.skipped, 0u);
}

TEST(ParseTrips, MalformedLatitudeIsSkippedAndCounted) {
  std::istringstream in("time,longitude,latitude\n2016-03-01T10:00:00Z,-73.98,abc\n");
  const auto r = parse_trips(in, TripSchema{});
  EXPECT_TRUE(r.records.empty());
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.skipped_lines, std::vector<std::size_t>{2});
}

TEST(ParseTrips, CountsValidAndMalformedRows) {
  std::istringstream in(
      "time,longitude,latitude\n"
      "2016-03-01T10:00:00Z,-73.98,40.75\n"
      "not-a-time,-73.98,40.75\n"
      "1456826400,-73.90,40.70\n"
      "2016-03-01T11:00:00+01:00,-73.95,40.72\n"
      "2016-03-01T12:00:00Z,-200,40.7\n");
  const auto r = parse_trips(in, TripSchema{});
  EXPECT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.skipped, 2u);
  EXPECT_DOUBLE_EQ(r.records[1].event_time, 1456826400.0);
  EXPECT_DOUBLE_EQ(r.records[2].event_time, 16861.0 * 86400.0 + 10 * 3600.0);
}

TEST(ParseTrips, ConfigurableColumnsDelimiterAndDuration) {
  std::istringstream in("start;end;x;y;who\n100;160;1.5;2.5;u1\n100;90;1;2;u2\n");
  TripSchema s;
  s.delimiter = ';';
  s.time_column = "start";
  s.end_time_column = "end";
  s.longitude_column = "x";
  s.latitude_column = "y";
  s.user_column = "who";
  const auto r = parse_trips(in, s);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_DOUBLE_EQ(*r.records[0].duration, 60.0);
  EXPECT_EQ(*r.records[0].user_id, "u1");
  EXPECT_EQ(r.skipped, 1u);  // end before start
}

TEST(ParseTrips, MissingColumnRejected) {
  std::istringstream in("when,longitude,latitude\n1,2,3\n");
  EXPECT_THROW(parse_trips(in, TripSchema{}), DataError);
}

TEST(FilterRecords, DurationBoundsRemoveShortTrips) {
  TripRecord r = at(0, 0.5, 0.5);
  r.duration = 10.0;
  FilterOptions o;
  o.min_duration = 30.0;
  o.max_duration = 3 * 3600.0;
  const auto f = filter_records({r}, o);
  EXPECT_TRUE(f.records.empty());
  EXPECT_EQ(f.removed_duration, 1u);
}

TEST(FilterRecords, OutsideBoxRemoved) {
  const auto f = filter_records({at(0, 1.5, 0.5), at(0, 0.5, 0.5)}, FilterOptions{});
  EXPECT_EQ(f.records.size(), 1u);
  EXPECT_EQ(f.removed_outside, 1u);
}

TEST(FilterRecords, SlidingDedupWindowPerUser) {
  auto user = [](double t) {
    TripRecord r = at(t, 0.5, 0.5);
    r.user_id = "u";
    return r;
  };
  FilterOptions o;
  o.dedup_window = 300.0;
  const auto f = filter_records({user(0), user(120), user(400)}, o);
  ASSERT_EQ(f.records.size(), 2u);
  EXPECT_EQ(f.records[0].event_time, 0.0);
  EXPECT_EQ(f.records[1].event_time, 400.0);
  EXPECT_EQ(f.removed_duplicate, 1u);
}

TEST(FilterRecords, ConservesRecordCount) {
  Rng rng(2);
  std::vector<TripRecord> recs;
  std::uniform_real_distribution<double> u(-0.5, 1.5);
  for (int i = 0; i < 500; ++i) {
    TripRecord r = at(i * 7.0, u(rng), u(rng));
    if (i % 3) r.duration = u(rng) * 100.0;
    r.user_id = std::to_string(i % 11);
    recs.push_back(r);
  }
  FilterOptions o;
  o.min_duration = 30.0;
  o.dedup_window = 50.0;
  const auto f = filter_records(recs, o);
  EXPECT_EQ(f.records.size() + f.removed(), recs.size());
}

TEST(BinAndNormalize, FourPointFrame) {
  const std::vector<TripRecord> recs = {at(0, 0.1, 0.1), at(1, 0.9, 0.9), at(2, 0.8, 0.7),
                                        at(3, 0.2, 0.6)};
  const auto seq = bin_and_normalize(recs, BoundingBox{}, 7200.0, 2);
  ASSERT_EQ(seq.size(), 1u);
  const auto& f = seq.frames[0];
  EXPECT_DOUBLE_EQ(f(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(f(0, 1), 0.25);
  EXPECT_DOUBLE_EQ(f(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(f(1, 1), 0.5);
}

TEST(BinAndNormalize, BorderPointsGoToLastCell) {
  EXPECT_EQ(cell_index(1.0, 4), 3u);
  EXPECT_EQ(cell_index(0.0, 4), 0u);
  EXPECT_EQ(cell_index(0.25, 4), 1u);
}

TEST(BinAndNormalize, EmptyBinsKeptAndFlagged) {
  const auto seq = bin_and_normalize({at(0, 0.5, 0.5), at(3 * 7200.0 + 5, 0.2, 0.2)}, BoundingBox{},
                                     7200.0, 4);
  ASSERT_EQ(seq.size(), 4u);
  EXPECT_EQ(seq.empty, (std::vector<bool>{false, true, true, false}));
  EXPECT_EQ(seq.frames[1].sum(), 0.0);
  EXPECT_EQ(seq.bins.size(), seq.frames.size());
}

TEST(BinAndNormalize, NonEmptyFramesSumToOne) {
  Rng rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TripRecord> recs;
  for (int i = 0; i < 3000; ++i) recs.push_back(at(u(rng) * 20 * 7200.0, u(rng), u(rng)));
  const auto seq = bin_and_normalize(recs, BoundingBox{}, 7200.0, 8);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (!seq.empty[t]) {
      EXPECT_NEAR(seq.frames[t].sum(), 1.0, 1e-9);
    }
  }
  EXPECT_EQ(seq.point_count(), recs.size());
}

TEST(BinAndNormalize, UniformCellsWithinBinomialBounds) {
  Rng rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TripRecord> recs;
  const std::size_t n = 10000, k = 64;
  for (std::size_t i = 0; i < n; ++i) recs.push_back(at(1.0, u(rng), u(rng)));
  const auto seq = bin_and_normalize(recs, BoundingBox{}, 7200.0, k);
  const double p = 1.0 / (k * k);
  const double sd = std::sqrt(p * (1 - p) / n);
  for (double v : seq.frames[0].values()) EXPECT_LE(std::abs(v - p), 5 * sd);
}

TEST(BinAndNormalize, PermutationInvariantWithinBin) {
  Rng rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TripRecord> recs;
  for (int i = 0; i < 200; ++i) recs.push_back(at(u(rng) * 3 * 7200.0, u(rng), u(rng)));
  auto shuffled = recs;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto a = bin_and_normalize(recs, BoundingBox{}, 7200.0, 8);
  const auto b = bin_and_normalize(shuffled, BoundingBox{}, 7200.0, 8);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t t = 0; t < a.size(); ++t) EXPECT_EQ(a.frames[t], b.frames[t]);
}

TEST(BoundingBox, NormalizationRoundTrip) {
  const BoundingBox box{-74.03, -73.75, 40.63, 40.85};
  Rng rng(1);
  std::uniform_real_distribution<double> lon(box.lon_min, box.lon_max), lat(box.lat_min, box.lat_max);
  for (int i = 0; i < 1000; ++i) {
    const double a = lon(rng), b = lat(rng);
    auto [x, y] = box.normalize(a, b);
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
    auto [a2, b2] = box.denormalize(x, y);
    EXPECT_LT(std::abs(a2 - a), 1e-12);
    EXPECT_LT(std::abs(b2 - b), 1e-12);
  }
}

TEST(BoundingBox, InvalidRejected) {
  EXPECT_THROW((BoundingBox{1.0, 0.0, 0.0, 1.0}.validate()), UsageError);
}

TEST(Split, PaperRatioSizes) {
  auto sizes = [](std::size_t n) {
    const auto s = split_indices(n, SplitConfig{});
    return std::vector<std::size_t>{s.train.size(), s.val.size(), s.test.size()};
  };
  EXPECT_EQ(sizes(12), (std::vector<std::size_t>{6, 3, 3}));
  EXPECT_EQ(sizes(4), (std::vector<std::size_t>{2, 1, 1}));
  EXPECT_EQ(sizes(10), (std::vector<std::size_t>{5, 2, 3}));
}

TEST(Split, ContiguousAndOrdered) {
  for (std::size_t n = 4; n < 60; ++n) {
    const auto s = split_indices(n, SplitConfig{});
    EXPECT_EQ(s.train.begin, 0u);
    EXPECT_EQ(s.train.end, s.val.begin);
    EXPECT_EQ(s.val.end, s.test.begin);
    EXPECT_EQ(s.test.end, n);
  }
}

TEST(Split, TooShortOrBadFractionsRejected) {
  EXPECT_THROW(split_indices(2, SplitConfig{}), DataError);
  EXPECT_THROW(split_indices(10, SplitConfig{0.5, 0.5, 0.5}), UsageError);
}

TEST(Dataset, WriteReadRoundTrip) {
  Rng rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<TripRecord> recs;
  for (int i = 0; i < 300; ++i) recs.push_back(at(u(rng) * 12 * 7200.0, u(rng), u(rng)));
  Dataset ds;
  ds.sequence = bin_and_normalize(recs, BoundingBox{}, 7200.0, 8);
  ds.split = split_indices(ds.sequence.size(), SplitConfig{});
  ds.source = {{"kind", "test"}};
  const auto dir = test::scratch_dir("dataset");
  write_dataset(ds, dir);
  const Dataset back = read_dataset(dir);
  ASSERT_EQ(back.sequence.size(), ds.sequence.size());
  EXPECT_EQ(back.sequence.k, 8u);
  EXPECT_EQ(back.split.val.begin, ds.split.val.begin);
  EXPECT_EQ(back.split.test.end, ds.split.test.end);
  for (std::size_t t = 0; t < ds.sequence.size(); ++t) {
    EXPECT_EQ(back.sequence.bins[t].points, ds.sequence.bins[t].points);
    EXPECT_EQ(back.sequence.frames[t], ds.sequence.frames[t]);
    EXPECT_EQ(back.sequence.empty[t], ds.sequence.empty[t]);
  }
  EXPECT_EQ(back.source.at("kind"), "test");
}

TEST(Dataset, MissingDirectoryIsDataError) {
  EXPECT_THROW(read_dataset("/nonexistent/rfn_dataset"), DataError);
}

}  // namespace
}  // namespace rfn::geo
