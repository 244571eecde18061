#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "support/oracles.hpp"
#include "tte/matcher.hpp"
#include "tte/trips.hpp"

using namespace tte;

namespace {

std::string porto_header() {
  return "\"TRIP_ID\",\"CALL_TYPE\",\"ORIGIN_CALL\",\"ORIGIN_STAND\",\"TAXI_ID\",\"TIMESTAMP\","
         "\"DAY_TYPE\",\"MISSING_DATA\",\"POLYLINE\"";
}

std::string porto_row(long long taxi, long long ts, const std::string& polyline) {
  return strprintf("\"T1\",\"A\",\"\",\"\",\"%lld\",\"%lld\",\"A\",\"False\",\"%s\"", taxi, ts,
                   polyline.c_str());
}

}  // namespace

TEST_CASE("porto row with 3 points", "[trips]") {
  std::istringstream in(porto_header() + "\n" +
                        porto_row(20000001, 1372636858,
                                  "[[-8.618643,41.141412],[-8.618499,41.141376],[-8.620326,41.14251]]"));
  auto [trips, stats] = parse_porto_csv(in);
  REQUIRE(trips.size() == 1);
  const Trip& t = trips[0];
  REQUIRE(t.points.size() == 3);
  CHECK(t.points[0].lat == 41.141412);  // POLYLINE stores [lon, lat]
  CHECK(t.points[0].lon == -8.618643);
  CHECK(t.time_gap == std::vector<double>{0.0, 15.0, 30.0});
  CHECK(t.total_time == 30.0);
  double d1 = vincenty_distance_km(t.points[0], t.points[1]);
  double d2 = vincenty_distance_km(t.points[1], t.points[2]);
  CHECK(t.dist_gap[0] == 0.0);
  CHECK(t.dist_gap[1] == Catch::Approx(d1).epsilon(1e-12));
  CHECK(t.dist_gap[2] == Catch::Approx(d1 + d2).epsilon(1e-12));
  CHECK(t.total_dist == t.dist_gap[2]);
  CHECK(stats.rows_in == 1);
  CHECK(stats.trips_out == 1);
}

TEST_CASE("timestamp at midnight gives slot zero", "[trips]") {
  // 1372636800 = 2013-07-01 00:00:00 UTC, a Monday
  std::istringstream in(porto_header() + "\n" +
                        porto_row(1, 1372636800, "[[-8.6,41.1],[-8.61,41.11]]"));
  auto [trips, stats] = parse_porto_csv(in);
  REQUIRE(trips.size() == 1);
  CHECK(trips[0].time_id == 0);
  CHECK(trips[0].week_id == 0);  // Monday
  CHECK(trips[0].date_id == 1);
}

TEST_CASE("time id is the minute of day", "[trips]") {
  // 1372651200 = 2013-07-01 04:00:00 UTC
  std::istringstream in(porto_header() + "\n" +
                        porto_row(1, 1372651200, "[[-8.6,41.1],[-8.61,41.11]]"));
  auto [trips, stats] = parse_porto_csv(in);
  REQUIRE(trips.size() == 1);
  CHECK(trips[0].time_id == 240);
}

TEST_CASE("empty polyline is rejected as too short", "[trips]") {
  std::istringstream in(porto_header() + "\n" + porto_row(1, 1372636858, "[]"));
  auto [trips, stats] = parse_porto_csv(in);
  CHECK(trips.empty());
  CHECK(stats.rejects.at("too_short") == 1);
  CHECK(stats.rows_in == stats.trips_out + stats.total_rejects());
}

TEST_CASE("malformed polyline and bad coordinates are tallied", "[trips]") {
  std::string body = porto_row(1, 1372636858, "[[-8.6,41.1],[oops]]") + "\n" +
                     porto_row(1, 1372636858, "[[-8.6,141.1],[-8.61,41.11]]") + "\n" +
                     porto_row(1, 1372636858, "[[-8.6,41.1],[-8.61,41.11]]");
  std::istringstream in(porto_header() + "\n" + body);
  auto [trips, stats] = parse_porto_csv(in);
  CHECK(trips.size() == 1);
  CHECK(stats.rejects.at("malformed_polyline") == 1);
  CHECK(stats.rejects.at("bad_coordinate") == 1);
  CHECK(stats.rows_in == 3);
  CHECK(stats.rows_in == stats.trips_out + stats.total_rejects());
}

TEST_CASE("taxi ids densify in first-appearance order", "[trips]") {
  std::string body = porto_row(50005, 1372636858, "[[-8.6,41.1],[-8.61,41.11]]") + "\n" +
                     porto_row(20001, 1372636858, "[[-8.6,41.1],[-8.61,41.11]]") + "\n" +
                     porto_row(50005, 1372636858, "[[-8.6,41.1],[-8.61,41.11]]");
  std::istringstream in(porto_header() + "\n" + body);
  auto [trips, stats] = parse_porto_csv(in);
  REQUIRE(trips.size() == 3);
  CHECK(trips[0].driver_id == 0);
  CHECK(trips[1].driver_id == 1);
  CHECK(trips[2].driver_id == 0);
}

TEST_CASE("record-format trips parse and validate", "[trips]") {
  std::string line =
      R"({"driverID": 3, "dateID": 12, "weekID": 4, "timeID": 600, "dist": 2.0, "time": 40.0,)"
      R"( "lats": [41.1, 41.11, 41.12], "lngs": [-8.6, -8.61, -8.62],)"
      R"( "time_gap": [20.0, 40.0], "dist_gap": [1.0, 2.0]})";
  std::istringstream in(line);
  auto [trips, stats] = parse_trip_records(in);
  REQUIRE(trips.size() == 1);
  const Trip& t = trips[0];
  CHECK(t.driver_id == 3);
  CHECK(t.time_gap == std::vector<double>{0.0, 20.0, 40.0});  // leading zero restored
  CHECK(t.dist_gap == std::vector<double>{0.0, 1.0, 2.0});
  CHECK(validate_trip(t).ok());
}

TEST_CASE("record-format rejects inconsistent gaps", "[trips]") {
  std::string line =
      R"({"driverID": 3, "dateID": 12, "weekID": 4, "timeID": 600, "dist": 2.0, "time": 40.0,)"
      R"( "lats": [41.1, 41.11], "lngs": [-8.6, -8.61],)"
      R"( "time_gap": [0.0, 50.0], "dist_gap": [0.0, 2.0]})";  // last gap != total
  std::istringstream in(line);
  auto [trips, stats] = parse_trip_records(in);
  CHECK(trips.empty());
  CHECK(stats.total_rejects() == 1);
}

TEST_CASE("dense region picks the bigger cluster", "[trips]") {
  std::vector<Trip> trips;
  auto mk = [](double lat, double lon) {
    Trip t;
    t.points = {GeoPoint{lat, lon}, GeoPoint{lat + 0.01, lon + 0.01}};
    t.time_gap = {0.0, 15.0};
    t.dist_gap = {0.0, 1.0};
    t.total_time = 15.0;
    t.total_dist = 1.0;
    return t;
  };
  for (int i = 0; i < 7; ++i) trips.push_back(mk(41.0 + 0.001 * i, -8.6));
  for (int i = 0; i < 3; ++i) trips.push_back(mk(44.0 + 0.001 * i, -5.0));
  RegionSelection sel = select_dense_region(trips, 0.55, 0.055);
  CHECK(sel.trips_covered == 7);
  CHECK(sel.min_corner.lat <= 41.0);
  CHECK(sel.max_corner.lat >= 41.017);
  CHECK(sel.min_corner.lon <= -8.6);
  CHECK(sel.max_corner.lon >= -8.59);
}

TEST_CASE("dense region covers a single tight cluster entirely", "[trips]") {
  std::vector<Trip> trips;
  for (int i = 0; i < 10; ++i) {
    Trip t;
    t.points = {GeoPoint{41.0 + 0.0001 * i, -8.6}, GeoPoint{41.0, -8.6 - 0.0001 * i}};
    t.time_gap = {0.0, 15.0};
    t.dist_gap = {0.0, 0.5};
    t.total_time = 15.0;
    t.total_dist = 0.5;
    trips.push_back(t);
  }
  RegionSelection sel = select_dense_region(trips, 0.55, 0.055);
  CHECK(sel.trips_covered == 10);
}

TEST_CASE("dense region fails when no window fits any trip", "[trips]") {
  Trip t;
  t.points = {GeoPoint{40.0, -9.0}, GeoPoint{42.0, -7.0}};  // 2 degrees wide
  t.time_gap = {0.0, 15.0};
  t.dist_gap = {0.0, 200.0};
  t.total_time = 15.0;
  t.total_dist = 200.0;
  CHECK_THROWS_AS(select_dense_region({t}, 0.55, 0.055), Error);
}

TEST_CASE("bbox filter keeps boundary trips and drops escapees", "[trips]") {
  Trip inside;
  inside.points = {GeoPoint{41.0, -8.6}, GeoPoint{41.5, -8.1}};  // on the boundary
  Trip outside = inside;
  outside.points.push_back(GeoPoint{41.6, -8.1});
  auto res = filter_trips_bbox({inside, outside}, GeoPoint{41.0, -8.6}, GeoPoint{41.5, -8.1});
  CHECK(res.kept.size() == 1);
  CHECK(res.dropped == 1);
}

TEST_CASE("bbox filter on empty input", "[trips]") {
  auto res = filter_trips_bbox({}, GeoPoint{41.0, -8.6}, GeoPoint{41.5, -8.1});
  CHECK(res.kept.empty());
  CHECK(res.dropped == 0);
}

TEST_CASE("split sizes follow floor allocation with remainder to train", "[trips]") {
  SplitIndices s = split_dataset(100, SplitFractions{0.79, 0.09, 0.12}, 7);
  CHECK(s.train.size() == 79);
  CHECK(s.val.size() == 9);
  CHECK(s.test.size() == 12);
  std::vector<bool> seen(100, false);
  for (auto i : s.train) seen[i] = true;
  for (auto i : s.val) seen[i] = true;
  for (auto i : s.test) seen[i] = true;
  CHECK(std::count(seen.begin(), seen.end(), true) == 100);
}

TEST_CASE("split rejects non-positive fractions", "[trips]") {
  CHECK_THROWS_AS(split_dataset(10, SplitFractions{1.0, 0.0, 0.0}, 7), Error);
  CHECK_THROWS_AS(split_dataset(10, SplitFractions{0.5, 0.4, 0.2}, 7), Error);
}

TEST_CASE("same seed reproduces the same split", "[trips]") {
  SplitIndices a = split_dataset(57, SplitFractions{0.7, 0.2, 0.1}, 42);
  SplitIndices b = split_dataset(57, SplitFractions{0.7, 0.2, 0.1}, 42);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);
  SplitIndices c = split_dataset(57, SplitFractions{0.7, 0.2, 0.1}, 43);
  CHECK(a.train != c.train);
}

TEST_CASE("attach_distances on a collinear road", "[trips]") {
  RoadNetworkBuilder b;
  for (int i = 0; i < 5; ++i) b.add_node(i, 41.0 + 0.01 * i, -8.6);
  for (int i = 0; i + 1 < 5; ++i) b.add_edge(i, i + 1, false);
  RoadNetwork net = b.build();
  GridIndex idx = build_index(net, 0.005);
  Trip t;
  for (int i = 0; i < 5; ++i) t.points.push_back(net.nodes[static_cast<size_t>(i)].location);
  t.time_gap = {0, 15, 30, 45, 60};
  t.total_time = 60;
  MappedTrip m = attribute_trip(idx, net, t);
  attach_distances(m, net);
  REQUIRE(m.dist_gap_map_km.size() == 5);
  for (size_t i = 0; i < 5; ++i)
    CHECK(m.dist_gap_map_km[i] == Catch::Approx(m.trip.dist_gap[i]).margin(1e-6));
  CHECK(m.fallback_hops == 0);
  CHECK(validate_mapped_trip(m).ok());
  CHECK(validate_mapped_trip(m).warnings.empty());
}

TEST_CASE("attach_distances around a barrier exceeds the straight line", "[trips]") {
  // U-shaped road: the two endpoints are geodesically close but far by road
  RoadNetworkBuilder b;
  b.add_node(0, 41.000, -8.600);
  b.add_node(1, 41.020, -8.600);
  b.add_node(2, 41.020, -8.605);
  b.add_node(3, 41.000, -8.605);
  b.add_edge(0, 1, false);
  b.add_edge(1, 2, false);
  b.add_edge(2, 3, false);
  RoadNetwork net = b.build();
  GridIndex idx = build_index(net, 0.005);
  Trip t;
  t.points = {net.nodes[0].location, net.nodes[3].location};
  t.time_gap = {0, 120};
  t.total_time = 120;
  MappedTrip m = attribute_trip(idx, net, t);
  attach_distances(m, net);
  CHECK(m.total_dist_map_km > m.trip.total_dist * 5.0);
  CHECK(validate_mapped_trip(m).ok());
}

TEST_CASE("single-hop trip yields both series of shape [0, d]", "[trips]") {
  RoadNetworkBuilder b;
  b.add_node(0, 41.00, -8.60);
  b.add_node(1, 41.01, -8.60);
  b.add_edge(0, 1, false);
  RoadNetwork net = b.build();
  GridIndex idx = build_index(net, 0.005);
  Trip t;
  t.points = {net.nodes[0].location, net.nodes[1].location};
  t.time_gap = {0, 90};
  t.total_time = 90;
  MappedTrip m = attribute_trip(idx, net, t);
  attach_distances(m, net);
  REQUIRE(m.trip.dist_gap.size() == 2);
  REQUIRE(m.dist_gap_map_km.size() == 2);
  CHECK(m.trip.dist_gap[0] == 0.0);
  CHECK(m.dist_gap_map_km[0] == 0.0);
  CHECK(m.trip.dist_gap[1] > 0.0);
  CHECK(m.dist_gap_map_km[1] > 0.0);
}

TEST_CASE("mapped trips JSONL round-trip", "[trips]") {
  RoadNetwork net = testsupport::random_geo_graph(30, 60, 19);
  GridIndex idx = build_index(net, 0.01);
  Rng rng(4);
  std::vector<MappedTrip> trips;
  for (int k = 0; k < 5; ++k) {
    Trip t;
    int n = 3 + static_cast<int>(rng.below(5));
    for (int i = 0; i < n; ++i)
      t.points.push_back(GeoPoint{rng.uniform(41.0, 41.2), rng.uniform(-8.7, -8.5)});
    for (int i = 0; i < n; ++i) t.time_gap.push_back(15.0 * i);
    t.total_time = t.time_gap.back();
    t.driver_id = k;
    t.time_id = 100 + k;
    t.week_id = k % 7;
    t.date_id = 1 + k;
    MappedTrip m = attribute_trip(idx, net, t);
    attach_distances(m, net);
    trips.push_back(std::move(m));
  }
  std::string text = serialize_mapped_trips(trips, "unit-test");
  std::vector<MappedTrip> back = parse_mapped_trips(text);
  REQUIRE(back.size() == trips.size());
  for (size_t i = 0; i < trips.size(); ++i) {
    CHECK(back[i].node_ids == trips[i].node_ids);
    CHECK(back[i].trip.driver_id == trips[i].trip.driver_id);
    CHECK(back[i].trip.time_gap == trips[i].trip.time_gap);
    CHECK(back[i].fallback_hops == trips[i].fallback_hops);
    REQUIRE(back[i].dist_gap_map_km.size() == trips[i].dist_gap_map_km.size());
    for (size_t j = 0; j < trips[i].dist_gap_map_km.size(); ++j)
      CHECK(back[i].dist_gap_map_km[j] ==
            Catch::Approx(trips[i].dist_gap_map_km[j]).margin(1e-9));
  }
  // reserialization of the parsed artifact is byte-identical
  CHECK(serialize_mapped_trips(back, "unit-test") == text);
}

TEST_CASE("gap-sequence validator catches broken series", "[trips]") {
  Trip t;
  t.points = {GeoPoint{41.0, -8.6}, GeoPoint{41.1, -8.6}};
  t.time_gap = {0.0, 10.0};
  t.dist_gap = {0.0, -1.0};  // decreasing
  t.total_time = 10.0;
  t.total_dist = -1.0;
  CHECK_FALSE(validate_trip(t).ok());
  t.dist_gap = {0.0, 1.0};
  t.total_dist = 1.0;
  CHECK(validate_trip(t).ok());
  t.time_gap = {1.0, 10.0};  // first entry nonzero
  CHECK_FALSE(validate_trip(t).ok());
}
