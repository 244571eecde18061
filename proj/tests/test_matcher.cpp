#include <catch2/catch_amalgamated.hpp>

#include "support/oracles.hpp"
#include "tte/matcher.hpp"

using namespace tte;

namespace {

// Exhaustive reference: smallest index wins ties.
AttributionResult linear_scan(const RoadNetwork& net, const GeoPoint& p) {
  int best = 0;
  double best_d = vincenty_distance_km(p, net.nodes[0].location);
  for (size_t i = 1; i < net.nodes.size(); ++i) {
    double d = vincenty_distance_km(p, net.nodes[i].location);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return {net.nodes[static_cast<size_t>(best)].id, best_d};
}

RoadNetwork random_nodes_network(int n, uint64_t seed) {
  Rng rng(seed);
  RoadNetworkBuilder b;
  for (int i = 0; i < n; ++i)
    b.add_node(i, 41.0 + rng.uniform(0.0, 0.3), -8.8 + rng.uniform(0.0, 0.3));
  return b.build();
}

}  // namespace

TEST_CASE("single-node network has one non-empty bucket", "[matcher]") {
  RoadNetworkBuilder b;
  b.add_node(7, 41.1, -8.6);
  RoadNetwork net = b.build();
  GridIndex idx = build_index(net, 0.005);
  size_t non_empty = 0, members = 0;
  for (const auto& bucket : idx.buckets) {
    if (!bucket.empty()) {
      ++non_empty;
      members += bucket.size();
    }
  }
  CHECK(non_empty == 1);
  CHECK(members == 1);
  CHECK(idx.overflow.empty());
}

TEST_CASE("bucket sizes plus overflow partition the nodes", "[matcher]") {
  RoadNetwork net = random_nodes_network(1000, 5);
  GridIndex idx = build_index(net, 0.01);
  size_t total = idx.overflow.size();
  for (const auto& bucket : idx.buckets) total += bucket.size();
  CHECK(total == 1000);
}

TEST_CASE("bucket membership is consistent with cell_of", "[matcher]") {
  RoadNetwork net = random_nodes_network(300, 6);
  GridIndex idx = build_index(net, 0.02);
  for (int r = 0; r < idx.spec.n_rows; ++r) {
    for (int c = 0; c < idx.spec.n_cols; ++c) {
      for (int node : idx.bucket(r, c)) {
        auto cell = cell_of(net.nodes[static_cast<size_t>(node)].location, idx.spec);
        REQUIRE(cell.has_value());
        CHECK(cell->row == r);
        CHECK(cell->col == c);
      }
    }
  }
}

TEST_CASE("node on a cell boundary lands in its floor cell", "[matcher]") {
  RoadNetworkBuilder b;
  b.add_node(0, 41.0, -8.8);
  b.add_node(1, 41.3, -8.5);
  b.add_node(2, 41.1, -8.7);  // exactly on boundaries of the 0.05 grid anchored at (41.0, -8.8)
  RoadNetwork net = b.build();
  GridIndex idx = build_index(net, 0.05);
  auto cell = cell_of(GeoPoint{41.1, -8.7}, idx.spec);
  REQUIRE(cell.has_value());
  const auto& members = idx.bucket(cell->row, cell->col);
  CHECK(std::find(members.begin(), members.end(), 2) != members.end());
}

TEST_CASE("build_index rejects bad cell sizes", "[matcher]") {
  RoadNetwork net = random_nodes_network(4, 2);
  CHECK_THROWS_AS(build_index(net, 0.0), Error);
  CHECK_THROWS_AS(build_index(net, -1.0), Error);
}

TEST_CASE("nearest node at an exact node location has zero error", "[matcher]") {
  RoadNetwork net = random_nodes_network(50, 12);
  GridIndex idx = build_index(net, 0.01);
  for (int i = 0; i < 50; i += 7) {
    AttributionResult r = nearest_node(idx, net, net.nodes[static_cast<size_t>(i)].location);
    CHECK(r.error_km == 0.0);
  }
}

TEST_CASE("nearest node matches linear scan on 500 nodes x 200 queries", "[matcher][acceptance1]") {
  RoadNetwork net = random_nodes_network(500, 31);
  GridIndex idx = build_index(net, 0.005);
  Rng rng(77);
  for (int q = 0; q < 200; ++q) {
    GeoPoint p{rng.uniform(41.0, 41.3), rng.uniform(-8.8, -8.5)};
    AttributionResult got = nearest_node(idx, net, p);
    AttributionResult want = linear_scan(net, p);
    CHECK(got.node_id == want.node_id);
    CHECK(got.error_km == want.error_km);
  }
}

TEST_CASE("queries far outside the bbox still find the true nearest node", "[matcher]") {
  RoadNetwork net = random_nodes_network(200, 44);
  GridIndex idx = build_index(net, 0.01);
  Rng rng(9);
  for (int q = 0; q < 50; ++q) {
    GeoPoint p{rng.uniform(40.0, 42.5), rng.uniform(-10.0, -7.0)};  // mostly outside
    AttributionResult got = nearest_node(idx, net, p);
    AttributionResult want = linear_scan(net, p);
    CHECK(got.node_id == want.node_id);
    CHECK(got.error_km == want.error_km);
  }
}

TEST_CASE("ties break to the smallest internal index", "[matcher]") {
  RoadNetworkBuilder b;
  // two nodes at identical coordinates, plus a decoy
  b.add_node(10, 41.10, -8.60);
  b.add_node(11, 41.10, -8.60);
  b.add_node(12, 41.20, -8.60);
  RoadNetwork net = b.build();
  GridIndex idx = build_index(net, 0.01);
  AttributionResult r = nearest_node(idx, net, GeoPoint{41.1001, -8.6});
  CHECK(r.node_id == 10);
}

TEST_CASE("attribute_trip preserves attributes and counts errors", "[matcher]") {
  RoadNetwork net = random_nodes_network(100, 3);
  GridIndex idx = build_index(net, 0.01);
  Trip t;
  t.driver_id = 4;
  t.date_id = 12;
  t.week_id = 2;
  t.time_id = 800;
  t.points = {net.nodes[3].location, net.nodes[40].location, net.nodes[77].location};
  t.time_gap = {0.0, 15.0, 30.0};
  t.dist_gap = {0.0, 1.0, 2.0};
  t.total_time = 30.0;
  t.total_dist = 2.0;
  MappedTrip m = attribute_trip(idx, net, t);
  REQUIRE(m.node_ids.size() == 3);
  CHECK(m.node_ids[0] == net.nodes[3].id);
  CHECK(m.node_ids[1] == net.nodes[40].id);
  CHECK(m.node_ids[2] == net.nodes[77].id);
  for (double e : m.attribution_errors_km) CHECK(e == 0.0);
  CHECK(m.trip.driver_id == 4);
  CHECK(m.trip.time_id == 800);
  CHECK(m.trip.time_gap.size() == 3);
}

TEST_CASE("one-point trip maps to a one-point mapped trip", "[matcher]") {
  RoadNetwork net = random_nodes_network(20, 15);
  GridIndex idx = build_index(net, 0.01);
  Trip t;
  t.points = {GeoPoint{41.15, -8.65}};
  t.time_gap = {0.0};
  t.dist_gap = {0.0};
  MappedTrip m = attribute_trip(idx, net, t);
  CHECK(m.node_ids.size() == 1);
  CHECK(m.attribution_errors_km.size() == 1);
}

TEST_CASE("jittered on-edge samples stay within the construction bound", "[matcher]") {
  // straight road with 100 m spacing; query points sit on edges with <= 50 m jitter
  RoadNetworkBuilder b;
  const double spacing = 0.0009;  // ~100 m of latitude
  for (int i = 0; i < 30; ++i) b.add_node(i, 41.0 + i * spacing, -8.6);
  for (int i = 0; i + 1 < 30; ++i) b.add_edge(i, i + 1, false);
  RoadNetwork net = b.build();
  GridIndex idx = build_index(net, 0.005);
  double max_edge_km = 0.0;
  for (const auto& adj : net.adjacency)
    for (const auto& e : adj) max_edge_km = std::max(max_edge_km, e.length_km);
  Rng rng(123);
  double bound = 0.05 + max_edge_km / 2.0;
  for (int q = 0; q < 200; ++q) {
    double along = rng.uniform(0.0, 29.0 * spacing);
    double jitter_lat = rng.uniform(-1.0, 1.0) * 0.00040;  // < 50 m
    double jitter_lon = rng.uniform(-1.0, 1.0) * 0.00040 / std::cos(deg2rad(41.0));
    GeoPoint p{41.0 + along + jitter_lat, -8.6 + jitter_lon};
    AttributionResult r = nearest_node(idx, net, p);
    CHECK(r.error_km <= bound);
  }
}

TEST_CASE("nearest node stays exact at high latitudes and cell boundaries", "[matcher]") {
  // longitude degrees shrink to ~cos(69) of their equatorial size here, so a
  // sloppy ring-termination bound would return wrong nodes
  Rng rng(61);
  RoadNetworkBuilder b;
  for (int i = 0; i < 300; ++i)
    b.add_node(i, 68.5 + rng.uniform(0.0, 0.4), 17.0 + rng.uniform(0.0, 0.4));
  RoadNetwork net = b.build();
  GridIndex idx = build_index(net, 0.01);
  Rng qrng(62);
  for (int q = 0; q < 150; ++q) {
    GeoPoint p{68.5 + qrng.uniform(0.0, 0.4), 17.0 + qrng.uniform(0.0, 0.4)};
    if (q % 3 == 0) {
      // snap onto a cell boundary line of the index grid
      int row = static_cast<int>(qrng.below(static_cast<uint64_t>(idx.spec.n_rows)));
      p.lat = idx.spec.min_corner.lat + row * idx.spec.cell_deg;
    }
    AttributionResult got = nearest_node(idx, net, p);
    AttributionResult want = linear_scan(net, p);
    CHECK(got.node_id == want.node_id);
    CHECK(got.error_km == want.error_km);
  }
}

TEST_CASE("nearest node is exact under clustered node layouts", "[matcher]") {
  // dense blob plus far-flung outliers: rings must not stop at the blob when
  // an outlier query sits closer to another outlier
  Rng rng(83);
  RoadNetworkBuilder b;
  int id = 0;
  for (int i = 0; i < 200; ++i)
    b.add_node(id++, 41.10 + rng.uniform(0.0, 0.01), -8.60 + rng.uniform(0.0, 0.01));
  for (int i = 0; i < 8; ++i)
    b.add_node(id++, 41.0 + rng.uniform(0.0, 0.3), -8.8 + rng.uniform(0.0, 0.4));
  RoadNetwork net = b.build();
  GridIndex idx = build_index(net, 0.004);
  for (int q = 0; q < 120; ++q) {
    GeoPoint p{41.0 + rng.uniform(0.0, 0.3), -8.8 + rng.uniform(0.0, 0.4)};
    AttributionResult got = nearest_node(idx, net, p);
    AttributionResult want = linear_scan(net, p);
    CHECK(got.node_id == want.node_id);
    CHECK(got.error_km == want.error_km);
  }
}

TEST_CASE("attribution determinism across repeated runs", "[matcher]") {
  RoadNetwork net = random_nodes_network(150, 99);
  GridIndex idx = build_index(net, 0.008);
  Rng rng(5);
  for (int q = 0; q < 50; ++q) {
    GeoPoint p{rng.uniform(41.0, 41.3), rng.uniform(-8.8, -8.5)};
    AttributionResult a = nearest_node(idx, net, p);
    AttributionResult b2 = nearest_node(idx, net, p);
    CHECK(a.node_id == b2.node_id);
    CHECK(a.error_km == b2.error_km);
  }
}

TEST_CASE("histogram with all-zero errors fills the first bucket", "[matcher]") {
  MappedTrip m;
  m.attribution_errors_km = {0.0, 0.0, 0.0};
  AttributionHistogram h = attribution_histogram({m}, 0.1);
  REQUIRE(h.counts.size() == 1);
  CHECK(h.counts[0] == 3);
  CHECK(h.total == 3);
}

TEST_CASE("histogram bucket arithmetic", "[matcher]") {
  MappedTrip m;
  m.attribution_errors_km = {0.05, 0.15, 0.15};
  AttributionHistogram h = attribution_histogram({m}, 0.1);
  REQUIRE(h.counts.size() == 2);
  CHECK(h.counts[0] == 1);
  CHECK(h.counts[1] == 2);
  std::string csv = histogram_to_csv(h);
  CHECK(csv == "bucket_lo_km,bucket_hi_km,count\n0.000,0.100,1\n0.100,0.200,2\n");
}

TEST_CASE("histogram rejects non-positive bucket size", "[matcher]") {
  CHECK_THROWS_AS(attribution_histogram({}, 0.0), Error);
}
