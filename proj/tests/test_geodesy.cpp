#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "tte/common.hpp"
#include "tte/geodesy.hpp"

using namespace tte;

#include "support/geodesic_cases.hpp"

using tte::testsupport::GeodesicCase;
using tte::testsupport::kGeodesicCases;
using tte::testsupport::kAntipodalOracleKm;

TEST_CASE("identity distance is exactly zero", "[geodesy]") {
  GeoPoint p{41.0, -8.6};
  CHECK(vincenty_distance_km(p, p) == 0.0);
  GeoPoint q{-33.86, 151.21};
  CHECK(vincenty_distance_km(q, q) == 0.0);
}

TEST_CASE("vincenty matches the geodesic oracle within 1 m", "[geodesy][acceptance3]") {
  for (const auto& c : kGeodesicCases) {
    GeoPoint a{c.lat1, c.lon1};
    GeoPoint b{c.lat2, c.lon2};
    double got_m = vincenty_distance_km(a, b) * 1000.0;
    INFO("pair (" << c.lat1 << "," << c.lon1 << ") -> (" << c.lat2 << "," << c.lon2 << ")");
    CHECK(std::abs(got_m - c.meters) < 1.0);
  }
}

TEST_CASE("vincenty is bit-for-bit symmetric", "[geodesy]") {
  for (const auto& c : kGeodesicCases) {
    GeoPoint a{c.lat1, c.lon1};
    GeoPoint b{c.lat2, c.lon2};
    CHECK(vincenty_distance_km(a, b) == vincenty_distance_km(b, a));
  }
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    GeoPoint a{rng.uniform(-89.0, 89.0), rng.uniform(-179.0, 179.0)};
    GeoPoint b{rng.uniform(-89.0, 89.0), rng.uniform(-179.0, 179.0)};
    CHECK(vincenty_distance_km(a, b) == vincenty_distance_km(b, a));
  }
}

TEST_CASE("near-antipodal pair falls back to haversine", "[geodesy]") {
  GeoPoint a{0.0, 0.0};
  GeoPoint b{0.5, 179.7};
  double d = vincenty_distance_km(a, b);
  // the fallback path was taken iff the result equals the haversine value
  CHECK(d == haversine_km(a, b));
  CHECK(std::abs(d - kAntipodalOracleKm) / kAntipodalOracleKm < 0.006);
}

TEST_CASE("distinct points have positive distance", "[geodesy]") {
  GeoPoint a{41.0, -8.6};
  GeoPoint b{41.0, -8.5999999};
  CHECK(vincenty_distance_km(a, b) > 0.0);
}

TEST_CASE("distance grows with longitude separation at fixed latitude", "[geodesy]") {
  GeoPoint base{41.0, -8.6};
  double prev = 0.0;
  for (int i = 1; i <= 20; ++i) {
    double dlon = i * 0.05;  // up to 1 degree
    double d = vincenty_distance_km(base, GeoPoint{41.0, -8.6 + dlon});
    CHECK(d > prev);
    prev = d;
  }
}

TEST_CASE("grid spec validation", "[geodesy]") {
  CHECK_THROWS_AS(GridSpec::make(GeoPoint{1.0, 1.0}, GeoPoint{1.0, 2.0}, 0.1), Error);
  CHECK_THROWS_AS(GridSpec::make(GeoPoint{1.0, 1.0}, GeoPoint{2.0, 2.0}, 0.0), Error);
  CHECK_THROWS_AS(GridSpec::make(GeoPoint{2.0, 1.0}, GeoPoint{1.0, 2.0}, 0.1), Error);
  GridSpec g = GridSpec::make(GeoPoint{1.0, 1.0}, GeoPoint{2.0, 2.5}, 0.1);
  CHECK(g.n_rows == 10);
  CHECK(g.n_cols == 15);
}

TEST_CASE("cell_of corner conventions", "[geodesy]") {
  GridSpec g = GridSpec::make(GeoPoint{40.0, -9.0}, GeoPoint{41.0, -8.0}, 0.05);
  auto at_min = cell_of(g.min_corner, g);
  REQUIRE(at_min.has_value());
  CHECK(*at_min == Cell{0, 0});
  auto at_max = cell_of(g.max_corner, g);
  REQUIRE(at_max.has_value());
  CHECK(*at_max == Cell{g.n_rows - 1, g.n_cols - 1});
}

TEST_CASE("cell_of rejects out-of-bounds points", "[geodesy]") {
  GridSpec g = GridSpec::make(GeoPoint{40.0, -9.0}, GeoPoint{41.0, -8.0}, 0.05);
  CHECK_FALSE(cell_of(GeoPoint{39.999, -8.5}, g).has_value());
  CHECK_FALSE(cell_of(GeoPoint{41.001, -8.5}, g).has_value());
  CHECK_FALSE(cell_of(GeoPoint{40.5, -9.001}, g).has_value());
  CHECK_FALSE(cell_of(GeoPoint{40.5, -7.999}, g).has_value());
}

TEST_CASE("cell_of agrees with independent floor arithmetic", "[geodesy]") {
  GridSpec g = GridSpec::make(GeoPoint{40.0, -9.0}, GeoPoint{41.0, -8.0}, 0.013);
  Rng rng(42);
  size_t checked = 0;
  for (int i = 0; i < 10000; ++i) {
    GeoPoint p{rng.uniform(40.0, 41.0), rng.uniform(-9.0, -8.0)};
    auto cell = cell_of(p, g);
    REQUIRE(cell.has_value());
    int row = static_cast<int>(std::floor((p.lat - 40.0) / 0.013));
    int col = static_cast<int>(std::floor((p.lon - -9.0) / 0.013));
    if (row == g.n_rows) row = g.n_rows - 1;
    if (col == g.n_cols) col = g.n_cols - 1;
    CHECK(cell->row == row);
    CHECK(cell->col == col);
    ++checked;
  }
  CHECK(checked == 10000);
}

TEST_CASE("every in-bounds point lies in exactly one cell", "[geodesy]") {
  GridSpec g = GridSpec::make(GeoPoint{40.0, -9.0}, GeoPoint{40.1, -8.9}, 0.03);
  Rng rng(9);
  for (int i = 0; i < 2000; ++i) {
    GeoPoint p{rng.uniform(40.0, 40.1), rng.uniform(-9.0, -8.9)};
    auto cell = cell_of(p, g);
    REQUIRE(cell.has_value());
    CHECK(cell->row >= 0);
    CHECK(cell->row < g.n_rows);
    CHECK(cell->col >= 0);
    CHECK(cell->col < g.n_cols);
  }
}

TEST_CASE("boundary points use the floor convention", "[geodesy]") {
  GridSpec g = GridSpec::make(GeoPoint{40.0, -9.0}, GeoPoint{41.0, -8.0}, 0.25);
  // exactly on the boundary between rows 1 and 2
  auto c = cell_of(GeoPoint{40.5, -8.9}, g);
  REQUIRE(c.has_value());
  CHECK(c->row == 2);
}
