#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tte/common.hpp"
#include "tte/geodesy.hpp"
#include "tte/roadnet.hpp"
#include "tte/trips.hpp"

namespace tte {

constexpr double kDefaultMatcherCellDeg = 0.005;

// Spatial bucketing of network nodes; an accelerator for exact nearest-node
// queries, not an approximation.
struct GridIndex {
  GridSpec spec;
  std::vector<std::vector<int>> buckets;  // row-major cells, node internal indices
  std::vector<int> overflow;              // nodes outside the grid bounds

  const std::vector<int>& bucket(int row, int col) const {
    return buckets[static_cast<size_t>(row) * spec.n_cols + col];
  }
};

struct AttributionResult {
  long long node_id = 0;
  double error_km = 0.0;
};

inline GridIndex build_index(const RoadNetwork& net, double cell_deg = kDefaultMatcherCellDeg) {
  if (!(cell_deg > 0.0) || !std::isfinite(cell_deg)) fail("build_index: cell_deg must be > 0");
  if (net.nodes.empty()) fail("build_index: empty network");
  GeoPoint mn = net.bbox_min;
  GeoPoint mx = net.bbox_max;
  // degenerate extents (single node, collinear nodes) stretch to one cell
  if (!(mx.lat - mn.lat > 0.0)) mx.lat = std::min(90.0, mn.lat + cell_deg);
  if (!(mx.lon - mn.lon > 0.0)) mx.lon = std::min(180.0, mn.lon + cell_deg);
  if (!(mx.lat > mn.lat)) mn.lat = mx.lat - cell_deg;
  if (!(mx.lon > mn.lon)) mn.lon = mx.lon - cell_deg;

  GridIndex idx;
  idx.spec = GridSpec::make(mn, mx, cell_deg);
  idx.buckets.assign(static_cast<size_t>(idx.spec.n_rows) * idx.spec.n_cols, {});
  for (size_t i = 0; i < net.nodes.size(); ++i) {
    std::optional<Cell> c = cell_of(net.nodes[i].location, idx.spec);
    if (c)
      idx.buckets[static_cast<size_t>(c->row) * idx.spec.n_cols + c->col].push_back(
          static_cast<int>(i));
    else
      idx.overflow.push_back(static_cast<int>(i));
  }
  return idx;
}

namespace detail {

// Lower bound on the geodesic distance from p to anything beyond the
// explored square of `ring` cells around (row0, col0). Any surface path
// measures at least its central angle scaled by the minimum curvature
// radius; latitude slabs bound by meridian arc, longitude slabs by the
// point-to-meridian cross-track arc.
inline double unexplored_lower_bound_km(const GeoPoint& p, const GridSpec& g, int row0, int col0,
                                        int ring) {
  const double inf = std::numeric_limits<double>::infinity();
  double lb = inf;
  int top = row0 + ring, bottom = row0 - ring, right = col0 + ring, left = col0 - ring;
  if (top < g.n_rows - 1) {
    double boundary_lat = g.min_corner.lat + static_cast<double>(top + 1) * g.cell_deg;
    lb = std::min(lb, kMinCurvatureRadiusKm * deg2rad(std::max(0.0, boundary_lat - p.lat)));
  }
  if (bottom > 0) {
    double boundary_lat = g.min_corner.lat + static_cast<double>(bottom) * g.cell_deg;
    lb = std::min(lb, kMinCurvatureRadiusKm * deg2rad(std::max(0.0, p.lat - boundary_lat)));
  }
  double cos_lat = std::cos(deg2rad(p.lat));
  if (right < g.n_cols - 1) {
    double boundary_lon = g.min_corner.lon + static_cast<double>(right + 1) * g.cell_deg;
    double dlam = deg2rad(std::max(0.0, boundary_lon - p.lon));
    lb = std::min(lb, dlam >= M_PI_2 ? inf : kMinCurvatureRadiusKm * std::sin(dlam) * cos_lat);
  }
  if (left > 0) {
    double boundary_lon = g.min_corner.lon + static_cast<double>(left) * g.cell_deg;
    double dlam = deg2rad(std::max(0.0, p.lon - boundary_lon));
    lb = std::min(lb, dlam >= M_PI_2 ? inf : kMinCurvatureRadiusKm * std::sin(dlam) * cos_lat);
  }
  return lb;
}

}  // namespace detail

// Exact nearest node under geodesic distance. Rings of cells are explored
// outward until the best candidate provably beats every unexplored cell.
// Ties resolve to the smallest internal index.
inline AttributionResult nearest_node(const GridIndex& idx, const RoadNetwork& net,
                                      const GeoPoint& p) {
  if (net.nodes.empty()) fail("nearest_node: empty network");
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  auto consider = [&](int node) {
    double d = vincenty_distance_km(p, net.nodes[static_cast<size_t>(node)].location);
    if (d < best_d || (d == best_d && node < best)) {
      best_d = d;
      best = node;
    }
  };
  for (int node : idx.overflow) consider(node);

  const GridSpec& g = idx.spec;
  int row0 = std::clamp(static_cast<int>(std::floor((p.lat - g.min_corner.lat) / g.cell_deg)), 0,
                        g.n_rows - 1);
  int col0 = std::clamp(static_cast<int>(std::floor((p.lon - g.min_corner.lon) / g.cell_deg)), 0,
                        g.n_cols - 1);
  int max_ring = std::max(std::max(row0, g.n_rows - 1 - row0), std::max(col0, g.n_cols - 1 - col0));
  for (int ring = 0; ring <= max_ring; ++ring) {
    int r_lo = row0 - ring, r_hi = row0 + ring;
    int c_lo = col0 - ring, c_hi = col0 + ring;
    for (int r = std::max(0, r_lo); r <= std::min(g.n_rows - 1, r_hi); ++r) {
      bool edge_row = (r == r_lo || r == r_hi);
      for (int c = std::max(0, c_lo); c <= std::min(g.n_cols - 1, c_hi); ++c) {
        if (!edge_row && c != c_lo && c != c_hi) continue;  // interior already visited
        for (int node : idx.bucket(r, c)) consider(node);
      }
    }
    if (best >= 0 && best_d <= detail::unexplored_lower_bound_km(p, g, row0, col0, ring)) break;
  }
  return AttributionResult{net.nodes[static_cast<size_t>(best)].id, best_d};
}

// Attributes every raw point of a trip to its nearest road node.
inline MappedTrip attribute_trip(const GridIndex& idx, const RoadNetwork& net, Trip trip) {
  if (trip.points.empty()) fail("attribute_trip: trip has no points");
  MappedTrip m;
  m.trip = std::move(trip);
  m.node_ids.reserve(m.trip.points.size());
  m.attribution_errors_km.reserve(m.trip.points.size());
  for (const auto& p : m.trip.points) {
    AttributionResult r = nearest_node(idx, net, p);
    m.node_ids.push_back(r.node_id);
    m.node_locations.push_back(net.node_by_id(r.node_id).location);
    m.attribution_errors_km.push_back(r.error_km);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Attribution-error histogram

struct AttributionHistogram {
  double bucket_km = 0.0;
  std::vector<size_t> counts;  // counts[i] covers [i*bucket_km, (i+1)*bucket_km)
  size_t total = 0;
};

inline AttributionHistogram attribution_histogram(const std::vector<MappedTrip>& trips,
                                                  double bucket_km) {
  if (!(bucket_km > 0.0)) fail("attribution_histogram: bucket_km must be > 0");
  AttributionHistogram h;
  h.bucket_km = bucket_km;
  for (const auto& m : trips) {
    for (double e : m.attribution_errors_km) {
      size_t b = static_cast<size_t>(std::floor(e / bucket_km));
      if (h.counts.size() <= b) h.counts.resize(b + 1, 0);
      ++h.counts[b];
      ++h.total;
    }
  }
  if (h.counts.empty()) h.counts.resize(1, 0);
  return h;
}

inline std::string histogram_to_csv(const AttributionHistogram& h) {
  std::string out = "bucket_lo_km,bucket_hi_km,count\n";
  for (size_t i = 0; i < h.counts.size(); ++i) {
    out += strprintf("%s,%s,%zu\n", format_fixed(static_cast<double>(i) * h.bucket_km, 3).c_str(),
                     format_fixed(static_cast<double>(i + 1) * h.bucket_km, 3).c_str(), h.counts[i]);
  }
  return out;
}

}  // namespace tte
