#pragma once

#include <string>
#include <vector>

#include "tte/common.hpp"
#include "tte/roadnet.hpp"
#include "tte/trips.hpp"

namespace tte {

// Desk-scale synthetic worlds: a plain grid road network, and a "barrier"
// variant whose serpentine walls force detours so that map distance far
// exceeds coordinate distance.
struct SynthConfig {
  enum class Kind { kGrid, kBarrier };
  Kind kind = Kind::kGrid;
  int rows = 20;
  int cols = 20;
  double origin_lat = 41.05;
  double origin_lon = -8.75;
  double spacing_deg = 0.003;  // ~330 m node spacing
  int n_trips = 250;
  double speed_kmh = 40.0;
  double speed_log_sigma = 0.02;  // per-trip lognormal speed factor
  int sample_stride = 1;          // record every stride-th path node
  double jitter_deg = 0.0;        // gps noise on recorded points
  int min_path_nodes = 12;
  int max_path_nodes = 90;
  int n_drivers = 10;
  uint64_t seed = 1;

  void validate() const {
    if (rows < 2 || cols < 2) fail("synth: grid must be at least 2x2");
    if (!(spacing_deg > 0.0)) fail("synth: spacing must be positive");
    if (n_trips < 1) fail("synth: n_trips must be positive");
    if (!(speed_kmh > 0.0)) fail("synth: speed must be positive");
    if (sample_stride < 1) fail("synth: sample_stride must be >= 1");
    if (min_path_nodes < 3 || max_path_nodes < min_path_nodes) fail("synth: bad path length bounds");
    if (n_drivers < 1) fail("synth: n_drivers must be positive");
  }
};

inline const char* synth_kind_name(SynthConfig::Kind k) {
  return k == SynthConfig::Kind::kGrid ? "grid" : "barrier";
}

inline SynthConfig::Kind parse_synth_kind(const std::string& s) {
  if (s == "grid") return SynthConfig::Kind::kGrid;
  if (s == "barrier") return SynthConfig::Kind::kBarrier;
  fail("unknown synthetic world kind: " + s + " (expected grid or barrier)");
}

// Grid world: every horizontal and vertical neighbor pair is a road.
// Barrier world: within-column roads stay, but between columns only one
// gate row connects (alternating top/bottom), so east-west travel snakes.
inline RoadNetwork synth_network(const SynthConfig& cfg) {
  cfg.validate();
  RoadNetworkBuilder b;
  auto node_id = [&](int r, int c) { return static_cast<long long>(r) * cfg.cols + c; };
  for (int r = 0; r < cfg.rows; ++r)
    for (int c = 0; c < cfg.cols; ++c)
      b.add_node(node_id(r, c), cfg.origin_lat + r * cfg.spacing_deg,
                 cfg.origin_lon + c * cfg.spacing_deg);
  for (int r = 0; r + 1 < cfg.rows; ++r)
    for (int c = 0; c < cfg.cols; ++c) b.add_edge(node_id(r, c), node_id(r + 1, c), false);
  for (int c = 0; c + 1 < cfg.cols; ++c) {
    if (cfg.kind == SynthConfig::Kind::kGrid) {
      for (int r = 0; r < cfg.rows; ++r) b.add_edge(node_id(r, c), node_id(r, c + 1), false);
    } else {
      int gate = (c % 2 == 0) ? cfg.rows - 1 : 0;
      b.add_edge(node_id(gate, c), node_id(gate, c + 1), false);
    }
  }
  b.set_metadata(strprintf("source=synth kind=%s rows=%d cols=%d spacing=%g",
                           synth_kind_name(cfg.kind), cfg.rows, cfg.cols, cfg.spacing_deg));
  return b.build();
}

// Constant-speed trips along shortest paths, recorded every stride-th node
// with optional GPS jitter. Travel time tracks the traveled (map) length.
inline std::vector<Trip> synth_trips(const RoadNetwork& net, const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed ^ 0x7d31f0a2c96e5b48ULL);
  std::vector<Trip> trips;
  trips.reserve(static_cast<size_t>(cfg.n_trips));
  size_t n_nodes = net.nodes.size();
  int attempts_left = cfg.n_trips * 200;
  while (static_cast<int>(trips.size()) < cfg.n_trips && attempts_left-- > 0) {
    long long src = net.nodes[static_cast<size_t>(rng.below(n_nodes))].id;
    long long dst = net.nodes[static_cast<size_t>(rng.below(n_nodes))].id;
    if (src == dst) continue;
    auto path = shortest_path(net, src, dst);
    if (!path) continue;
    int len = static_cast<int>(path->size());
    if (len < cfg.min_path_nodes || len > cfg.max_path_nodes) continue;

    double speed = cfg.speed_kmh * std::exp(rng.normal() * cfg.speed_log_sigma);
    // cumulative travel time along the path
    std::vector<double> node_time(static_cast<size_t>(len), 0.0);
    for (int i = 1; i < len; ++i) {
      const GeoPoint& a = net.node_by_id((*path)[static_cast<size_t>(i - 1)]).location;
      const GeoPoint& b = net.node_by_id((*path)[static_cast<size_t>(i)]).location;
      node_time[static_cast<size_t>(i)] =
          node_time[static_cast<size_t>(i - 1)] + vincenty_distance_km(a, b) / speed * 3600.0;
    }

    std::vector<int> sample_idx;
    for (int i = 0; i < len; i += cfg.sample_stride) sample_idx.push_back(i);
    if (sample_idx.back() != len - 1) sample_idx.push_back(len - 1);
    if (sample_idx.size() < 4) continue;

    Trip t;
    t.driver_id = static_cast<long long>(rng.below(static_cast<uint64_t>(cfg.n_drivers)));
    t.date_id = 1 + static_cast<int>(rng.below(28));
    t.week_id = static_cast<int>(rng.below(7));
    t.time_id = static_cast<int>(rng.below(kTimeSlotsPerDay));
    for (int idx : sample_idx) {
      const GeoPoint& p = net.node_by_id((*path)[static_cast<size_t>(idx)]).location;
      double lat = p.lat, lon = p.lon;
      if (cfg.jitter_deg > 0.0) {
        lat += rng.uniform(-cfg.jitter_deg, cfg.jitter_deg);
        lon += rng.uniform(-cfg.jitter_deg, cfg.jitter_deg);
      }
      t.points.push_back(make_geopoint(lat, lon));
      t.time_gap.push_back(node_time[static_cast<size_t>(idx)]);
    }
    t.total_time = t.time_gap.back();
    t.dist_gap.assign(t.points.size(), 0.0);
    for (size_t i = 1; i < t.points.size(); ++i)
      t.dist_gap[i] = t.dist_gap[i - 1] + vincenty_distance_km(t.points[i - 1], t.points[i]);
    t.total_dist = t.dist_gap.back();
    if (!(t.total_time > 0.0)) continue;
    trips.push_back(std::move(t));
  }
  if (static_cast<int>(trips.size()) < cfg.n_trips)
    fail(strprintf("synth: only generated %zu of %d trips; relax path-length bounds", trips.size(),
                   cfg.n_trips));
  return trips;
}

}  // namespace tte
