#pragma once

#include <chrono>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tte/common.hpp"
#include "tte/geodesy.hpp"
#include "tte/roadnet.hpp"

namespace tte {

constexpr int kTimeSlotsPerDay = 1440;
constexpr double kPortoSampleSeconds = 15.0;
constexpr size_t kMaxTripPoints = 2000;

struct Trip {
  long long driver_id = 0;
  int date_id = 1;   // day of month, 1..31
  int week_id = 0;   // day of week, 0 (Monday) .. 6
  int time_id = 0;   // minute-of-day slot, 0..1439
  std::vector<GeoPoint> points;
  std::vector<double> time_gap;  // seconds since first point, [0] = 0, nondecreasing
  std::vector<double> dist_gap;  // cumulative geodesic km along raw points, [0] = 0
  double total_time = 0.0;       // seconds
  double total_dist = 0.0;       // km
};

struct MappedTrip {
  Trip trip;
  std::vector<long long> node_ids;
  std::vector<GeoPoint> node_locations;
  std::vector<double> attribution_errors_km;
  std::vector<double> dist_gap_map_km;  // cumulative map distance, [0] = 0
  double total_dist_map_km = 0.0;
  int fallback_hops = 0;
};

// ---------------------------------------------------------------------------
// Validation

struct TripCheck {
  std::vector<std::string> errors;    // broken gap-sequence invariants
  std::vector<std::string> warnings;  // soft expectations (map vs coordinate totals)

  bool ok() const { return errors.empty(); }
};

inline void check_gap_series(const std::vector<double>& gap, size_t n_points, double total,
                             const char* label, TripCheck& out) {
  if (gap.size() != n_points)
    out.errors.push_back(strprintf("%s: %zu entries for %zu points", label, gap.size(), n_points));
  if (gap.empty()) return;
  if (gap.front() != 0.0) out.errors.push_back(strprintf("%s: first entry %g != 0", label, gap.front()));
  for (size_t i = 1; i < gap.size(); ++i)
    if (!(gap[i] >= gap[i - 1]))
      out.errors.push_back(strprintf("%s: decreasing at %zu (%g -> %g)", label, i, gap[i - 1], gap[i]));
  if (gap.back() != total)
    out.errors.push_back(strprintf("%s: last entry %.12g != total %.12g", label, gap.back(), total));
  for (double v : gap)
    if (!std::isfinite(v)) out.errors.push_back(strprintf("%s: non-finite entry", label));
}

inline TripCheck validate_trip(const Trip& t) {
  TripCheck out;
  if (t.points.size() < 2) out.errors.push_back("trainable trip needs >= 2 points");
  for (const auto& p : t.points)
    if (!geopoint_valid(p)) out.errors.push_back("invalid point coordinates");
  check_gap_series(t.time_gap, t.points.size(), t.total_time, "time_gap", out);
  check_gap_series(t.dist_gap, t.points.size(), t.total_dist, "dist_gap", out);
  if (t.time_id < 0 || t.time_id >= kTimeSlotsPerDay)
    out.errors.push_back(strprintf("time_id %d outside [0,1439]", t.time_id));
  if (t.week_id < 0 || t.week_id > 6) out.errors.push_back("week_id outside [0,6]");
  if (t.date_id < 1 || t.date_id > 31) out.errors.push_back("date_id outside [1,31]");
  return out;
}

inline TripCheck validate_mapped_trip(const MappedTrip& m) {
  TripCheck out = validate_trip(m.trip);
  size_t n = m.trip.points.size();
  if (m.node_ids.size() != n) out.errors.push_back("node_ids size mismatch");
  if (m.node_locations.size() != n) out.errors.push_back("node_locations size mismatch");
  if (m.attribution_errors_km.size() != n) out.errors.push_back("attribution_errors size mismatch");
  check_gap_series(m.dist_gap_map_km, n, m.total_dist_map_km, "dist_gap_map", out);
  for (double e : m.attribution_errors_km)
    if (!(e >= 0.0)) out.errors.push_back("negative attribution error");
  if (m.fallback_hops == 0 && m.total_dist_map_km < m.trip.total_dist - 1e-6)
    out.warnings.push_back(strprintf("map total %.9f km below coordinate total %.9f km",
                                     m.total_dist_map_km, m.trip.total_dist));
  return out;
}

// ---------------------------------------------------------------------------
// Porto CSV ingestion

enum class RejectReason {
  kBadRow,            // missing/garbled columns or timestamp
  kMalformedPolyline, // POLYLINE not a list of [lon, lat] pairs
  kTooShort,          // fewer than 2 points
  kTooLong,           // above kMaxTripPoints, treated as corrupt
  kBadCoordinate,     // non-finite or out-of-range lat/lon
};

inline const char* reject_reason_name(RejectReason r) {
  switch (r) {
    case RejectReason::kBadRow: return "bad_row";
    case RejectReason::kMalformedPolyline: return "malformed_polyline";
    case RejectReason::kTooShort: return "too_short";
    case RejectReason::kTooLong: return "too_long";
    case RejectReason::kBadCoordinate: return "bad_coordinate";
  }
  return "unknown";
}

struct ParseStats {
  size_t rows_in = 0;
  size_t trips_out = 0;
  std::map<std::string, size_t> rejects;

  size_t total_rejects() const {
    size_t n = 0;
    for (const auto& [_, c] : rejects) n += c;
    return n;
  }
};

// Splits one CSV record honoring double-quoted fields ("" escapes a quote).
inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

// Stateful row parser: keeps the TAXI_ID -> dense driver id table and the
// reject tallies across rows.
class PortoCsvParser {
public:
  // Header row of the public dataset; locates the columns used here.
  void read_header(const std::string& header_line) {
    auto cols = csv_split(header_line);
    for (size_t i = 0; i < cols.size(); ++i) {
      std::string c = trim(cols[i]);
      if (c == "TAXI_ID") taxi_col_ = static_cast<int>(i);
      if (c == "TIMESTAMP") ts_col_ = static_cast<int>(i);
      if (c == "POLYLINE") poly_col_ = static_cast<int>(i);
    }
    if (taxi_col_ < 0 || ts_col_ < 0 || poly_col_ < 0)
      fail("porto csv: header must contain TAXI_ID, TIMESTAMP and POLYLINE");
  }

  std::optional<Trip> parse_row(const std::string& line) {
    ++stats_.rows_in;
    auto cols = csv_split(line);
    int needed = std::max(taxi_col_, std::max(ts_col_, poly_col_));
    if (static_cast<int>(cols.size()) <= needed) return reject(RejectReason::kBadRow);

    long long taxi_id = 0, timestamp = 0;
    try {
      taxi_id = parse_int(trim(cols[static_cast<size_t>(taxi_col_)]), "TAXI_ID");
      timestamp = parse_int(trim(cols[static_cast<size_t>(ts_col_)]), "TIMESTAMP");
    } catch (const Error&) {
      return reject(RejectReason::kBadRow);
    }
    if (timestamp < 0) return reject(RejectReason::kBadRow);

    nlohmann::json poly = nlohmann::json::parse(cols[static_cast<size_t>(poly_col_)], nullptr, false);
    if (poly.is_discarded() || !poly.is_array()) return reject(RejectReason::kMalformedPolyline);

    Trip t;
    t.points.reserve(poly.size());
    for (const auto& entry : poly) {
      if (!entry.is_array() || entry.size() != 2 || !entry[0].is_number() || !entry[1].is_number())
        return reject(RejectReason::kMalformedPolyline);
      double lon = entry[0].get<double>();
      double lat = entry[1].get<double>();  // POLYLINE stores [lon, lat]
      GeoPoint p{lat, lon};
      if (!geopoint_valid(p)) return reject(RejectReason::kBadCoordinate);
      t.points.push_back(p);
    }
    if (t.points.size() < 2) return reject(RejectReason::kTooShort);
    if (t.points.size() > kMaxTripPoints) return reject(RejectReason::kTooLong);

    t.driver_id = dense_driver_id(taxi_id);
    fill_calendar_fields(timestamp, t);
    size_t n = t.points.size();
    t.time_gap.resize(n);
    t.dist_gap.resize(n);
    for (size_t i = 0; i < n; ++i) t.time_gap[i] = kPortoSampleSeconds * static_cast<double>(i);
    t.total_time = t.time_gap.back();
    double acc = 0.0;
    for (size_t i = 1; i < n; ++i) {
      acc += vincenty_distance_km(t.points[i - 1], t.points[i]);
      t.dist_gap[i] = acc;
    }
    t.total_dist = acc;
    ++stats_.trips_out;
    return t;
  }

  const ParseStats& stats() const { return stats_; }
  size_t driver_count() const { return driver_table_.size(); }

private:
  std::optional<Trip> reject(RejectReason r) {
    ++stats_.rejects[reject_reason_name(r)];
    return std::nullopt;
  }

  long long dense_driver_id(long long taxi_id) {
    auto it = driver_table_.find(taxi_id);
    if (it != driver_table_.end()) return it->second;
    long long dense = static_cast<long long>(driver_table_.size());
    driver_table_.emplace(taxi_id, dense);
    return dense;
  }

  static void fill_calendar_fields(long long unix_seconds, Trip& t) {
    using namespace std::chrono;
    t.time_id = static_cast<int>((unix_seconds % 86400) / 60);
    sys_days day{days{unix_seconds / 86400}};
    year_month_day ymd{day};
    t.date_id = static_cast<int>(unsigned(ymd.day()));
    t.week_id = static_cast<int>(weekday{day}.iso_encoding()) - 1;  // Monday = 0
  }

  int taxi_col_ = -1;
  int ts_col_ = -1;
  int poly_col_ = -1;
  std::unordered_map<long long, long long> driver_table_;
  ParseStats stats_;
};

inline std::pair<std::vector<Trip>, ParseStats> parse_porto_csv(std::istream& in) {
  PortoCsvParser parser;
  std::string line;
  if (!std::getline(in, line)) fail("porto csv: empty input");
  parser.read_header(line);
  std::vector<Trip> trips;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    if (auto t = parser.parse_row(line)) trips.push_back(std::move(*t));
  }
  return {std::move(trips), parser.stats()};
}

// ---------------------------------------------------------------------------
// Line-delimited trip records (the schema-native ingestion format): one JSON
// object per line with driverID, dateID, weekID, timeID, dist, time, lats,
// lngs, time_gap, dist_gap. Gap lists may omit the leading zero entry.

inline std::pair<std::vector<Trip>, ParseStats> parse_trip_records(std::istream& in) {
  std::vector<Trip> trips;
  ParseStats stats;
  std::string line;
  size_t line_no = 0;
  auto reject = [&stats](RejectReason r) { ++stats.rejects[reject_reason_name(r)]; };
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    ++stats.rows_in;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      reject(RejectReason::kBadRow);
      continue;
    }
    try {
      Trip t;
      t.driver_id = j.at("driverID").get<long long>();
      t.date_id = j.at("dateID").get<int>();
      t.week_id = j.at("weekID").get<int>();
      t.time_id = j.at("timeID").get<int>();
      t.total_dist = j.at("dist").get<double>();
      t.total_time = j.at("time").get<double>();
      auto lats = j.at("lats").get<std::vector<double>>();
      auto lngs = j.at("lngs").get<std::vector<double>>();
      if (lats.size() != lngs.size()) {
        reject(RejectReason::kBadRow);
        continue;
      }
      bool coords_ok = true;
      for (size_t i = 0; i < lats.size(); ++i) {
        GeoPoint p{lats[i], lngs[i]};
        if (!geopoint_valid(p)) {
          coords_ok = false;
          break;
        }
        t.points.push_back(p);
      }
      if (!coords_ok) {
        reject(RejectReason::kBadCoordinate);
        continue;
      }
      if (t.points.size() < 2) {
        reject(RejectReason::kTooShort);
        continue;
      }
      if (t.points.size() > kMaxTripPoints) {
        reject(RejectReason::kTooLong);
        continue;
      }
      auto norm_gap = [&](std::vector<double> gap) {
        if (gap.size() + 1 == t.points.size()) gap.insert(gap.begin(), 0.0);
        return gap;
      };
      t.time_gap = norm_gap(j.at("time_gap").get<std::vector<double>>());
      t.dist_gap = norm_gap(j.at("dist_gap").get<std::vector<double>>());
      TripCheck check = validate_trip(t);
      if (!check.ok()) {
        reject(RejectReason::kBadRow);
        continue;
      }
      trips.push_back(std::move(t));
      ++stats.trips_out;
    } catch (const std::exception&) {
      reject(RejectReason::kBadRow);  // missing fields, wrong types
    }
  }
  return {std::move(trips), stats};
}

inline std::string serialize_trip_records(const std::vector<Trip>& trips) {
  std::string out;
  for (const auto& t : trips) {
    nlohmann::json j;
    j["driverID"] = t.driver_id;
    j["dateID"] = t.date_id;
    j["weekID"] = t.week_id;
    j["timeID"] = t.time_id;
    j["dist"] = round_decimals(t.total_dist, 9);
    j["time"] = round_decimals(t.total_time, 9);
    std::vector<double> lats, lngs, tg, dg;
    for (const auto& p : t.points) {
      lats.push_back(round_decimals(p.lat, 9));
      lngs.push_back(round_decimals(p.lon, 9));
    }
    for (double v : t.time_gap) tg.push_back(round_decimals(v, 9));
    for (double v : t.dist_gap) dg.push_back(round_decimals(v, 9));
    j["lats"] = lats;
    j["lngs"] = lngs;
    j["time_gap"] = tg;
    j["dist_gap"] = dg;
    out += j.dump() + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Region selection and filtering

struct RegionSelection {
  GeoPoint min_corner;
  GeoPoint max_corner;
  size_t trips_covered = 0;
};

// Slides a width x width window over a stride grid and returns the window
// containing the most trips (a trip counts only when fully inside). Ties go
// to the southernmost, then westernmost window.
inline RegionSelection select_dense_region(const std::vector<Trip>& trips, double width_deg,
                                           double stride_deg) {
  if (trips.empty()) fail("select_dense_region: no trips");
  if (!(width_deg > 0.0) || !(stride_deg > 0.0))
    fail("select_dense_region: width and stride must be positive");

  double min_lon = 1e18, min_lat = 1e18, max_lon = -1e18, max_lat = -1e18;
  struct Box {
    double lo_lon, hi_lon, lo_lat, hi_lat;
  };
  std::vector<Box> boxes;
  boxes.reserve(trips.size());
  for (const auto& t : trips) {
    Box b{1e18, -1e18, 1e18, -1e18};
    for (const auto& p : t.points) {
      b.lo_lon = std::min(b.lo_lon, p.lon);
      b.hi_lon = std::max(b.hi_lon, p.lon);
      b.lo_lat = std::min(b.lo_lat, p.lat);
      b.hi_lat = std::max(b.hi_lat, p.lat);
    }
    boxes.push_back(b);
    min_lon = std::min(min_lon, b.lo_lon);
    max_lon = std::max(max_lon, b.hi_lon);
    min_lat = std::min(min_lat, b.lo_lat);
    max_lat = std::max(max_lat, b.hi_lat);
  }

  int nx = static_cast<int>(std::floor((max_lon - min_lon) / stride_deg)) + 1;
  int ny = static_cast<int>(std::floor((max_lat - min_lat) / stride_deg)) + 1;
  // +1 slack for the difference-array exclusive bound
  std::vector<long long> diff(static_cast<size_t>(nx + 1) * (ny + 1), 0);

  auto clamp_idx = [](int v, int hi) { return std::clamp(v, 0, hi); };
  for (const auto& b : boxes) {
    // window origin X must satisfy X <= lo and X + width >= hi
    int x0 = static_cast<int>(std::ceil((b.hi_lon - width_deg - min_lon) / stride_deg - 1e-12));
    int x1 = static_cast<int>(std::floor((b.lo_lon - min_lon) / stride_deg + 1e-12));
    int y0 = static_cast<int>(std::ceil((b.hi_lat - width_deg - min_lat) / stride_deg - 1e-12));
    int y1 = static_cast<int>(std::floor((b.lo_lat - min_lat) / stride_deg + 1e-12));
    if (x0 > x1 || y0 > y1) continue;  // trip wider than the window
    x0 = clamp_idx(x0, nx - 1);
    x1 = clamp_idx(x1, nx - 1);
    y0 = clamp_idx(y0, ny - 1);
    y1 = clamp_idx(y1, ny - 1);
    diff[static_cast<size_t>(y0) * (nx + 1) + x0] += 1;
    diff[static_cast<size_t>(y0) * (nx + 1) + x1 + 1] -= 1;
    diff[static_cast<size_t>(y1 + 1) * (nx + 1) + x0] -= 1;
    diff[static_cast<size_t>(y1 + 1) * (nx + 1) + x1 + 1] += 1;
  }

  long long best = 0;
  int best_x = -1, best_y = -1;
  std::vector<long long> row_acc(static_cast<size_t>(nx + 1), 0);
  std::vector<long long> counts(static_cast<size_t>(nx), 0);
  for (int y = 0; y < ny; ++y) {
    long long acc = 0;
    for (int x = 0; x < nx; ++x) {
      row_acc[static_cast<size_t>(x)] += diff[static_cast<size_t>(y) * (nx + 1) + x];
      acc += row_acc[static_cast<size_t>(x)];
      counts[static_cast<size_t>(x)] = acc;
      if (acc > best) {
        best = acc;
        best_x = x;
        best_y = y;
      }
    }
  }
  if (best <= 0) fail("select_dense_region: no window contains a whole trip");
  RegionSelection out;
  out.min_corner = GeoPoint{min_lat + best_y * stride_deg, min_lon + best_x * stride_deg};
  out.max_corner = GeoPoint{out.min_corner.lat + width_deg, out.min_corner.lon + width_deg};
  out.trips_covered = static_cast<size_t>(best);
  return out;
}

struct BboxFilterResult {
  std::vector<Trip> kept;
  size_t dropped = 0;
};

// Keeps trips whose every point lies inside the box (boundaries included).
inline BboxFilterResult filter_trips_bbox(std::vector<Trip> trips, const GeoPoint& min_corner,
                                          const GeoPoint& max_corner) {
  BboxFilterResult out;
  for (auto& t : trips) {
    bool inside = true;
    for (const auto& p : t.points) {
      if (p.lat < min_corner.lat || p.lat > max_corner.lat || p.lon < min_corner.lon ||
          p.lon > max_corner.lon) {
        inside = false;
        break;
      }
    }
    if (inside)
      out.kept.push_back(std::move(t));
    else
      ++out.dropped;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset split

struct SplitFractions {
  double train = 0.79;
  double val = 0.09;
  double test = 0.12;
};

struct SplitIndices {
  std::vector<size_t> train;
  std::vector<size_t> val;
  std::vector<size_t> test;
};

// Deterministic seeded shuffle; floor allocation for val and test with the
// remainder going to train.
inline SplitIndices split_dataset(size_t n, const SplitFractions& f, uint64_t seed) {
  if (!(f.train > 0.0) || !(f.val > 0.0) || !(f.test > 0.0))
    fail("split_dataset: all fractions must be positive");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    fail("split_dataset: fractions must sum to 1");
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  size_t n_val = static_cast<size_t>(std::floor(f.val * static_cast<double>(n)));
  size_t n_test = static_cast<size_t>(std::floor(f.test * static_cast<double>(n)));
  if (n_val + n_test > n) fail("split_dataset: fractions leave no training data");
  SplitIndices out;
  out.train.assign(order.begin(), order.end() - static_cast<long>(n_val + n_test));
  out.val.assign(order.end() - static_cast<long>(n_val + n_test), order.end() - static_cast<long>(n_test));
  out.test.assign(order.end() - static_cast<long>(n_test), order.end());
  return out;
}

// ---------------------------------------------------------------------------
// Distance attachment

// Recomputes the coordinate-distance series from the raw points and the
// map-distance series from shortest paths over the attributed nodes. Both
// series are kept on the trip.
inline void attach_distances(MappedTrip& m, const RoadNetwork& net) {
  size_t n = m.trip.points.size();
  m.trip.dist_gap.assign(n, 0.0);
  double acc = 0.0;
  for (size_t i = 1; i < n; ++i) {
    acc += vincenty_distance_km(m.trip.points[i - 1], m.trip.points[i]);
    m.trip.dist_gap[i] = acc;
  }
  m.trip.total_dist = acc;

  TripMapDistances md = trip_map_distances(net, m.node_ids);
  m.dist_gap_map_km = std::move(md.cumulative_km);
  m.total_dist_map_km = md.total_km;
  m.fallback_hops = md.fallback_hops;
}

// ---------------------------------------------------------------------------
// Mapped-trip JSONL artifact. First line is a meta record; every following
// line is one trip. Floats are rounded to 9 decimals before serialization.

inline nlohmann::json mapped_trip_to_json(const MappedTrip& m) {
  auto round_vec = [](const std::vector<double>& v) {
    std::vector<double> out;
    out.reserve(v.size());
    for (double x : v) out.push_back(round_decimals(x, 9));
    return out;
  };
  nlohmann::json j;
  j["driverID"] = m.trip.driver_id;
  j["dateID"] = m.trip.date_id;
  j["weekID"] = m.trip.week_id;
  j["timeID"] = m.trip.time_id;
  j["time"] = round_decimals(m.trip.total_time, 9);
  j["dist"] = round_decimals(m.trip.total_dist, 9);
  j["dist_map"] = round_decimals(m.total_dist_map_km, 9);
  std::vector<double> lats, lngs, nlats, nlngs;
  for (const auto& p : m.trip.points) {
    lats.push_back(round_decimals(p.lat, 9));
    lngs.push_back(round_decimals(p.lon, 9));
  }
  for (const auto& p : m.node_locations) {
    nlats.push_back(p.lat);
    nlngs.push_back(p.lon);
  }
  j["lats"] = lats;
  j["lngs"] = lngs;
  j["node_ids"] = m.node_ids;
  j["node_lats"] = nlats;
  j["node_lngs"] = nlngs;
  j["attr_err"] = round_vec(m.attribution_errors_km);
  j["time_gap"] = round_vec(m.trip.time_gap);
  j["dist_gap"] = round_vec(m.trip.dist_gap);
  j["dist_gap_map"] = round_vec(m.dist_gap_map_km);
  j["fallback_hops"] = m.fallback_hops;
  return j;
}

inline MappedTrip mapped_trip_from_json(const nlohmann::json& j) {
  MappedTrip m;
  m.trip.driver_id = j.at("driverID").get<long long>();
  m.trip.date_id = j.at("dateID").get<int>();
  m.trip.week_id = j.at("weekID").get<int>();
  m.trip.time_id = j.at("timeID").get<int>();
  m.trip.total_time = j.at("time").get<double>();
  m.trip.total_dist = j.at("dist").get<double>();
  m.total_dist_map_km = j.at("dist_map").get<double>();
  auto lats = j.at("lats").get<std::vector<double>>();
  auto lngs = j.at("lngs").get<std::vector<double>>();
  auto nlats = j.at("node_lats").get<std::vector<double>>();
  auto nlngs = j.at("node_lngs").get<std::vector<double>>();
  if (lats.size() != lngs.size() || nlats.size() != nlngs.size())
    fail("mapped trip record: lat/lng size mismatch");
  for (size_t i = 0; i < lats.size(); ++i) m.trip.points.push_back(GeoPoint{lats[i], lngs[i]});
  for (size_t i = 0; i < nlats.size(); ++i) m.node_locations.push_back(GeoPoint{nlats[i], nlngs[i]});
  m.node_ids = j.at("node_ids").get<std::vector<long long>>();
  m.attribution_errors_km = j.at("attr_err").get<std::vector<double>>();
  m.trip.time_gap = j.at("time_gap").get<std::vector<double>>();
  m.trip.dist_gap = j.at("dist_gap").get<std::vector<double>>();
  m.dist_gap_map_km = j.at("dist_gap_map").get<std::vector<double>>();
  m.fallback_hops = j.at("fallback_hops").get<int>();
  return m;
}

inline std::string serialize_mapped_trips(const std::vector<MappedTrip>& trips,
                                          const std::string& config_echo) {
  nlohmann::json meta;
  meta["format"] = "tte.mapped_trips.v1";
  meta["count"] = trips.size();
  meta["config"] = config_echo;
  std::string out = meta.dump() + "\n";
  for (const auto& m : trips) out += mapped_trip_to_json(m).dump() + "\n";
  return out;
}

inline std::vector<MappedTrip> parse_mapped_trips(const std::string& text) {
  std::vector<MappedTrip> out;
  size_t pos = 0;
  size_t line_no = 0;
  bool meta_seen = false;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) fail(strprintf("mapped trips: bad JSON at line %zu", line_no));
    if (!meta_seen) {
      if (!j.contains("format") || j["format"] != "tte.mapped_trips.v1")
        fail("mapped trips: missing or wrong format marker on first line");
      meta_seen = true;
      continue;
    }
    try {
      out.push_back(mapped_trip_from_json(j));
    } catch (const std::exception& e) {
      fail(strprintf("mapped trips: line %zu: %s", line_no, e.what()));
    }
  }
  if (!meta_seen) fail("mapped trips: empty artifact");
  return out;
}

inline void save_mapped_trips(const std::vector<MappedTrip>& trips, const std::string& path,
                              const std::string& config_echo) {
  write_file(path, serialize_mapped_trips(trips, config_echo));
}

inline std::vector<MappedTrip> load_mapped_trips(const std::string& path) {
  return parse_mapped_trips(read_file(path));
}

}  // namespace tte
