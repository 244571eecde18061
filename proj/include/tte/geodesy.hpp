#pragma once

#include <cmath>
#include <optional>

#include "tte/common.hpp"

namespace tte {

// WGS-84 ellipsoid, kilometers.
constexpr double kWgs84MajorKm = 6378.137;
constexpr double kWgs84Flattening = 1.0 / 298.257223563;
constexpr double kWgs84MinorKm = kWgs84MajorKm * (1.0 - kWgs84Flattening);
constexpr double kEarthMeanRadiusKm = 6371.0088;
// Smallest radius of curvature on the ellipsoid (meridional, at the
// equator); scaling central angles by it lower-bounds any surface distance.
constexpr double kMinCurvatureRadiusKm = kWgs84MajorKm * (1.0 - kWgs84Flattening) * (1.0 - kWgs84Flattening);

constexpr int kVincentyMaxIterations = 200;
constexpr double kVincentyLambdaTolerance = 1e-12;

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;

  friend bool operator==(const GeoPoint& a, const GeoPoint& b) {
    return a.lat == b.lat && a.lon == b.lon;
  }
};

inline bool geopoint_valid(const GeoPoint& p) {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 && p.lat <= 90.0 &&
         p.lon >= -180.0 && p.lon <= 180.0;
}

inline GeoPoint make_geopoint(double lat, double lon) {
  GeoPoint p{lat, lon};
  if (!geopoint_valid(p)) fail(strprintf("invalid geo point (%g, %g)", lat, lon));
  return p;
}

inline double deg2rad(double d) { return d * (M_PI / 180.0); }

inline double haversine_km(const GeoPoint& a, const GeoPoint& b) {
  double phi1 = deg2rad(a.lat);
  double phi2 = deg2rad(b.lat);
  double dphi = deg2rad(b.lat - a.lat);
  double dlam = deg2rad(b.lon - a.lon);
  double s1 = std::sin(dphi / 2.0);
  double s2 = std::sin(dlam / 2.0);
  double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthMeanRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

namespace detail {

// Vincenty inverse, distance only. Returns nullopt when the lambda
// iteration does not converge (near-antipodal inputs).
inline std::optional<double> vincenty_inverse_km(const GeoPoint& a, const GeoPoint& b) {
  const double f = kWgs84Flattening;
  double u1 = std::atan((1.0 - f) * std::tan(deg2rad(a.lat)));
  double u2 = std::atan((1.0 - f) * std::tan(deg2rad(b.lat)));
  double big_l = deg2rad(b.lon - a.lon);
  double sin_u1 = std::sin(u1), cos_u1 = std::cos(u1);
  double sin_u2 = std::sin(u2), cos_u2 = std::cos(u2);

  double lambda = big_l;
  double sin_sigma = 0.0, cos_sigma = 0.0, sigma = 0.0;
  double cos_sq_alpha = 0.0, cos_2sigma_m = 0.0;
  bool converged = false;
  for (int it = 0; it < kVincentyMaxIterations; ++it) {
    double sin_lambda = std::sin(lambda);
    double cos_lambda = std::cos(lambda);
    double t1 = cos_u2 * sin_lambda;
    double t2 = cos_u1 * sin_u2 - sin_u1 * cos_u2 * cos_lambda;
    sin_sigma = std::sqrt(t1 * t1 + t2 * t2);
    if (sin_sigma == 0.0) return 0.0;  // coincident points
    cos_sigma = sin_u1 * sin_u2 + cos_u1 * cos_u2 * cos_lambda;
    sigma = std::atan2(sin_sigma, cos_sigma);
    double sin_alpha = cos_u1 * cos_u2 * sin_lambda / sin_sigma;
    cos_sq_alpha = 1.0 - sin_alpha * sin_alpha;
    cos_2sigma_m = (cos_sq_alpha != 0.0) ? cos_sigma - 2.0 * sin_u1 * sin_u2 / cos_sq_alpha : 0.0;
    double c = f / 16.0 * cos_sq_alpha * (4.0 + f * (4.0 - 3.0 * cos_sq_alpha));
    double lambda_prev = lambda;
    lambda = big_l + (1.0 - c) * f * sin_alpha *
                         (sigma + c * sin_sigma *
                                      (cos_2sigma_m +
                                       c * cos_sigma * (-1.0 + 2.0 * cos_2sigma_m * cos_2sigma_m)));
    if (std::abs(lambda - lambda_prev) < kVincentyLambdaTolerance) {
      converged = true;
      break;
    }
  }
  if (!converged) return std::nullopt;

  double a_km = kWgs84MajorKm, b_km = kWgs84MinorKm;
  double u_sq = cos_sq_alpha * (a_km * a_km - b_km * b_km) / (b_km * b_km);
  double big_a = 1.0 + u_sq / 16384.0 * (4096.0 + u_sq * (-768.0 + u_sq * (320.0 - 175.0 * u_sq)));
  double big_b = u_sq / 1024.0 * (256.0 + u_sq * (-128.0 + u_sq * (74.0 - 47.0 * u_sq)));
  double delta_sigma =
      big_b * sin_sigma *
      (cos_2sigma_m + big_b / 4.0 *
                          (cos_sigma * (-1.0 + 2.0 * cos_2sigma_m * cos_2sigma_m) -
                           big_b / 6.0 * cos_2sigma_m * (-3.0 + 4.0 * sin_sigma * sin_sigma) *
                               (-3.0 + 4.0 * cos_2sigma_m * cos_2sigma_m)));
  return b_km * big_a * (sigma - delta_sigma);
}

}  // namespace detail

// Geodesic distance in kilometers. Inputs are canonicalized so that the
// result is bit-for-bit symmetric. Falls back to haversine on the mean
// sphere when the Vincenty iteration fails to converge (near-antipodal).
inline double vincenty_distance_km(const GeoPoint& a, const GeoPoint& b) {
  if (a == b) return 0.0;
  const GeoPoint* lo = &a;
  const GeoPoint* hi = &b;
  if (b.lat < a.lat || (b.lat == a.lat && b.lon < a.lon)) {
    lo = &b;
    hi = &a;
  }
  std::optional<double> d = detail::vincenty_inverse_km(*lo, *hi);
  if (d) return *d;
  return haversine_km(*lo, *hi);
}

struct GridSpec {
  GeoPoint min_corner;
  GeoPoint max_corner;
  double cell_deg = 0.005;
  int n_rows = 0;
  int n_cols = 0;

  static GridSpec make(const GeoPoint& min_corner, const GeoPoint& max_corner, double cell_deg) {
    if (!geopoint_valid(min_corner) || !geopoint_valid(max_corner))
      fail("grid corners must be valid geo points");
    if (!(min_corner.lat < max_corner.lat && min_corner.lon < max_corner.lon))
      fail("grid min corner must be strictly south-west of max corner");
    if (!(cell_deg > 0.0) || !std::isfinite(cell_deg)) fail("grid cell_deg must be > 0");
    GridSpec g;
    g.min_corner = min_corner;
    g.max_corner = max_corner;
    g.cell_deg = cell_deg;
    g.n_rows = static_cast<int>(std::ceil((max_corner.lat - min_corner.lat) / cell_deg));
    g.n_cols = static_cast<int>(std::ceil((max_corner.lon - min_corner.lon) / cell_deg));
    g.n_rows = std::max(g.n_rows, 1);
    g.n_cols = std::max(g.n_cols, 1);
    return g;
  }
};

struct Cell {
  int row = 0;
  int col = 0;

  friend bool operator==(const Cell& a, const Cell& b) { return a.row == b.row && a.col == b.col; }
};

// Floor bucketing; points on the max boundary fold into the last cell so
// that the box is fully partitioned. Out-of-bounds points get nullopt.
inline std::optional<Cell> cell_of(const GeoPoint& p, const GridSpec& g) {
  if (p.lat < g.min_corner.lat || p.lat > g.max_corner.lat || p.lon < g.min_corner.lon ||
      p.lon > g.max_corner.lon)
    return std::nullopt;
  int row = static_cast<int>(std::floor((p.lat - g.min_corner.lat) / g.cell_deg));
  int col = static_cast<int>(std::floor((p.lon - g.min_corner.lon) / g.cell_deg));
  row = std::clamp(row, 0, g.n_rows - 1);
  col = std::clamp(col, 0, g.n_cols - 1);
  return Cell{row, col};
}

}  // namespace tte
