#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tte/common.hpp"

namespace tte {

struct EvalRecord {
  long long trip_id = 0;
  double true_s = 0.0;
  double pred_s = 0.0;
  double coord_km = 0.0;
  double map_km = 0.0;
  std::string variant;
  std::string distance_mode;
};

// mean(|pred - true| / true) * 100
inline double mape(const std::vector<EvalRecord>& records) {
  if (records.empty()) fail("mape: empty record set");
  double acc = 0.0;
  for (const auto& r : records) {
    if (!(r.true_s > 0.0)) fail(strprintf("mape: trip %lld has non-positive true time", r.trip_id));
    acc += std::abs(r.pred_s - r.true_s) / r.true_s;
  }
  return acc / static_cast<double>(records.size()) * 100.0;
}

enum class BucketKey { kCoordinate, kMap, kDifference };

inline const char* bucket_key_name(BucketKey k) {
  switch (k) {
    case BucketKey::kCoordinate: return "coordinate";
    case BucketKey::kMap: return "map";
    case BucketKey::kDifference: return "difference";
  }
  return "?";
}

inline double bucket_value(const EvalRecord& r, BucketKey key) {
  switch (key) {
    case BucketKey::kCoordinate: return r.coord_km;
    case BucketKey::kMap: return r.map_km;
    case BucketKey::kDifference: return r.map_km - r.coord_km;
  }
  return 0.0;
}

struct BucketRow {
  double lo = 0.0;  // -inf encoded as -infinity for the underflow row
  double hi = 0.0;
  size_t count = 0;
  double mape = 0.0;  // NaN when the bucket is empty
};

struct BucketReport {
  BucketKey key = BucketKey::kCoordinate;
  std::string variant;
  std::vector<double> edges;
  std::vector<BucketRow> rows;  // underflow, [e0,e1)... , overflow
};

// Half-open [lo, hi) buckets over the edge list, plus an underflow bucket
// below the first edge and an overflow bucket from the last edge up.
inline BucketReport bucket_by(const std::vector<EvalRecord>& records, BucketKey key,
                              const std::vector<double>& edges) {
  if (edges.size() < 2) fail("bucket_by: need at least two edges");
  for (size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) fail("bucket_by: edges must be strictly increasing");

  BucketReport report;
  report.key = key;
  report.edges = edges;
  if (!records.empty()) report.variant = records.front().variant;

  const double inf = std::numeric_limits<double>::infinity();
  size_t m = edges.size();
  std::vector<std::vector<EvalRecord>> groups(m + 1);
  for (const auto& r : records) {
    double v = bucket_value(r, key);
    size_t idx;
    if (v < edges.front()) {
      idx = 0;
    } else if (v >= edges.back()) {
      idx = m;
    } else {
      idx = static_cast<size_t>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin());
    }
    groups[idx].push_back(r);
  }
  for (size_t i = 0; i <= m; ++i) {
    BucketRow row;
    row.lo = i == 0 ? -inf : edges[i - 1];
    row.hi = i == m ? inf : edges[i];
    row.count = groups[i].size();
    row.mape = groups[i].empty() ? std::numeric_limits<double>::quiet_NaN() : mape(groups[i]);
    report.rows.push_back(row);
  }
  return report;
}

inline std::string bucket_report_to_csv(const std::vector<BucketReport>& reports) {
  std::string out = "key,bucket_lo,bucket_hi,count,mape,variant\n";
  for (const auto& rep : reports) {
    for (const auto& row : rep.rows) {
      out += strprintf("%s,%s,%s,%zu,%s,%s\n", bucket_key_name(rep.key),
                       std::isinf(row.lo) ? "-inf" : format_fixed(row.lo, 3).c_str(),
                       std::isinf(row.hi) ? "inf" : format_fixed(row.hi, 3).c_str(), row.count,
                       std::isnan(row.mape) ? "nan" : format_fixed(row.mape, 6).c_str(),
                       rep.variant.c_str());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-variant comparison (the Table-1-style summary)

struct ComparisonCell {
  std::string variant;
  std::string distance_mode;
  double mape = 0.0;
  size_t count = 0;
};

// Groups records by (variant, distance mode). Every group must cover the
// same trip-id set; a mismatch reports the symmetric difference size.
inline std::vector<ComparisonCell> compare_variants(
    const std::vector<std::vector<EvalRecord>>& record_sets) {
  if (record_sets.empty()) fail("compare_variants: no record sets");
  std::map<std::pair<std::string, std::string>, std::vector<EvalRecord>> groups;
  for (const auto& set : record_sets)
    for (const auto& r : set) groups[{r.variant, r.distance_mode}].push_back(r);
  if (groups.empty()) fail("compare_variants: no records");

  const auto& ref = groups.begin()->second;
  std::set<long long> ref_ids;
  for (const auto& r : ref) ref_ids.insert(r.trip_id);
  for (const auto& [key, recs] : groups) {
    std::set<long long> ids;
    for (const auto& r : recs) ids.insert(r.trip_id);
    if (ids != ref_ids) {
      std::vector<long long> sym;
      std::set_symmetric_difference(ids.begin(), ids.end(), ref_ids.begin(), ref_ids.end(),
                                    std::back_inserter(sym));
      fail(strprintf("compare_variants: %s/%s evaluates a different trip set "
                     "(symmetric difference of %zu trips)",
                     key.first.c_str(), key.second.c_str(), sym.size()));
    }
  }

  // canonical row order: variant (L-GC, E-GC, EL-GC), then mode (map,
  // coordinate, both) to mirror the summary-table layout
  auto variant_rank = [](const std::string& v) {
    if (v == "L-GC") return 0;
    if (v == "E-GC") return 1;
    if (v == "EL-GC") return 2;
    return 3;
  };
  auto mode_rank = [](const std::string& m) {
    if (m == "map") return 0;
    if (m == "coordinate") return 1;
    if (m == "both") return 2;
    return 3;
  };
  std::vector<ComparisonCell> cells;
  for (const auto& [key, recs] : groups)
    cells.push_back(ComparisonCell{key.first, key.second, mape(recs), recs.size()});
  std::sort(cells.begin(), cells.end(), [&](const ComparisonCell& a, const ComparisonCell& b) {
    int va = variant_rank(a.variant), vb = variant_rank(b.variant);
    int ma = mode_rank(a.distance_mode), mb = mode_rank(b.distance_mode);
    return va != vb ? va < vb : (ma != mb ? ma < mb : a.variant < b.variant);
  });
  return cells;
}

inline std::string comparison_to_csv(const std::vector<ComparisonCell>& cells) {
  std::string out = "variant,distance_mode,mape\n";
  for (const auto& c : cells)
    out += strprintf("%s,%s,%s\n", c.variant.c_str(), c.distance_mode.c_str(),
                     format_fixed(c.mape, 6).c_str());
  return out;
}

// ---------------------------------------------------------------------------
// Record CSV artifact

inline std::string eval_records_to_csv(const std::vector<EvalRecord>& records,
                                       const std::string& header_note) {
  std::string out;
  if (!header_note.empty()) out += "# " + header_note + "\n";
  out += "# mape = mean(|pred - true| / true) * 100\n";
  out += "trip_id,true_s,pred_s,coord_km,map_km,variant,distance_mode\n";
  for (const auto& r : records)
    out += strprintf("%lld,%s,%s,%s,%s,%s,%s\n", r.trip_id, format_fixed(r.true_s, 6).c_str(),
                     format_fixed(r.pred_s, 6).c_str(), format_fixed(r.coord_km, 9).c_str(),
                     format_fixed(r.map_km, 9).c_str(), r.variant.c_str(),
                     r.distance_mode.c_str());
  return out;
}

inline std::vector<EvalRecord> eval_records_from_csv(const std::string& text,
                                                     const std::string& origin) {
  std::vector<EvalRecord> out;
  size_t pos = 0, line_no = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != "trip_id,true_s,pred_s,coord_km,map_km,variant,distance_mode")
        fail("eval records: unexpected header in " + origin);
      header_seen = true;
      continue;
    }
    auto cols = split(line, ',');
    if (cols.size() != 7)
      fail(strprintf("eval records: expected 7 columns at %s line %zu", origin.c_str(), line_no));
    EvalRecord r;
    std::string where = strprintf("%s line %zu", origin.c_str(), line_no);
    r.trip_id = parse_int(cols[0], where);
    r.true_s = parse_double(cols[1], where);
    r.pred_s = parse_double(cols[2], where);
    r.coord_km = parse_double(cols[3], where);
    r.map_km = parse_double(cols[4], where);
    r.variant = cols[5];
    r.distance_mode = cols[6];
    out.push_back(std::move(r));
  }
  if (!header_seen) fail("eval records: no header in " + origin);
  return out;
}

}  // namespace tte
