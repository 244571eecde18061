#pragma once

#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <unordered_map>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "tte/common.hpp"
#include "tte/geodesy.hpp"

namespace tte {

struct RoadNode {
  long long id = 0;  // original (e.g. OSM) identifier
  GeoPoint location;
};

struct RoadEdge {
  int target = 0;  // internal index
  double length_km = 0.0;
};

// Immutable geo-referenced graph. Internal indices are dense 0..n-1 in
// insertion order; adjacency holds directed edges only (a bidirectional
// road contributes one entry per direction).
struct RoadNetwork {
  std::vector<RoadNode> nodes;
  std::vector<std::vector<RoadEdge>> adjacency;
  GeoPoint bbox_min;
  GeoPoint bbox_max;
  std::string metadata;
  std::unordered_map<long long, int> id_to_index;

  size_t node_count() const { return nodes.size(); }

  size_t edge_count() const {
    size_t n = 0;
    for (const auto& a : adjacency) n += a.size();
    return n;
  }

  int index_of(long long id) const {
    auto it = id_to_index.find(id);
    if (it == id_to_index.end()) fail(strprintf("unknown node id %lld", id));
    return it->second;
  }

  const RoadNode& node_by_id(long long id) const { return nodes[static_cast<size_t>(index_of(id))]; }
};

class RoadNetworkBuilder {
public:
  // Coordinates are quantized to 9 decimal places on entry; that is the
  // precision of the edge-list text format, so saved and rebuilt networks
  // agree bit for bit.
  void add_node(long long id, double lat, double lon) {
    if (!std::isfinite(lat) || !std::isfinite(lon))
      fail(strprintf("non-finite coordinates for node %lld", id));
    GeoPoint p = make_geopoint(round_decimals(lat, 9), round_decimals(lon, 9));
    if (net_.id_to_index.count(id)) fail(strprintf("duplicate node id %lld", id));
    net_.id_to_index.emplace(id, static_cast<int>(net_.nodes.size()));
    net_.nodes.push_back(RoadNode{id, p});
    net_.adjacency.emplace_back();
  }

  bool has_node(long long id) const { return net_.id_to_index.count(id) > 0; }

  // Length computed from endpoint geodesic distance.
  void add_edge(long long src_id, long long dst_id, bool directed) {
    int s = net_.index_of(src_id);
    int t = net_.index_of(dst_id);
    double len = round_decimals(
        vincenty_distance_km(net_.nodes[s].location, net_.nodes[t].location), 9);
    add_edge_internal(s, t, len, directed);
  }

  // Length supplied by the caller (edge-list loads, fixture graphs).
  void add_edge_with_length(long long src_id, long long dst_id, double length_km, bool directed) {
    int s = net_.index_of(src_id);
    int t = net_.index_of(dst_id);
    if (!std::isfinite(length_km) || length_km <= 0.0)
      fail(strprintf("edge %lld->%lld has non-positive length", src_id, dst_id));
    add_edge_internal(s, t, round_decimals(length_km, 9), directed);
  }

  void set_metadata(const std::string& m) { net_.metadata = m; }

  size_t dropped_degenerate_edges() const { return dropped_; }

  RoadNetwork build() {
    if (net_.nodes.empty()) fail("empty network: no nodes");
    double min_lat = 90.0, max_lat = -90.0, min_lon = 180.0, max_lon = -180.0;
    for (const auto& n : net_.nodes) {
      min_lat = std::min(min_lat, n.location.lat);
      max_lat = std::max(max_lat, n.location.lat);
      min_lon = std::min(min_lon, n.location.lon);
      max_lon = std::max(max_lon, n.location.lon);
    }
    net_.bbox_min = GeoPoint{min_lat, min_lon};
    net_.bbox_max = GeoPoint{max_lat, max_lon};
    // canonical adjacency: sorted, parallel edges collapsed to the shortest
    for (auto& adj : net_.adjacency) {
      std::sort(adj.begin(), adj.end(), [](const RoadEdge& a, const RoadEdge& b) {
        return a.target != b.target ? a.target < b.target : a.length_km < b.length_km;
      });
      adj.erase(std::unique(adj.begin(), adj.end(),
                            [](const RoadEdge& a, const RoadEdge& b) { return a.target == b.target; }),
                adj.end());
    }
    return std::move(net_);
  }

private:
  void add_edge_internal(int s, int t, double len, bool directed) {
    if (s == t || len <= 0.0) {
      ++dropped_;  // zero-length loops carry no routing information
      return;
    }
    net_.adjacency[static_cast<size_t>(s)].push_back(RoadEdge{t, len});
    if (!directed) net_.adjacency[static_cast<size_t>(t)].push_back(RoadEdge{s, len});
  }

  RoadNetwork net_;
  size_t dropped_ = 0;
};

// ---------------------------------------------------------------------------
// OSM XML ingestion

namespace detail {

struct OsmWay {
  std::vector<long long> refs;
  bool highway = false;
  int oneway = 0;  // 0 both, 1 forward, -1 reverse
};

}  // namespace detail

// Parses an OSM XML extract. Keeps ways carrying a highway tag; consecutive
// node pairs become edges with geodesic lengths; oneway tags are honored.
// Nodes outside `bbox` (when given) are dropped with their incident edges.
inline RoadNetwork parse_osm_xml(std::istream& in,
                                 const std::optional<std::pair<GeoPoint, GeoPoint>>& bbox = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    fail(strprintf("OSM XML parse error at line %lu: %s",
                   static_cast<unsigned long>(e.line()), e.message().c_str()));
  }

  auto root = tree.get_child_optional("osm");
  if (!root) fail("OSM XML parse error: missing <osm> root element");

  std::unordered_map<long long, GeoPoint> raw_nodes;
  std::vector<detail::OsmWay> ways;

  for (const auto& [name, child] : *root) {
    if (name == "node") {
      long long id = child.get<long long>("<xmlattr>.id");
      double lat = child.get<double>("<xmlattr>.lat");
      double lon = child.get<double>("<xmlattr>.lon");
      if (!std::isfinite(lat) || !std::isfinite(lon))
        fail(strprintf("OSM node %lld has non-finite coordinates", id));
      if (bbox) {
        if (lat < bbox->first.lat || lat > bbox->second.lat || lon < bbox->first.lon ||
            lon > bbox->second.lon)
          continue;
      }
      raw_nodes[id] = make_geopoint(lat, lon);
    } else if (name == "way") {
      detail::OsmWay way;
      for (const auto& [cname, cchild] : child) {
        if (cname == "nd") {
          way.refs.push_back(cchild.get<long long>("<xmlattr>.ref"));
        } else if (cname == "tag") {
          std::string k = cchild.get<std::string>("<xmlattr>.k", "");
          std::string v = cchild.get<std::string>("<xmlattr>.v", "");
          if (k == "highway") way.highway = true;
          if (k == "oneway") {
            if (v == "yes" || v == "true" || v == "1") way.oneway = 1;
            if (v == "-1" || v == "reverse") way.oneway = -1;
          }
        }
      }
      if (way.highway && way.refs.size() >= 2) ways.push_back(std::move(way));
    }
  }

  if (ways.empty()) fail("empty network: OSM extract contains no highway ways");

  RoadNetworkBuilder builder;
  size_t missing_refs = 0;
  for (const auto& way : ways) {
    for (long long ref : way.refs) {
      if (raw_nodes.count(ref) && !builder.has_node(ref)) {
        const GeoPoint& p = raw_nodes[ref];
        builder.add_node(ref, p.lat, p.lon);
      }
    }
  }
  size_t hops = 0;
  for (const auto& way : ways) {
    for (size_t i = 0; i + 1 < way.refs.size(); ++i) {
      long long u = way.refs[i];
      long long v = way.refs[i + 1];
      if (!builder.has_node(u) || !builder.has_node(v)) {
        ++missing_refs;
        continue;
      }
      if (way.oneway == -1) std::swap(u, v);
      builder.add_edge(u, v, way.oneway != 0);
      ++hops;
    }
  }
  if (hops == 0) fail("empty network: no usable way segments after filtering");
  RoadNetwork net = builder.build();
  net.metadata = strprintf("source=osm_xml nodes=%zu edges=%zu ways=%zu skipped_segments=%zu",
                           net.node_count(), net.edge_count(), ways.size(), missing_refs);
  return net;
}

// ---------------------------------------------------------------------------
// Edge-list text format
//
//   ## free-form metadata lines
//   # nodes
//   id,lat,lon
//   # edges
//   src_id,dst_id,length_km,directed(0|1)
//
// Floats carry 9 decimal places; both save->load and load->save are exact.

inline std::string serialize_edge_list(const RoadNetwork& net) {
  std::string out;
  out += "## tte.edgelist.v1\n";
  if (!net.metadata.empty()) out += "## meta " + net.metadata + "\n";
  out += "# nodes\n";
  for (const auto& n : net.nodes) {
    out += strprintf("%lld,%s,%s\n", n.id, format_fixed(n.location.lat, 9).c_str(),
                     format_fixed(n.location.lon, 9).c_str());
  }
  // canonical form: a matched pair of opposite directed edges with equal
  // length collapses to one undirected row
  std::map<std::pair<long long, long long>, std::pair<double, int>> rows;  // id pair -> (len, dir)
  std::map<std::pair<int, int>, double> directed_len;
  for (size_t s = 0; s < net.adjacency.size(); ++s)
    for (const auto& e : net.adjacency[s])
      directed_len[{static_cast<int>(s), e.target}] = e.length_km;
  for (const auto& [key, len] : directed_len) {
    auto [s, t] = key;
    long long sid = net.nodes[static_cast<size_t>(s)].id;
    long long tid = net.nodes[static_cast<size_t>(t)].id;
    auto rev = directed_len.find({t, s});
    if (rev != directed_len.end() && rev->second == len) {
      if (sid < tid) rows[{sid, tid}] = {len, 0};
    } else {
      rows[{sid, tid}] = {len, 1};
    }
  }
  out += "# edges\n";
  for (const auto& [key, val] : rows) {
    out += strprintf("%lld,%lld,%s,%d\n", key.first, key.second,
                     format_fixed(val.first, 9).c_str(), val.second);
  }
  return out;
}

inline void save_edge_list(const RoadNetwork& net, const std::string& path) {
  write_file(path, serialize_edge_list(net));
}

inline RoadNetwork parse_edge_list(const std::string& text, const std::string& origin) {
  RoadNetworkBuilder builder;
  enum class Section { kPreamble, kNodes, kEdges } section = Section::kPreamble;
  size_t line_no = 0;
  size_t pos = 0;
  bool any_node = false;
  while (pos <= text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (pos > text.size() && line.empty()) break;
    if (line.empty()) continue;
    if (line.rfind("## meta ", 0) == 0) {
      builder.set_metadata(line.substr(8));
      continue;
    }
    if (line.rfind("##", 0) == 0) continue;  // other comment lines
    if (line == "# nodes") {
      section = Section::kNodes;
      continue;
    }
    if (line == "# edges") {
      section = Section::kEdges;
      continue;
    }
    auto where = [&] { return strprintf("%s line %zu", origin.c_str(), line_no); };
    if (section == Section::kPreamble) fail("edge list: data before '# nodes' header at " + where());
    auto cols = split(line, ',');
    if (section == Section::kNodes) {
      if (cols.size() != 3) fail("edge list: expected id,lat,lon at " + where());
      long long id = parse_int(cols[0], where());
      double lat = parse_double(cols[1], where());
      double lon = parse_double(cols[2], where());
      if (!std::isfinite(lat) || !std::isfinite(lon))
        fail("edge list: non-finite coordinates at " + where());
      builder.add_node(id, lat, lon);
      any_node = true;
    } else {
      if (cols.size() != 4) fail("edge list: expected src,dst,length,directed at " + where());
      long long src = parse_int(cols[0], where());
      long long dst = parse_int(cols[1], where());
      double len = parse_double(cols[2], where());
      long long dir = parse_int(cols[3], where());
      if (dir != 0 && dir != 1) fail("edge list: directed flag must be 0 or 1 at " + where());
      if (!builder.has_node(src) || !builder.has_node(dst))
        fail("edge list: dangling edge endpoint at " + where());
      builder.add_edge_with_length(src, dst, len, dir == 1);
    }
  }
  if (!any_node) fail("edge list: no nodes in " + origin);
  return builder.build();
}

inline RoadNetwork load_edge_list(const std::string& path) {
  return parse_edge_list(read_file(path), path);
}

// ---------------------------------------------------------------------------
// Shortest paths

namespace detail {

struct DijkstraScratch {
  std::vector<double> dist;
  std::vector<int> prev;
};

inline void dijkstra(const RoadNetwork& net, int src, int dst, DijkstraScratch& scratch) {
  const double inf = std::numeric_limits<double>::infinity();
  scratch.dist.assign(net.nodes.size(), inf);
  scratch.prev.assign(net.nodes.size(), -1);
  scratch.dist[static_cast<size_t>(src)] = 0.0;
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  queue.emplace(0.0, src);
  while (!queue.empty()) {
    auto [d, u] = queue.top();
    queue.pop();
    if (d > scratch.dist[static_cast<size_t>(u)]) continue;
    if (u == dst) return;
    for (const auto& e : net.adjacency[static_cast<size_t>(u)]) {
      double nd = d + e.length_km;
      if (nd < scratch.dist[static_cast<size_t>(e.target)]) {
        scratch.dist[static_cast<size_t>(e.target)] = nd;
        scratch.prev[static_cast<size_t>(e.target)] = u;
        queue.emplace(nd, e.target);
      }
    }
  }
}

}  // namespace detail

// Shortest directed path length between two node ids, or nullopt when dst
// is unreachable from src.
inline std::optional<double> map_distance(const RoadNetwork& net, long long src_id,
                                          long long dst_id) {
  int s = net.index_of(src_id);
  int t = net.index_of(dst_id);
  if (s == t) return 0.0;
  detail::DijkstraScratch scratch;
  detail::dijkstra(net, s, t, scratch);
  double d = scratch.dist[static_cast<size_t>(t)];
  if (!std::isfinite(d)) return std::nullopt;
  return d;
}

// Node-id sequence of a shortest path (inclusive of both endpoints).
inline std::optional<std::vector<long long>> shortest_path(const RoadNetwork& net, long long src_id,
                                                           long long dst_id) {
  int s = net.index_of(src_id);
  int t = net.index_of(dst_id);
  if (s == t) return std::vector<long long>{src_id};
  detail::DijkstraScratch scratch;
  detail::dijkstra(net, s, t, scratch);
  if (!std::isfinite(scratch.dist[static_cast<size_t>(t)])) return std::nullopt;
  std::vector<long long> path;
  for (int v = t; v != -1; v = scratch.prev[static_cast<size_t>(v)])
    path.push_back(net.nodes[static_cast<size_t>(v)].id);
  std::reverse(path.begin(), path.end());
  return path;
}

struct TripMapDistances {
  std::vector<double> cumulative_km;  // cumulative_km[i] = map distance from node 0 to node i
  double total_km = 0.0;
  int fallback_hops = 0;  // hops where no path existed and geodesic distance was used
};

// Cumulative shortest-path distances along an attributed node sequence.
// Unreachable hops fall back to the geodesic distance for that hop and are
// counted, not dropped.
inline TripMapDistances trip_map_distances(const RoadNetwork& net,
                                           const std::vector<long long>& node_ids) {
  if (node_ids.empty()) fail("trip_map_distances: empty node sequence");
  TripMapDistances out;
  out.cumulative_km.resize(node_ids.size(), 0.0);
  double acc = 0.0;
  for (size_t i = 0; i + 1 < node_ids.size(); ++i) {
    std::optional<double> hop = map_distance(net, node_ids[i], node_ids[i + 1]);
    double d;
    if (hop) {
      d = *hop;
    } else {
      d = vincenty_distance_km(net.node_by_id(node_ids[i]).location,
                               net.node_by_id(node_ids[i + 1]).location);
      ++out.fallback_hops;
    }
    acc += d;
    out.cumulative_km[i + 1] = acc;
  }
  out.total_km = acc;
  return out;
}

}  // namespace tte
