#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tte/common.hpp"
#include "tte/embeddings.hpp"
#include "tte/evalreport.hpp"
#include "tte/matcher.hpp"
#include "tte/roadnet.hpp"
#include "tte/synthetic.hpp"
#include "tte/trips.hpp"
#include "tte/ttemodel.hpp"

namespace tte {

// Every tunable of the pipeline, file- and flag-settable. Unknown keys are
// rejected; the effective configuration is digested into every stage
// manifest.
struct PipelineConfig {
  uint64_t seed = 1;

  // matching
  double cell_deg = 0.005;
  double hist_bucket_km = 0.01;

  // region selection in prepare-trips: none | auto | bbox
  std::string region = "none";
  double region_width_deg = 0.55;
  double region_stride_deg = 0.055;
  double bbox_min_lat = 0.0;
  double bbox_min_lon = 0.0;
  double bbox_max_lat = 0.0;
  double bbox_max_lon = 0.0;

  // dataset split
  double split_train = 0.79;
  double split_val = 0.09;
  double split_test = 0.12;

  // node embeddings
  int walks_per_node = 10;
  int walk_length = 40;
  double return_p = 1.0;
  double inout_q = 1.0;
  int window = 5;
  int negatives = 5;
  int embed_epochs = 5;
  double embed_lr = 0.025;
  int embed_dim = 128;

  // model
  std::string variant = "L-GC";
  std::string distance_mode = "coordinate";
  int k = 3;
  int conv_channels = 32;
  int loc_dim = 16;
  int rnn_hidden = 128;
  int rnn_layers = 2;
  int attn_dim = 32;
  double beta = 0.3;
  int driver_embed_dim = 16;
  int week_embed_dim = 3;
  int time_embed_dim = 8;
  int use_date = 0;
  int date_embed_dim = 3;
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 1e-3;

  // evaluation
  std::string eval_split = "test";  // test | val | train | none
  std::string dist_edges = "0,2,4,6,8,10,12,14,16,18,20";
  std::string diff_edges = "0,0.5,1,1.5,2,2.5,3,3.5,4,4.5,5";

  // synthetic worlds
  std::string synth_kind = "grid";
  int synth_rows = 20;
  int synth_cols = 20;
  double synth_origin_lat = 41.05;
  double synth_origin_lon = -8.75;
  double synth_spacing_deg = 0.003;
  int synth_trips = 250;
  double synth_speed_kmh = 40.0;
  double synth_speed_sigma = 0.02;
  int synth_stride = 1;
  double synth_jitter_deg = 0.0;
  int synth_min_path = 12;
  int synth_max_path = 90;
  int synth_drivers = 10;
};

namespace cfgdetail {

enum class Kind { kU64, kInt, kDouble, kString };

struct Binding {
  const char* key = "";
  Kind kind = Kind::kInt;
  uint64_t PipelineConfig::*u64 = nullptr;
  int PipelineConfig::*i = nullptr;
  double PipelineConfig::*d = nullptr;
  std::string PipelineConfig::*s = nullptr;
  const char* help = "";

  Binding(const char* key_, uint64_t PipelineConfig::*p, const char* help_)
      : key(key_), kind(Kind::kU64), u64(p), help(help_) {}
  Binding(const char* key_, int PipelineConfig::*p, const char* help_)
      : key(key_), kind(Kind::kInt), i(p), help(help_) {}
  Binding(const char* key_, double PipelineConfig::*p, const char* help_)
      : key(key_), kind(Kind::kDouble), d(p), help(help_) {}
  Binding(const char* key_, std::string PipelineConfig::*p, const char* help_)
      : key(key_), kind(Kind::kString), s(p), help(help_) {}
};

#define TTE_CFG(field, help) \
  Binding { #field, &PipelineConfig::field, help }

inline const std::vector<Binding>& bindings() {
  static const std::vector<Binding> b = {
      TTE_CFG(seed, "global random seed"),
      TTE_CFG(cell_deg, "matcher grid cell size, degrees"),
      TTE_CFG(hist_bucket_km, "attribution histogram bucket, km"),
      TTE_CFG(region, "prepare-trips region mode: none|auto|bbox"),
      TTE_CFG(region_width_deg, "auto region window width, degrees"),
      TTE_CFG(region_stride_deg, "auto region stride, degrees"),
      TTE_CFG(bbox_min_lat, "explicit bbox south latitude"),
      TTE_CFG(bbox_min_lon, "explicit bbox west longitude"),
      TTE_CFG(bbox_max_lat, "explicit bbox north latitude"),
      TTE_CFG(bbox_max_lon, "explicit bbox east longitude"),
      TTE_CFG(split_train, "train fraction"),
      TTE_CFG(split_val, "validation fraction"),
      TTE_CFG(split_test, "test fraction"),
      TTE_CFG(walks_per_node, "walks started per node"),
      TTE_CFG(walk_length, "max walk length"),
      TTE_CFG(return_p, "walk return parameter p"),
      TTE_CFG(inout_q, "walk in-out parameter q"),
      TTE_CFG(window, "skip-gram window"),
      TTE_CFG(negatives, "negative samples per pair"),
      TTE_CFG(embed_epochs, "embedding training epochs"),
      TTE_CFG(embed_lr, "embedding learning rate"),
      TTE_CFG(embed_dim, "embedding dimension"),
      TTE_CFG(variant, "model variant: L-GC|E-GC|EL-GC"),
      TTE_CFG(distance_mode, "distance mode: coordinate|map|both"),
      TTE_CFG(k, "geo-convolution kernel size"),
      TTE_CFG(conv_channels, "geo-convolution channels"),
      TTE_CFG(loc_dim, "location feature dimension"),
      TTE_CFG(rnn_hidden, "recurrent hidden size"),
      TTE_CFG(rnn_layers, "stacked recurrent layers"),
      TTE_CFG(attn_dim, "attention score dimension"),
      TTE_CFG(beta, "local/global loss blend"),
      TTE_CFG(driver_embed_dim, "driver embedding dimension"),
      TTE_CFG(week_embed_dim, "weekday embedding dimension"),
      TTE_CFG(time_embed_dim, "time-slot embedding dimension"),
      TTE_CFG(use_date, "feed dateID to the attribute component (0|1)"),
      TTE_CFG(date_embed_dim, "date embedding dimension"),
      TTE_CFG(epochs, "training epochs"),
      TTE_CFG(batch_size, "training batch size"),
      TTE_CFG(learning_rate, "optimizer step size"),
      TTE_CFG(eval_split, "evaluate on: test|val|train|none"),
      TTE_CFG(dist_edges, "distance bucket edges, km"),
      TTE_CFG(diff_edges, "map-minus-coordinate bucket edges, km"),
      TTE_CFG(synth_kind, "synthetic world: grid|barrier"),
      TTE_CFG(synth_rows, "synthetic grid rows"),
      TTE_CFG(synth_cols, "synthetic grid columns"),
      TTE_CFG(synth_origin_lat, "synthetic origin latitude"),
      TTE_CFG(synth_origin_lon, "synthetic origin longitude"),
      TTE_CFG(synth_spacing_deg, "synthetic node spacing, degrees"),
      TTE_CFG(synth_trips, "synthetic trip count"),
      TTE_CFG(synth_speed_kmh, "synthetic base speed, km/h"),
      TTE_CFG(synth_speed_sigma, "synthetic lognormal speed sigma"),
      TTE_CFG(synth_stride, "synthetic sampling stride, nodes"),
      TTE_CFG(synth_jitter_deg, "synthetic gps jitter, degrees"),
      TTE_CFG(synth_min_path, "synthetic min path nodes"),
      TTE_CFG(synth_max_path, "synthetic max path nodes"),
      TTE_CFG(synth_drivers, "synthetic driver count"),
  };
  return b;
}

#undef TTE_CFG

inline void set_value(PipelineConfig& cfg, const Binding& b, const std::string& value) {
  switch (b.kind) {
    case Kind::kU64: cfg.*(b.u64) = static_cast<uint64_t>(parse_int(value, b.key)); break;
    case Kind::kInt: cfg.*(b.i) = static_cast<int>(parse_int(value, b.key)); break;
    case Kind::kDouble: cfg.*(b.d) = parse_double(value, b.key); break;
    case Kind::kString: cfg.*(b.s) = value; break;
  }
}

inline std::string get_value(const PipelineConfig& cfg, const Binding& b) {
  switch (b.kind) {
    case Kind::kU64:
      return strprintf("%llu", static_cast<unsigned long long>(cfg.*(b.u64)));
    case Kind::kInt: return strprintf("%d", cfg.*(b.i));
    case Kind::kDouble: return strprintf("%.17g", cfg.*(b.d));
    case Kind::kString: return cfg.*(b.s);
  }
  return "";
}

}  // namespace cfgdetail

inline void apply_config_text(PipelineConfig& cfg, const std::string& text,
                              const std::string& origin) {
  size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(strprintf("config %s line %zu: expected key = value", origin.c_str(), line_no));
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    bool found = false;
    for (const auto& b : cfgdetail::bindings()) {
      if (key == b.key) {
        cfgdetail::set_value(cfg, b, value);
        found = true;
        break;
      }
    }
    if (!found) fail(strprintf("config %s line %zu: unknown key '%s'", origin.c_str(), line_no,
                               key.c_str()));
  }
}

inline void load_config_file(PipelineConfig& cfg, const std::string& path) {
  apply_config_text(cfg, read_file(path), path);
}

inline std::string config_to_text(const PipelineConfig& cfg) {
  std::string out;
  for (const auto& b : cfgdetail::bindings())
    out += strprintf("%s = %s\n", b.key, cfgdetail::get_value(cfg, b).c_str());
  return out;
}

inline std::string config_digest(const PipelineConfig& cfg) {
  return strprintf("%016llx", static_cast<unsigned long long>(fnv1a64(config_to_text(cfg))));
}

inline std::vector<double> parse_edge_list_values(const std::string& csv, const char* what) {
  std::vector<double> edges;
  for (const auto& part : split(csv, ','))
    if (!trim(part).empty()) edges.push_back(parse_double(trim(part), what));
  if (edges.size() < 2) fail(strprintf("%s: need at least two edges", what));
  return edges;
}

inline WalkConfig make_walk_config(const PipelineConfig& cfg) {
  WalkConfig w;
  w.walks_per_node = cfg.walks_per_node;
  w.walk_length = cfg.walk_length;
  w.return_param = cfg.return_p;
  w.inout_param = cfg.inout_q;
  w.window = cfg.window;
  w.negatives = cfg.negatives;
  w.epochs = cfg.embed_epochs;
  w.learning_rate = cfg.embed_lr;
  w.seed = cfg.seed;
  return w;
}

inline ModelConfig make_model_config(const PipelineConfig& cfg) {
  ModelConfig m;
  m.variant = parse_variant(cfg.variant);
  m.distance_mode = parse_distance_mode(cfg.distance_mode);
  m.k = cfg.k;
  m.conv_channels = cfg.conv_channels;
  m.loc_dim = cfg.loc_dim;
  m.rnn_hidden = cfg.rnn_hidden;
  m.rnn_layers = cfg.rnn_layers;
  m.attn_dim = cfg.attn_dim;
  m.beta = cfg.beta;
  m.driver_embed_dim = cfg.driver_embed_dim;
  m.week_embed_dim = cfg.week_embed_dim;
  m.time_embed_dim = cfg.time_embed_dim;
  m.use_date = cfg.use_date != 0;
  m.date_embed_dim = cfg.date_embed_dim;
  m.node_embed_dim = cfg.embed_dim;
  m.epochs = cfg.epochs;
  m.batch_size = cfg.batch_size;
  m.learning_rate = cfg.learning_rate;
  m.seed = cfg.seed;
  return m;
}

inline SynthConfig make_synth_config(const PipelineConfig& cfg) {
  SynthConfig s;
  s.kind = parse_synth_kind(cfg.synth_kind);
  s.rows = cfg.synth_rows;
  s.cols = cfg.synth_cols;
  s.origin_lat = cfg.synth_origin_lat;
  s.origin_lon = cfg.synth_origin_lon;
  s.spacing_deg = cfg.synth_spacing_deg;
  s.n_trips = cfg.synth_trips;
  s.speed_kmh = cfg.synth_speed_kmh;
  s.speed_log_sigma = cfg.synth_speed_sigma;
  s.sample_stride = cfg.synth_stride;
  s.jitter_deg = cfg.synth_jitter_deg;
  s.min_path_nodes = cfg.synth_min_path;
  s.max_path_nodes = cfg.synth_max_path;
  s.n_drivers = cfg.synth_drivers;
  s.seed = cfg.seed;
  return s;
}

inline SplitFractions make_split_fractions(const PipelineConfig& cfg) {
  return SplitFractions{cfg.split_train, cfg.split_val, cfg.split_test};
}

// ---------------------------------------------------------------------------
// Stage manifests: one per stage, named <primary output>.manifest. Paths are
// reduced to basenames so reruns in different directories stay comparable.

inline void write_manifest(const std::string& stage, const PipelineConfig& cfg,
                           const std::vector<std::string>& inputs,
                           const std::vector<std::string>& outputs,
                           const std::vector<std::string>& info = {}) {
  if (outputs.empty()) fail("write_manifest: stage has no outputs");
  std::string out;
  out += "stage=" + stage + "\n";
  out += strprintf("seed=%llu\n", static_cast<unsigned long long>(cfg.seed));
  out += "config_digest=" + config_digest(cfg) + "\n";
  for (const auto& b : cfgdetail::bindings())
    out += strprintf("cfg=%s %s\n", b.key, cfgdetail::get_value(cfg, b).c_str());
  for (const auto& path : inputs)
    out += "input=" + std::filesystem::path(path).filename().string() + ":" +
           file_digest_hex(path) + "\n";
  for (const auto& path : outputs)
    out += "output=" + std::filesystem::path(path).filename().string() + ":" +
           file_digest_hex(path) + "\n";
  for (const auto& line : info) out += "info=" + line + "\n";
  write_file(outputs.front() + ".manifest", out);
}

// ---------------------------------------------------------------------------
// Stages. Each validates its inputs before writing anything, writes its
// artifacts, then the manifest.

inline void stage_synth(const PipelineConfig& cfg, const std::string& out_map,
                        const std::string& out_trips) {
  SynthConfig sc = make_synth_config(cfg);
  RoadNetwork net = synth_network(sc);
  std::vector<Trip> trips = synth_trips(net, sc);
  save_edge_list(net, out_map);
  write_file(out_trips, serialize_trip_records(trips));
  write_manifest("synth", cfg, {}, {out_trips, out_map},
                 {strprintf("nodes:%zu", net.node_count()),
                  strprintf("edges:%zu", net.edge_count()),
                  strprintf("trips:%zu", trips.size())});
}

inline void stage_ingest_map(const PipelineConfig& cfg, const std::string& in_path,
                             const std::string& out_path) {
  std::string lower = in_path;
  std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
  RoadNetwork net = [&] {
    if (lower.size() >= 4 &&
        (lower.substr(lower.size() - 4) == ".osm" || lower.substr(lower.size() - 4) == ".xml")) {
      std::ifstream in(in_path);
      if (!in) fail("ingest-map: cannot open " + in_path);
      std::optional<std::pair<GeoPoint, GeoPoint>> bbox;
      if (cfg.region == "bbox")
        bbox = std::make_pair(GeoPoint{cfg.bbox_min_lat, cfg.bbox_min_lon},
                              GeoPoint{cfg.bbox_max_lat, cfg.bbox_max_lon});
      return parse_osm_xml(in, bbox);
    }
    return load_edge_list(in_path);
  }();
  save_edge_list(net, out_path);
  write_manifest("ingest-map", cfg, {in_path}, {out_path},
                 {strprintf("nodes:%zu", net.node_count()),
                  strprintf("edges:%zu", net.edge_count())});
}

inline void stage_prepare_trips(const PipelineConfig& cfg, const std::string& in_path,
                                const std::string& format, const std::string& out_path) {
  std::ifstream in(in_path);
  if (!in) fail("prepare-trips: cannot open " + in_path);
  std::vector<Trip> trips;
  ParseStats stats;
  if (format == "porto") {
    std::tie(trips, stats) = parse_porto_csv(in);
  } else if (format == "records") {
    std::tie(trips, stats) = parse_trip_records(in);
  } else {
    fail("prepare-trips: format must be porto or records, got " + format);
  }

  std::vector<std::string> info;
  if (format == "porto") info.push_back("timestamps:utc");
  info.push_back(strprintf("rows_in:%zu", stats.rows_in));
  info.push_back(strprintf("parsed:%zu", stats.trips_out));
  for (const auto& [reason, count] : stats.rejects)
    info.push_back(strprintf("reject_%s:%zu", reason.c_str(), count));

  if (cfg.region == "auto") {
    RegionSelection sel = select_dense_region(trips, cfg.region_width_deg, cfg.region_stride_deg);
    auto filtered = filter_trips_bbox(std::move(trips), sel.min_corner, sel.max_corner);
    trips = std::move(filtered.kept);
    info.push_back(strprintf("region:lon(%.6f,%.6f)lat(%.6f,%.6f)", sel.min_corner.lon,
                             sel.max_corner.lon, sel.min_corner.lat, sel.max_corner.lat));
    info.push_back(strprintf("region_dropped:%zu", filtered.dropped));
  } else if (cfg.region == "bbox") {
    auto filtered = filter_trips_bbox(std::move(trips), GeoPoint{cfg.bbox_min_lat, cfg.bbox_min_lon},
                                      GeoPoint{cfg.bbox_max_lat, cfg.bbox_max_lon});
    trips = std::move(filtered.kept);
    info.push_back(strprintf("region_dropped:%zu", filtered.dropped));
  } else if (cfg.region != "none") {
    fail("prepare-trips: region must be none, auto or bbox");
  }
  info.push_back(strprintf("trips_out:%zu", trips.size()));

  write_file(out_path, serialize_trip_records(trips));
  write_manifest("prepare-trips", cfg, {in_path}, {out_path}, info);
}

inline void stage_match(const PipelineConfig& cfg, const std::string& trips_path,
                        const std::string& map_path, const std::string& out_path,
                        const std::string& hist_path) {
  RoadNetwork net = load_edge_list(map_path);
  std::ifstream in(trips_path);
  if (!in) fail("match: cannot open " + trips_path);
  auto [trips, stats] = parse_trip_records(in);
  if (trips.empty()) fail("match: no trips in " + trips_path);
  GridIndex idx = build_index(net, cfg.cell_deg);

  std::vector<MappedTrip> mapped;
  mapped.reserve(trips.size());
  size_t fallback_total = 0;
  size_t invalid = 0;
  for (auto& t : trips) {
    MappedTrip m = attribute_trip(idx, net, std::move(t));
    attach_distances(m, net);
    fallback_total += static_cast<size_t>(m.fallback_hops);
    if (!validate_mapped_trip(m).ok()) {
      ++invalid;
      continue;
    }
    mapped.push_back(std::move(m));
  }
  save_mapped_trips(mapped, out_path, config_digest(cfg));
  AttributionHistogram hist = attribution_histogram(mapped, cfg.hist_bucket_km);
  write_file(hist_path, histogram_to_csv(hist));
  write_manifest("match", cfg, {trips_path, map_path}, {out_path, hist_path},
                 {strprintf("mapped:%zu", mapped.size()),
                  strprintf("invalid_dropped:%zu", invalid),
                  strprintf("fallback_hops:%zu", fallback_total),
                  strprintf("attributed_points:%zu", hist.total)});
}

inline void stage_embed(const PipelineConfig& cfg, const std::string& map_path,
                        const std::string& out_path) {
  RoadNetwork net = load_edge_list(map_path);
  WalkConfig wc = make_walk_config(cfg);
  auto walks = generate_walks(net, wc);
  SkipgramResult res = train_skipgram(net, walks, wc, cfg.embed_dim);
  save_embeddings(res.table, out_path);
  std::vector<std::string> info{strprintf("vocab:%zu", res.table.vectors.size())};
  for (size_t e = 0; e < res.epoch_loss.size(); ++e)
    info.push_back(strprintf("epoch%zu_loss:%.6f", e, res.epoch_loss[e]));
  write_manifest("embed", cfg, {map_path}, {out_path}, info);
}

struct SplitView {
  std::vector<MappedTrip> train;
  std::vector<MappedTrip> val;
  std::vector<MappedTrip> test;
  std::vector<long long> test_ids;  // indices into the mapped artifact
};

inline SplitView split_mapped_trips(const std::vector<MappedTrip>& all, const PipelineConfig& cfg) {
  SplitIndices idx = split_dataset(all.size(), make_split_fractions(cfg), cfg.seed);
  SplitView v;
  for (size_t i : idx.train) v.train.push_back(all[i]);
  for (size_t i : idx.val) v.val.push_back(all[i]);
  for (size_t i : idx.test) {
    v.test.push_back(all[i]);
    v.test_ids.push_back(static_cast<long long>(i));
  }
  return v;
}

inline void stage_train(const PipelineConfig& cfg, const std::string& trips_path,
                        const std::string& embeddings_path, const std::string& out_ckpt) {
  std::vector<MappedTrip> all = load_mapped_trips(trips_path);
  if (all.empty()) fail("train: no trips in " + trips_path);
  ModelConfig mc = make_model_config(cfg);

  std::optional<EmbeddingTable> table;
  std::vector<std::string> inputs{trips_path};
  if (mc.needs_embeddings()) {
    if (embeddings_path.empty())
      fail(strprintf("train: variant %s requires --embeddings <node embedding table>",
                     variant_name(mc.variant)));
    table = load_embeddings(embeddings_path);
    inputs.push_back(embeddings_path);
  }

  SplitView split = split_mapped_trips(all, cfg);
  TrainResult res = train_model(split.train, split.val, table ? &*table : nullptr, mc);
  save_model(*res.model, out_ckpt);

  std::string log_csv = "epoch,train_loss,val_mape\n";
  for (const auto& e : res.log)
    log_csv += strprintf("%d,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_mape);
  write_file(out_ckpt + ".log.csv", log_csv);

  write_manifest("train", cfg, inputs, {out_ckpt, out_ckpt + ".log.csv"},
                 {strprintf("train:%zu val:%zu test:%zu", split.train.size(), split.val.size(),
                            split.test.size()),
                  strprintf("skipped_short:%zu", res.skipped_short_trips),
                  strprintf("best_val_mape:%.6f", res.best_val_mape),
                  strprintf("missing_embeddings:%lld",
                            res.model->missing_embeddings())});
}

inline std::vector<EvalRecord> evaluate_model(TteModel& model, const std::vector<MappedTrip>& trips,
                                              const std::vector<long long>& ids,
                                              const EmbeddingTable* table, size_t* skipped) {
  std::vector<EvalRecord> records;
  for (size_t i = 0; i < trips.size(); ++i) {
    const MappedTrip& m = trips[i];
    if (!model.supports(m) || !(m.trip.total_time > 0.0)) {
      if (skipped) ++*skipped;
      continue;
    }
    EvalRecord r;
    r.trip_id = ids[i];
    r.true_s = m.trip.total_time;
    r.pred_s = model.predict(m, table);
    r.coord_km = m.trip.total_dist;
    r.map_km = m.total_dist_map_km;
    r.variant = variant_name(model.config().variant);
    r.distance_mode = distance_mode_name(model.config().distance_mode);
    records.push_back(std::move(r));
  }
  return records;
}

inline void stage_evaluate(const PipelineConfig& cfg, const std::string& ckpt_path,
                           const std::string& trips_path, const std::string& embeddings_path,
                           const std::string& out_prefix) {
  TteModel model = load_model(ckpt_path);
  std::vector<MappedTrip> all = load_mapped_trips(trips_path);
  std::optional<EmbeddingTable> table;
  std::vector<std::string> inputs{ckpt_path, trips_path};
  if (model.config().needs_embeddings()) {
    if (embeddings_path.empty())
      fail(strprintf("evaluate: variant %s requires --embeddings <node embedding table>",
                     variant_name(model.config().variant)));
    table = load_embeddings(embeddings_path);
    inputs.push_back(embeddings_path);
  }

  std::vector<MappedTrip> subset;
  std::vector<long long> ids;
  if (cfg.eval_split == "none") {
    subset = all;
    for (size_t i = 0; i < all.size(); ++i) ids.push_back(static_cast<long long>(i));
  } else {
    SplitIndices idx = split_dataset(all.size(), make_split_fractions(cfg), cfg.seed);
    const std::vector<size_t>* pick = nullptr;
    if (cfg.eval_split == "test") pick = &idx.test;
    else if (cfg.eval_split == "val") pick = &idx.val;
    else if (cfg.eval_split == "train") pick = &idx.train;
    else fail("evaluate: eval_split must be test, val, train or none");
    for (size_t i : *pick) {
      subset.push_back(all[i]);
      ids.push_back(static_cast<long long>(i));
    }
  }

  size_t skipped = 0;
  std::vector<EvalRecord> records = evaluate_model(model, subset, ids, table ? &*table : nullptr,
                                                   &skipped);
  if (records.empty()) fail("evaluate: no evaluable trips in the selected split");

  std::string note = strprintf("variant=%s distance_mode=%s split=%s",
                               variant_name(model.config().variant),
                               distance_mode_name(model.config().distance_mode),
                               cfg.eval_split.c_str());
  write_file(out_prefix + "records.csv", eval_records_to_csv(records, note));

  std::vector<double> dist_edges = parse_edge_list_values(cfg.dist_edges, "dist_edges");
  std::vector<double> diff_edges = parse_edge_list_values(cfg.diff_edges, "diff_edges");
  std::vector<BucketReport> reports{
      bucket_by(records, BucketKey::kCoordinate, dist_edges),
      bucket_by(records, BucketKey::kMap, dist_edges),
      bucket_by(records, BucketKey::kDifference, diff_edges),
  };
  write_file(out_prefix + "buckets.csv", bucket_report_to_csv(reports));
  write_file(out_prefix + "summary.csv", comparison_to_csv(compare_variants({records})));

  write_manifest("evaluate", cfg, inputs,
                 {out_prefix + "records.csv", out_prefix + "buckets.csv",
                  out_prefix + "summary.csv"},
                 {strprintf("records:%zu", records.size()), strprintf("skipped:%zu", skipped),
                  strprintf("mape:%.6f", mape(records))});
}

inline void stage_report(const PipelineConfig& cfg, const std::vector<std::string>& records_paths,
                         const std::string& out_prefix) {
  if (records_paths.empty()) fail("report: need at least one records csv");
  std::vector<std::vector<EvalRecord>> sets;
  for (const auto& path : records_paths)
    sets.push_back(eval_records_from_csv(read_file(path), path));

  auto cells = compare_variants(sets);
  write_file(out_prefix + "table.csv", comparison_to_csv(cells));

  std::vector<double> dist_edges = parse_edge_list_values(cfg.dist_edges, "dist_edges");
  std::vector<double> diff_edges = parse_edge_list_values(cfg.diff_edges, "diff_edges");
  std::map<std::string, std::vector<EvalRecord>> groups;
  for (const auto& set : sets)
    for (const auto& r : set) groups[r.variant + ":" + r.distance_mode].push_back(r);
  std::vector<BucketReport> reports;
  for (const auto& [label, recs] : groups) {
    for (auto key : {BucketKey::kCoordinate, BucketKey::kMap, BucketKey::kDifference}) {
      BucketReport rep = bucket_by(recs, key, key == BucketKey::kDifference ? diff_edges : dist_edges);
      rep.variant = label;
      reports.push_back(std::move(rep));
    }
  }
  write_file(out_prefix + "buckets.csv", bucket_report_to_csv(reports));

  write_manifest("report", cfg, records_paths, {out_prefix + "table.csv", out_prefix + "buckets.csv"},
                 {strprintf("variants:%zu", cells.size())});
}

}  // namespace tte
