#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "tte/pipeline.hpp"

using namespace tte;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("tte_test_" + std::to_string(Catch::rngSeed()) + "_" +
            std::to_string(reinterpret_cast<uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

PipelineConfig small_world_config() {
  PipelineConfig cfg;
  cfg.seed = 5;
  cfg.synth_trips = 30;
  cfg.synth_rows = 8;
  cfg.synth_cols = 8;
  cfg.synth_min_path = 8;
  cfg.synth_max_path = 40;
  cfg.rnn_hidden = 12;
  cfg.conv_channels = 6;
  cfg.attn_dim = 6;
  cfg.loc_dim = 8;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.embed_dim = 12;
  cfg.walks_per_node = 3;
  cfg.walk_length = 12;
  cfg.embed_epochs = 2;
  cfg.split_train = 0.6;
  cfg.split_val = 0.2;
  cfg.split_test = 0.2;
  return cfg;
}

}  // namespace

TEST_CASE("config text round-trips and rejects unknown keys", "[pipeline]") {
  PipelineConfig cfg;
  cfg.seed = 42;
  cfg.beta = 0.45;
  cfg.variant = "EL-GC";
  std::string text = config_to_text(cfg);
  PipelineConfig back;
  apply_config_text(back, text, "mem");
  CHECK(config_to_text(back) == text);
  CHECK(back.seed == 42);
  CHECK(back.beta == 0.45);
  CHECK(back.variant == "EL-GC");
  CHECK_THROWS_WITH(apply_config_text(back, "no_such_key = 1\n", "mem"),
                    Catch::Matchers::ContainsSubstring("unknown key"));
  CHECK_THROWS_WITH(apply_config_text(back, "seed 5\n", "mem"),
                    Catch::Matchers::ContainsSubstring("key = value"));
}

TEST_CASE("config digest tracks content", "[pipeline]") {
  PipelineConfig a, b;
  CHECK(config_digest(a) == config_digest(b));
  b.seed = 99;
  CHECK(config_digest(a) != config_digest(b));
}

TEST_CASE("synth stage emits a valid self-consistent corpus", "[pipeline]") {
  TempDir dir;
  PipelineConfig cfg = small_world_config();
  stage_synth(cfg, dir.file("map.el"), dir.file("trips.jsonl"));
  RoadNetwork net = load_edge_list(dir.file("map.el"));
  CHECK(net.node_count() == 64);
  std::ifstream in(dir.file("trips.jsonl"));
  auto [trips, stats] = parse_trip_records(in);
  CHECK(trips.size() == 30);
  CHECK(stats.total_rejects() == 0);
  for (const auto& t : trips) CHECK(validate_trip(t).ok());
  CHECK(fs::exists(dir.file("trips.jsonl.manifest")));
}

TEST_CASE("match stage attributes every trip and writes the histogram", "[pipeline]") {
  TempDir dir;
  PipelineConfig cfg = small_world_config();
  stage_synth(cfg, dir.file("map.el"), dir.file("trips.jsonl"));
  stage_match(cfg, dir.file("trips.jsonl"), dir.file("map.el"), dir.file("mapped.jsonl"),
              dir.file("hist.csv"));
  auto mapped = load_mapped_trips(dir.file("mapped.jsonl"));
  CHECK(mapped.size() == 30);
  for (const auto& m : mapped) {
    auto check = validate_mapped_trip(m);
    CHECK(check.ok());
    CHECK(check.warnings.empty());
    CHECK(m.fallback_hops == 0);
    for (double e : m.attribution_errors_km) CHECK(e == 0.0);  // jitter-free world
  }
  std::string hist = read_file(dir.file("hist.csv"));
  CHECK(hist.rfind("bucket_lo_km,bucket_hi_km,count\n", 0) == 0);
}

TEST_CASE("train stage then evaluate stage produce coherent artifacts", "[pipeline]") {
  TempDir dir;
  PipelineConfig cfg = small_world_config();
  stage_synth(cfg, dir.file("map.el"), dir.file("trips.jsonl"));
  stage_match(cfg, dir.file("trips.jsonl"), dir.file("map.el"), dir.file("mapped.jsonl"),
              dir.file("hist.csv"));
  stage_train(cfg, dir.file("mapped.jsonl"), "", dir.file("model.ckpt"));
  TteModel model = load_model(dir.file("model.ckpt"));
  CHECK(model.config().variant == Variant::kLGc);
  stage_evaluate(cfg, dir.file("model.ckpt"), dir.file("mapped.jsonl"), "", dir.file("eval_"));
  auto records = eval_records_from_csv(read_file(dir.file("eval_records.csv")), "eval");
  CHECK(records.size() == 6);  // 20% test of 30
  for (const auto& r : records) {
    CHECK(r.pred_s > 0.0);
    CHECK(r.variant == "L-GC");
  }
  std::string summary = read_file(dir.file("eval_summary.csv"));
  CHECK(summary.find("L-GC,coordinate,") != std::string::npos);
}

TEST_CASE("training an embedding variant without embeddings names the artifact", "[pipeline]") {
  TempDir dir;
  PipelineConfig cfg = small_world_config();
  cfg.variant = "E-GC";
  stage_synth(cfg, dir.file("map.el"), dir.file("trips.jsonl"));
  stage_match(cfg, dir.file("trips.jsonl"), dir.file("map.el"), dir.file("mapped.jsonl"),
              dir.file("hist.csv"));
  CHECK_THROWS_WITH(stage_train(cfg, dir.file("mapped.jsonl"), "", dir.file("model.ckpt")),
                    Catch::Matchers::ContainsSubstring("--embeddings"));
  CHECK_FALSE(fs::exists(dir.file("model.ckpt")));  // no partial write
}

TEST_CASE("embed stage artifact loads back with the configured dimension", "[pipeline]") {
  TempDir dir;
  PipelineConfig cfg = small_world_config();
  stage_synth(cfg, dir.file("map.el"), dir.file("trips.jsonl"));
  stage_embed(cfg, dir.file("map.el"), dir.file("emb.txt"));
  EmbeddingTable table = load_embeddings(dir.file("emb.txt"));
  CHECK(table.dim == 12);
  CHECK(table.vectors.size() == 64);
}

TEST_CASE("stage reruns are byte-identical", "[pipeline]") {
  TempDir a, b;
  PipelineConfig cfg = small_world_config();
  for (const TempDir* dir : {&a, &b}) {
    stage_synth(cfg, dir->file("map.el"), dir->file("trips.jsonl"));
    stage_match(cfg, dir->file("trips.jsonl"), dir->file("map.el"), dir->file("mapped.jsonl"),
                dir->file("hist.csv"));
    stage_embed(cfg, dir->file("map.el"), dir->file("emb.txt"));
  }
  for (const char* name : {"map.el", "trips.jsonl", "mapped.jsonl", "hist.csv", "emb.txt",
                           "trips.jsonl.manifest", "mapped.jsonl.manifest", "emb.txt.manifest"}) {
    INFO(name);
    CHECK(read_file(a.file(name)) == read_file(b.file(name)));
  }
}

TEST_CASE("report stage combines multiple variants", "[pipeline]") {
  TempDir dir;
  PipelineConfig cfg = small_world_config();
  stage_synth(cfg, dir.file("map.el"), dir.file("trips.jsonl"));
  stage_match(cfg, dir.file("trips.jsonl"), dir.file("map.el"), dir.file("mapped.jsonl"),
              dir.file("hist.csv"));
  stage_embed(cfg, dir.file("map.el"), dir.file("emb.txt"));
  stage_train(cfg, dir.file("mapped.jsonl"), "", dir.file("lgc.ckpt"));
  stage_evaluate(cfg, dir.file("lgc.ckpt"), dir.file("mapped.jsonl"), "", dir.file("lgc_"));
  PipelineConfig ecfg = cfg;
  ecfg.variant = "EL-GC";
  ecfg.distance_mode = "map";
  stage_train(ecfg, dir.file("mapped.jsonl"), dir.file("emb.txt"), dir.file("elgc.ckpt"));
  stage_evaluate(ecfg, dir.file("elgc.ckpt"), dir.file("mapped.jsonl"), dir.file("emb.txt"),
                 dir.file("elgc_"));
  stage_report(cfg, {dir.file("lgc_records.csv"), dir.file("elgc_records.csv")},
               dir.file("rep_"));
  std::string table = read_file(dir.file("rep_table.csv"));
  CHECK(table.find("L-GC,coordinate,") != std::string::npos);
  CHECK(table.find("EL-GC,map,") != std::string::npos);
  // canonical order puts L-GC before EL-GC
  CHECK(table.find("L-GC,coordinate,") < table.find("EL-GC,map,"));
  std::string buckets = read_file(dir.file("rep_buckets.csv"));
  CHECK(buckets.find("difference,") != std::string::npos);
}

TEST_CASE("ingest-map stage handles osm xml and edge-list inputs", "[pipeline]") {
  TempDir dir;
  PipelineConfig cfg;
  const char* xml = R"(<osm>
  <node id="1" lat="41.10" lon="-8.60"/>
  <node id="2" lat="41.11" lon="-8.60"/>
  <node id="3" lat="41.12" lon="-8.61"/>
  <way id="9"><nd ref="1"/><nd ref="2"/><nd ref="3"/><tag k="highway" v="residential"/></way>
</osm>)";
  write_file(dir.file("input.osm"), xml);
  stage_ingest_map(cfg, dir.file("input.osm"), dir.file("net.el"));
  RoadNetwork net = load_edge_list(dir.file("net.el"));
  CHECK(net.node_count() == 3);
  CHECK(net.edge_count() == 4);
  // an edge-list input round-trips through the stage unchanged
  stage_ingest_map(cfg, dir.file("net.el"), dir.file("net2.el"));
  CHECK(read_file(dir.file("net.el")) == read_file(dir.file("net2.el")));
}

TEST_CASE("manifest lists inputs with digests", "[pipeline]") {
  TempDir dir;
  PipelineConfig cfg = small_world_config();
  stage_synth(cfg, dir.file("map.el"), dir.file("trips.jsonl"));
  stage_match(cfg, dir.file("trips.jsonl"), dir.file("map.el"), dir.file("mapped.jsonl"),
              dir.file("hist.csv"));
  std::string manifest = read_file(dir.file("mapped.jsonl.manifest"));
  CHECK(manifest.find("stage=match") != std::string::npos);
  CHECK(manifest.find("input=trips.jsonl:") != std::string::npos);
  CHECK(manifest.find("input=map.el:") != std::string::npos);
  CHECK(manifest.find("output=mapped.jsonl:") != std::string::npos);
  CHECK(manifest.find("config_digest=" + config_digest(cfg)) != std::string::npos);
}

TEST_CASE("barrier world separates map from coordinate distance", "[pipeline]") {
  PipelineConfig cfg = small_world_config();
  cfg.synth_kind = "barrier";
  cfg.synth_rows = 6;
  cfg.synth_cols = 20;
  cfg.synth_stride = 10;
  cfg.synth_min_path = 30;
  cfg.synth_max_path = 120;
  cfg.synth_trips = 20;
  SynthConfig sc = make_synth_config(cfg);
  RoadNetwork net = synth_network(sc);
  auto trips = synth_trips(net, sc);
  GridIndex idx = build_index(net, cfg.cell_deg);
  double ratio_acc = 0.0;
  for (auto& t : trips) {
    MappedTrip m = attribute_trip(idx, net, t);
    attach_distances(m, net);
    REQUIRE(m.trip.total_dist > 0.0);
    ratio_acc += m.total_dist_map_km / m.trip.total_dist;
    CHECK(m.total_dist_map_km >= m.trip.total_dist - 1e-6);
  }
  CHECK(ratio_acc / static_cast<double>(trips.size()) > 2.0);
}
