#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tte/pipeline.hpp"

namespace {

constexpr const char* kFormatVersions =
    "tte artifact formats:\n"
    "  edge list        tte.edgelist.v1\n"
    "  mapped trips     tte.mapped_trips.v1\n"
    "  embeddings       text 'count dim' v1\n"
    "  parameter pack   TTET v1\n"
    "  model checkpoint TTEM v1\n"
    "  csv schemas      records/buckets/table v1\n";

// Registers every pipeline key as a --key flag so that any config-file value
// can be overridden on the command line.
void add_config_flags(CLI::App* cmd, tte::PipelineConfig& cfg) {
  for (const auto& b : tte::cfgdetail::bindings()) {
    std::string name = "--" + std::string(b.key);
    switch (b.kind) {
      case tte::cfgdetail::Kind::kU64:
        cmd->add_option(name, cfg.*(b.u64), b.help);
        break;
      case tte::cfgdetail::Kind::kInt:
        cmd->add_option(name, cfg.*(b.i), b.help);
        break;
      case tte::cfgdetail::Kind::kDouble:
        cmd->add_option(name, cfg.*(b.d), b.help);
        break;
      case tte::cfgdetail::Kind::kString:
        cmd->add_option(name, cfg.*(b.s), b.help);
        break;
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"travel-time prediction pipeline"};
  app.require_subcommand(0, 1);

  tte::PipelineConfig cfg;
  std::string config_path;
  bool show_version = false;
  app.add_option("--config", config_path, "key = value configuration file")
      ->each([&cfg](const std::string& path) { tte::load_config_file(cfg, path); });
  app.add_option("--seed", cfg.seed, "global random seed");
  app.add_flag("--version", show_version, "print artifact format versions");

  std::string in_path, out_path, map_path, trips_path, embeddings_path, ckpt_path, format;
  std::string hist_path, out_prefix, out_map, out_trips;
  std::vector<std::string> records_paths;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic world (map + trips)");
  synth->add_option("--out-map", out_map, "edge-list output path")->required();
  synth->add_option("--out-trips", out_trips, "trip records output path")->required();
  add_config_flags(synth, cfg);

  CLI::App* ingest = app.add_subcommand("ingest-map", "build a road network artifact");
  ingest->add_option("--in", in_path, "OSM XML (.osm/.xml) or edge-list input")->required();
  ingest->add_option("--out", out_path, "edge-list output path")->required();
  add_config_flags(ingest, cfg);

  CLI::App* prepare = app.add_subcommand("prepare-trips", "parse and filter raw trips");
  prepare->add_option("--in", in_path, "raw input path")->required();
  prepare->add_option("--format", format, "porto or records")->required();
  prepare->add_option("--out", out_path, "trip records output path")->required();
  add_config_flags(prepare, cfg);

  CLI::App* match = app.add_subcommand("match", "attribute trips to road nodes");
  match->add_option("--trips", trips_path, "prepared trip records")->required();
  match->add_option("--map", map_path, "edge-list road network")->required();
  match->add_option("--out", out_path, "mapped trips output path")->required();
  match->add_option("--histogram", hist_path, "attribution-error histogram csv")->required();
  add_config_flags(match, cfg);

  CLI::App* embed = app.add_subcommand("embed", "learn node embeddings over the road graph");
  embed->add_option("--map", map_path, "edge-list road network")->required();
  embed->add_option("--out", out_path, "embedding table output path")->required();
  add_config_flags(embed, cfg);

  CLI::App* train = app.add_subcommand("train", "train a travel-time model");
  train->add_option("--trips", trips_path, "mapped trips artifact")->required();
  train->add_option("--embeddings", embeddings_path, "node embedding table (E-GC/EL-GC)");
  train->add_option("--out", out_path, "model checkpoint output path")->required();
  add_config_flags(train, cfg);

  CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on a trip split");
  evaluate->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  evaluate->add_option("--trips", trips_path, "mapped trips artifact")->required();
  evaluate->add_option("--embeddings", embeddings_path, "node embedding table (E-GC/EL-GC)");
  evaluate->add_option("--out-prefix", out_prefix, "output prefix for csv artifacts")->required();
  add_config_flags(evaluate, cfg);

  CLI::App* report = app.add_subcommand("report", "combine evaluation records into a comparison");
  report->add_option("--records", records_paths, "evaluation records csv paths")->required();
  report->add_option("--out-prefix", out_prefix, "output prefix for csv artifacts")->required();
  add_config_flags(report, cfg);

  CLI11_PARSE(app, argc, argv);

  if (show_version) {
    std::fputs(kFormatVersions, stdout);
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::fputs(app.help().c_str(), stdout);
    return 2;
  }

  try {
    if (synth->parsed()) {
      tte::stage_synth(cfg, out_map, out_trips);
    } else if (ingest->parsed()) {
      tte::stage_ingest_map(cfg, in_path, out_path);
    } else if (prepare->parsed()) {
      tte::stage_prepare_trips(cfg, in_path, format, out_path);
    } else if (match->parsed()) {
      tte::stage_match(cfg, trips_path, map_path, out_path, hist_path);
    } else if (embed->parsed()) {
      tte::stage_embed(cfg, map_path, out_path);
    } else if (train->parsed()) {
      tte::stage_train(cfg, trips_path, embeddings_path, out_path);
    } else if (evaluate->parsed()) {
      tte::stage_evaluate(cfg, ckpt_path, trips_path, embeddings_path, out_prefix);
    } else if (report->parsed()) {
      tte::stage_report(cfg, records_paths, out_prefix);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
