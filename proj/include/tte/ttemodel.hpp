#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tte/common.hpp"
#include "tte/embeddings.hpp"
#include "tte/tensorcore.hpp"
#include "tte/trips.hpp"

namespace tte {

enum class Variant { kLGc, kEGc, kElGc };
enum class DistanceMode { kCoordinate, kMap, kBoth };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kLGc: return "L-GC";
    case Variant::kEGc: return "E-GC";
    case Variant::kElGc: return "EL-GC";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "L-GC" || s == "l-gc" || s == "lgc") return Variant::kLGc;
  if (s == "E-GC" || s == "e-gc" || s == "egc") return Variant::kEGc;
  if (s == "EL-GC" || s == "el-gc" || s == "elgc") return Variant::kElGc;
  fail("unknown variant: " + s + " (expected L-GC, E-GC or EL-GC)");
}

inline const char* distance_mode_name(DistanceMode m) {
  switch (m) {
    case DistanceMode::kCoordinate: return "coordinate";
    case DistanceMode::kMap: return "map";
    case DistanceMode::kBoth: return "both";
  }
  return "?";
}

inline DistanceMode parse_distance_mode(const std::string& s) {
  if (s == "coordinate") return DistanceMode::kCoordinate;
  if (s == "map") return DistanceMode::kMap;
  if (s == "both") return DistanceMode::kBoth;
  fail("unknown distance mode: " + s + " (expected coordinate, map or both)");
}

struct ModelConfig {
  Variant variant = Variant::kLGc;
  DistanceMode distance_mode = DistanceMode::kCoordinate;
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
  bool use_date = false;  // dateID is parsed and stored but fed only on request
  int date_embed_dim = 3;
  long long driver_vocab = 0;  // 0: derived from the training data
  int node_embed_dim = 128;
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 1e-3;
  uint64_t seed = 1;
  double local_epsilon_s = 10.0;  // short local paths have near-zero times

  void validate() const {
    if (k < 2) fail("model config: k must be >= 2");
    if (!(beta >= 0.0 && beta <= 1.0)) fail("model config: beta must be in [0,1]");
    if (conv_channels < 1 || loc_dim < 1 || rnn_hidden < 1 || attn_dim < 1)
      fail("model config: dims must be positive");
    if (rnn_layers < 1) fail("model config: rnn_layers must be >= 1");
    if (epochs < 1 || batch_size < 1) fail("model config: epochs and batch size must be positive");
    if (!(learning_rate > 0.0)) fail("model config: learning rate must be > 0");
  }

  int dist_slots() const { return distance_mode == DistanceMode::kBoth ? 2 : 1; }

  int input_dim() const {
    switch (variant) {
      case Variant::kLGc: return 2;
      case Variant::kEGc: return node_embed_dim;
      case Variant::kElGc: return node_embed_dim + 2;
    }
    return 2;
  }

  int attr_dim() const {
    return driver_embed_dim + week_embed_dim + time_embed_dim +
           (use_date ? date_embed_dim : 0) + dist_slots();
  }

  bool needs_embeddings() const { return variant != Variant::kLGc; }
};

// z-score statistics gathered from the training split only.
struct NormStats {
  double log_time_mean = 0.0, log_time_std = 1.0;     // log(total_time)
  double log_local_mean = 0.0, log_local_std = 1.0;   // log(window time)
  double gap_coord_mean = 0.0, gap_coord_std = 1.0;   // window coordinate gaps, km
  double gap_map_mean = 0.0, gap_map_std = 1.0;       // window map gaps, km
  double total_coord_mean = 0.0, total_coord_std = 1.0;
  double total_map_mean = 0.0, total_map_std = 1.0;
  double lat_mean = 0.0, lat_std = 1.0;
  double lon_mean = 0.0, lon_std = 1.0;
};

namespace detail {

inline double safe_std(double sq_sum, double mean, size_t n) {
  double var = sq_sum / static_cast<double>(n) - mean * mean;
  return std::max(std::sqrt(std::max(var, 0.0)), 1e-3);
}

inline double clamp_feature(double z) { return std::clamp(z, -15.0, 15.0); }

inline double log_time(double seconds) { return std::log(std::max(seconds, 0.1)); }

}  // namespace detail

inline NormStats compute_norm_stats(const std::vector<MappedTrip>& train, int k) {
  if (train.empty()) fail("compute_norm_stats: empty training set");
  struct Acc {
    double s = 0.0, sq = 0.0;
    size_t n = 0;
    void add(double v) {
      s += v;
      sq += v * v;
      ++n;
    }
    double mean() const { return n ? s / static_cast<double>(n) : 0.0; }
    double stdev() const { return n ? detail::safe_std(sq, mean(), n) : 1.0; }
  };
  Acc lt, ll, gc, gm, tc, tm, lat, lon;
  for (const auto& m : train) {
    lt.add(detail::log_time(m.trip.total_time));
    tc.add(m.trip.total_dist);
    tm.add(m.total_dist_map_km);
    for (const auto& p : m.node_locations) {
      lat.add(p.lat);
      lon.add(p.lon);
    }
    int n = static_cast<int>(m.trip.points.size());
    for (int i = 0; i + k - 1 < n; ++i) {
      ll.add(detail::log_time(m.trip.time_gap[static_cast<size_t>(i + k - 1)] -
                              m.trip.time_gap[static_cast<size_t>(i)]));
      gc.add(m.trip.dist_gap[static_cast<size_t>(i + k - 1)] - m.trip.dist_gap[static_cast<size_t>(i)]);
      gm.add(m.dist_gap_map_km[static_cast<size_t>(i + k - 1)] -
             m.dist_gap_map_km[static_cast<size_t>(i)]);
    }
  }
  NormStats st;
  st.log_time_mean = lt.mean();
  st.log_time_std = lt.stdev();
  st.log_local_mean = ll.mean();
  st.log_local_std = ll.stdev();
  st.gap_coord_mean = gc.mean();
  st.gap_coord_std = gc.stdev();
  st.gap_map_mean = gm.mean();
  st.gap_map_std = gm.stdev();
  st.total_coord_mean = tc.mean();
  st.total_coord_std = tc.stdev();
  st.total_map_mean = tm.mean();
  st.total_map_std = tm.stdev();
  st.lat_mean = lat.mean();
  st.lat_std = lat.stdev();
  st.lon_mean = lon.mean();
  st.lon_std = lon.stdev();
  return st;
}

constexpr int kWeekVocab = 7;
constexpr int kDateVocab = 32;
constexpr double kLogClampLo = -20.0;
constexpr double kLogClampHi = 20.0;

// Loss blend: beta * local + (1 - beta) * global. Shared by the plain and
// graph paths so that both produce identical arithmetic.
inline double blend_losses(double l_local, double l_global, double beta) {
  return beta * l_local + (1.0 - beta) * l_global;
}

class TteModel {
public:
  TteModel(ModelConfig cfg, NormStats stats) : cfg_(cfg), stats_(stats) {
    cfg_.validate();
    if (cfg_.driver_vocab < 1) fail("TteModel: driver_vocab must be set before construction");
    init_params();
  }

  // Checkpoint restore path: parameters arrive pre-trained.
  TteModel(ModelConfig cfg, NormStats stats, ad::ParamStore params)
      : cfg_(cfg), stats_(stats), params_(std::move(params)) {
    cfg_.validate();
  }

  const ModelConfig& config() const { return cfg_; }
  const NormStats& stats() const { return stats_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }
  long long missing_embeddings() const { return missing_embeddings_; }

  struct Forward {
    ad::Var r_seconds;       // (m) local predictions
    ad::Var global_seconds;  // (1)
    int m = 0;
  };

  // Per-point location features after the tanh-affine map, n x loc_dim
  // row-major. The first stage of the spatio-temporal component.
  std::vector<double> loc_transform(const MappedTrip& trip, const EmbeddingTable* table) {
    int n = static_cast<int>(trip.trip.points.size());
    ad::Graph g;
    ad::Var x = g.leaf({n, cfg_.input_dim()}, input_rows(trip, table), "loc_input");
    ad::Var loc =
        ad::tanh_(ad::linear_rows(x, g.param(params_.at("loc.w")), g.param(params_.at("loc.b"))));
    return loc.value();
  }

  bool supports(const MappedTrip& trip) const {
    return static_cast<int>(trip.trip.points.size()) >= cfg_.k;
  }

  Forward forward(ad::Graph& g, const MappedTrip& trip, const EmbeddingTable* table) {
    int n = static_cast<int>(trip.trip.points.size());
    if (n < cfg_.k)
      fail(strprintf("unsupported trip: %d points but k=%d", n, cfg_.k));
    if (cfg_.needs_embeddings() && table == nullptr)
      fail("model forward: this variant requires a node embedding table");

    ad::Var x = g.leaf({n, cfg_.input_dim()}, input_rows(trip, table), "loc_input");
    ad::Var loc = ad::tanh_(ad::linear_rows(x, g.param(params_.at("loc.w")), g.param(params_.at("loc.b"))));
    ad::Var conv = ad::elu(
        ad::conv1d(loc, g.param(params_.at("conv.w")), g.param(params_.at("conv.b")), cfg_.k));
    int m = n - cfg_.k + 1;
    ad::Var dists = g.leaf({m, cfg_.dist_slots()}, window_distance_rows(trip), "window_dists");
    ad::Var loc_f = ad::concat_cols({conv, dists});
    ad::Var attr = attribute_vector(g, trip);

    std::vector<ad::LstmWeights> weights;
    for (int l = 0; l < cfg_.rnn_layers; ++l) {
      std::string p = "lstm" + std::to_string(l + 1);
      weights.push_back(ad::LstmWeights{g.param(params_.at(p + ".wx")),
                                        g.param(params_.at(p + ".wh")),
                                        g.param(params_.at(p + ".b"))});
    }
    std::vector<double> zeros(static_cast<size_t>(cfg_.rnn_hidden), 0.0);
    std::vector<ad::LstmState> states;
    for (int l = 0; l < cfg_.rnn_layers; ++l)
      states.push_back(ad::LstmState{g.leaf({cfg_.rnn_hidden}, zeros), g.leaf({cfg_.rnn_hidden}, zeros)});

    std::vector<ad::Var> top_states;
    top_states.reserve(static_cast<size_t>(m));
    for (int t = 0; t < m; ++t) {
      ad::Var step_in = ad::concat({ad::row(loc_f, t), attr});
      for (int l = 0; l < cfg_.rnn_layers; ++l) {
        states[static_cast<size_t>(l)] =
            ad::lstm_step(l == 0 ? step_in : states[static_cast<size_t>(l - 1)].h,
                          states[static_cast<size_t>(l)], weights[static_cast<size_t>(l)]);
      }
      top_states.push_back(states[static_cast<size_t>(cfg_.rnn_layers - 1)].h);
    }
    ad::Var h_seq = ad::stack_rows(top_states);

    ad::Var r_u = ad::add_scalar(ad::matvec_rows(h_seq, g.param(params_.at("head.local.w"))),
                                 g.param(params_.at("head.local.b")));
    ad::Var r_sec = ad::exp_clamped(
        ad::add_const(ad::scale(r_u, stats_.log_local_std), stats_.log_local_mean), kLogClampLo,
        kLogClampHi);

    ad::AttentionWeights attn{g.param(params_.at("attn.w1")), g.param(params_.at("attn.b1")),
                              g.param(params_.at("attn.w2"))};
    ad::Var pooled = ad::attention_pool(h_seq, attr, attn);
    ad::Var g_u = ad::add(ad::dot(g.param(params_.at("head.global.w")), pooled),
                          g.param(params_.at("head.global.b")));
    ad::Var g_sec = ad::exp_clamped(
        ad::add_const(ad::scale(g_u, stats_.log_time_std), stats_.log_time_mean), kLogClampLo,
        kLogClampHi);

    return Forward{r_sec, g_sec, m};
  }

  // Eq-style multi-task objective over one trip.
  ad::Var loss(ad::Graph& g, const Forward& f, const MappedTrip& trip) const {
    int m = f.m;
    std::vector<double> targets(static_cast<size_t>(m));
    std::vector<double> inv(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
      double tau = trip.trip.time_gap[static_cast<size_t>(i + cfg_.k - 1)] -
                   trip.trip.time_gap[static_cast<size_t>(i)];
      targets[static_cast<size_t>(i)] = tau;
      inv[static_cast<size_t>(i)] = 1.0 / (tau + cfg_.local_epsilon_s);
    }
    ad::Var tau_leaf = g.leaf({m}, targets, "local_targets");
    ad::Var inv_leaf = g.leaf({m}, inv, "local_inv");
    ad::Var l_local = ad::mean(ad::mul(ad::abs_(ad::sub(f.r_seconds, tau_leaf)), inv_leaf));
    double total = trip.trip.total_time;
    if (!(total > 0.0)) fail("loss: trip total_time must be positive");
    ad::Var l_global =
        ad::scale(ad::abs_(ad::sub(f.global_seconds, g.leaf({1}, {total}, "total_time"))), 1.0 / total);
    return ad::add(ad::scale(l_local, cfg_.beta), ad::scale(l_global, 1.0 - cfg_.beta));
  }

  // Positive travel-time estimate in seconds (global head).
  double predict(const MappedTrip& trip, const EmbeddingTable* table) {
    ad::Graph g;
    Forward f = forward(g, trip, table);
    return f.global_seconds.value()[0];
  }

private:
  void init_params() {
    Rng rng(cfg_.seed);
    auto xavier = [&](const std::string& name, int rows, int cols) {
      ad::Parameter& p = params_.create(name, {rows, cols});
      ad::init_xavier(p, rng, cols, rows);
      return &p;
    };
    auto xavier_vec = [&](const std::string& name, int n, int fan_in) {
      ad::Parameter& p = params_.create(name, {n});
      ad::init_xavier(p, rng, fan_in, 1);
      return &p;
    };
    auto zeros = [&](const std::string& name, std::vector<int> shape) {
      return &params_.create(name, std::move(shape));
    };
    auto table = [&](const std::string& name, long long rows, int cols) {
      ad::Parameter& p = params_.create(name, {static_cast<int>(rows), cols});
      ad::init_uniform(p, rng, 0.1);
      return &p;
    };

    table("attr.driver", cfg_.driver_vocab, cfg_.driver_embed_dim);
    table("attr.week", kWeekVocab, cfg_.week_embed_dim);
    table("attr.time", kTimeSlotsPerDay, cfg_.time_embed_dim);
    if (cfg_.use_date) table("attr.date", kDateVocab, cfg_.date_embed_dim);

    xavier("loc.w", cfg_.loc_dim, cfg_.input_dim());
    zeros("loc.b", {cfg_.loc_dim});
    xavier("conv.w", cfg_.conv_channels, cfg_.k * cfg_.loc_dim);
    zeros("conv.b", {cfg_.conv_channels});

    int h = cfg_.rnn_hidden;
    for (int l = 0; l < cfg_.rnn_layers; ++l) {
      std::string p = "lstm" + std::to_string(l + 1);
      int in_dim = l == 0 ? cfg_.conv_channels + cfg_.dist_slots() + cfg_.attr_dim() : h;
      xavier(p + ".wx", 4 * h, in_dim);
      xavier(p + ".wh", 4 * h, h);
      zeros(p + ".b", {4 * h});
    }

    xavier_vec("head.local.w", h, h);
    zeros("head.local.b", {1});
    xavier("attn.w1", cfg_.attn_dim, h + cfg_.attr_dim());
    zeros("attn.b1", {cfg_.attn_dim});
    xavier_vec("attn.w2", cfg_.attn_dim, cfg_.attn_dim);
    xavier_vec("head.global.w", h, h);
    zeros("head.global.b", {1});
  }

  std::vector<double> input_rows(const MappedTrip& trip, const EmbeddingTable* table) {
    int n = static_cast<int>(trip.trip.points.size());
    int d = cfg_.input_dim();
    std::vector<double> rows(static_cast<size_t>(n) * d, 0.0);
    for (int i = 0; i < n; ++i) {
      double* row = &rows[static_cast<size_t>(i) * d];
      const GeoPoint& node = trip.node_locations[static_cast<size_t>(i)];
      double lat_n = detail::clamp_feature((node.lat - stats_.lat_mean) / stats_.lat_std);
      double lon_n = detail::clamp_feature((node.lon - stats_.lon_mean) / stats_.lon_std);
      switch (cfg_.variant) {
        case Variant::kLGc:
          row[0] = lat_n;
          row[1] = lon_n;
          break;
        case Variant::kEGc:
        case Variant::kElGc: {
          const std::vector<double>* emb = table->find(trip.node_ids[static_cast<size_t>(i)]);
          if (emb) {
            if (static_cast<int>(emb->size()) != cfg_.node_embed_dim)
              fail(strprintf("embedding dim %zu does not match configured %d", emb->size(),
                             cfg_.node_embed_dim));
            std::copy(emb->begin(), emb->end(), row);
          } else {
            ++missing_embeddings_;  // zero-vector substitution
          }
          if (cfg_.variant == Variant::kElGc) {
            row[cfg_.node_embed_dim] = lat_n;
            row[cfg_.node_embed_dim + 1] = lon_n;
          }
          break;
        }
      }
    }
    return rows;
  }

  // Distance covered by the k-point window of each local path, z-scored,
  // order [coordinate, map] when both are in play.
  std::vector<double> window_distance_rows(const MappedTrip& trip) const {
    int n = static_cast<int>(trip.trip.points.size());
    int m = n - cfg_.k + 1;
    int slots = cfg_.dist_slots();
    std::vector<double> rows(static_cast<size_t>(m) * slots, 0.0);
    for (int i = 0; i < m; ++i) {
      double* row = &rows[static_cast<size_t>(i) * slots];
      int slot = 0;
      if (cfg_.distance_mode != DistanceMode::kMap) {
        double gap = trip.trip.dist_gap[static_cast<size_t>(i + cfg_.k - 1)] -
                     trip.trip.dist_gap[static_cast<size_t>(i)];
        row[slot++] = detail::clamp_feature((gap - stats_.gap_coord_mean) / stats_.gap_coord_std);
      }
      if (cfg_.distance_mode != DistanceMode::kCoordinate) {
        double gap = trip.dist_gap_map_km[static_cast<size_t>(i + cfg_.k - 1)] -
                     trip.dist_gap_map_km[static_cast<size_t>(i)];
        row[slot++] = detail::clamp_feature((gap - stats_.gap_map_mean) / stats_.gap_map_std);
      }
    }
    return rows;
  }

  ad::Var attribute_vector(ad::Graph& g, const MappedTrip& trip) {
    auto table_row = [&](const char* name, long long id, long long vocab) {
      long long idx = id % vocab;
      if (idx < 0) idx += vocab;
      return ad::row(g.param(params_.at(name)), static_cast<int>(idx));
    };
    std::vector<ad::Var> parts;
    parts.push_back(table_row("attr.driver", trip.trip.driver_id, cfg_.driver_vocab));
    parts.push_back(table_row("attr.week", trip.trip.week_id, kWeekVocab));
    parts.push_back(table_row("attr.time", trip.trip.time_id, kTimeSlotsPerDay));
    if (cfg_.use_date) parts.push_back(table_row("attr.date", trip.trip.date_id, kDateVocab));
    std::vector<double> totals;
    if (cfg_.distance_mode != DistanceMode::kMap)
      totals.push_back(detail::clamp_feature((trip.trip.total_dist - stats_.total_coord_mean) /
                                             stats_.total_coord_std));
    if (cfg_.distance_mode != DistanceMode::kCoordinate)
      totals.push_back(detail::clamp_feature((trip.total_dist_map_km - stats_.total_map_mean) /
                                             stats_.total_map_std));
    parts.push_back(g.leaf({static_cast<int>(totals.size())}, totals, "attr_dist"));
    return ad::concat(parts);
  }

  ModelConfig cfg_;
  NormStats stats_;
  ad::ParamStore params_;
  long long missing_embeddings_ = 0;
};

// ---------------------------------------------------------------------------
// Training

struct TrainLogEntry {
  int epoch = 0;
  double train_loss = 0.0;
  double val_mape = 0.0;
};

struct TrainResult {
  std::optional<TteModel> model;  // best-validation snapshot
  std::vector<TrainLogEntry> log;
  size_t skipped_short_trips = 0;
  double best_val_mape = 0.0;
};

inline double quick_mape(TteModel& model, const std::vector<const MappedTrip*>& trips,
                         const EmbeddingTable* table) {
  double acc = 0.0;
  size_t n = 0;
  for (const MappedTrip* m : trips) {
    if (!model.supports(*m) || !(m->trip.total_time > 0.0)) continue;
    double pred = model.predict(*m, table);
    acc += std::abs(pred - m->trip.total_time) / m->trip.total_time;
    ++n;
  }
  return n ? acc / static_cast<double>(n) * 100.0 : std::numeric_limits<double>::quiet_NaN();
}

inline TrainResult train_model(const std::vector<MappedTrip>& train_set,
                               const std::vector<MappedTrip>& val_set,
                               const EmbeddingTable* table, ModelConfig cfg) {
  cfg.validate();
  if (cfg.needs_embeddings() && table == nullptr)
    fail(strprintf("train: variant %s requires a node embedding table", variant_name(cfg.variant)));
  if (table && cfg.node_embed_dim != table->dim) cfg.node_embed_dim = table->dim;

  TrainResult result;
  std::vector<const MappedTrip*> train_ok, val_ok;
  for (const auto& m : train_set) {
    if (static_cast<int>(m.trip.points.size()) >= cfg.k && m.trip.total_time > 0.0)
      train_ok.push_back(&m);
    else
      ++result.skipped_short_trips;
  }
  for (const auto& m : val_set) {
    if (static_cast<int>(m.trip.points.size()) >= cfg.k && m.trip.total_time > 0.0)
      val_ok.push_back(&m);
    else
      ++result.skipped_short_trips;
  }
  if (train_ok.empty()) fail("train: no usable training trips");

  if (cfg.driver_vocab < 1) {
    long long mx = 0;
    for (const auto* m : train_ok) mx = std::max(mx, m->trip.driver_id);
    for (const auto* m : val_ok) mx = std::max(mx, m->trip.driver_id);
    cfg.driver_vocab = mx + 1;
  }

  std::vector<MappedTrip> train_value;  // stats need values, not pointers
  train_value.reserve(train_ok.size());
  for (const auto* m : train_ok) train_value.push_back(*m);
  NormStats stats = compute_norm_stats(train_value, cfg.k);

  TteModel model(cfg, stats);
  ad::Adam adam(ad::AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  Rng shuffle_rng(cfg.seed ^ 0xa5b35705u);

  std::optional<ad::ParamStore> best_params;
  double best_val = std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // length-bucketed batches: shuffle within buckets, then shuffle batches
    std::map<int, std::vector<size_t>> buckets;
    for (size_t i = 0; i < train_ok.size(); ++i)
      buckets[static_cast<int>(train_ok[i]->trip.points.size()) / 8].push_back(i);
    std::vector<size_t> order;
    order.reserve(train_ok.size());
    for (auto& [_, members] : buckets) {
      shuffle_rng.shuffle(members);
      order.insert(order.end(), members.begin(), members.end());
    }
    std::vector<std::vector<size_t>> batches;
    for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.batch_size)) {
      size_t end = std::min(order.size(), off + static_cast<size_t>(cfg.batch_size));
      batches.emplace_back(order.begin() + static_cast<long>(off), order.begin() + static_cast<long>(end));
    }
    shuffle_rng.shuffle(batches);

    double epoch_loss = 0.0;
    size_t epoch_trips = 0;
    for (const auto& batch : batches) {
      model.params().zero_grads();
      double batch_loss = 0.0;
      for (size_t idx : batch) {
        const MappedTrip& trip = *train_ok[idx];
        ad::Graph g;
        try {
          TteModel::Forward f = model.forward(g, trip, table);
          ad::Var l = model.loss(g, f, trip);
          g.backward(l);
          batch_loss += l.scalar();
        } catch (const Error& e) {
          fail(strprintf("training diverged at epoch %d: %s", epoch, e.what()));
        }
      }
      model.params().scale_grads(1.0 / static_cast<double>(batch.size()));
      adam.step(model.params());
      epoch_loss += batch_loss;
      epoch_trips += batch.size();
    }
    double mean_loss = epoch_loss / static_cast<double>(epoch_trips);
    if (!std::isfinite(mean_loss))
      fail(strprintf("training diverged at epoch %d: non-finite loss", epoch));

    double val_mape = quick_mape(model, val_ok, table);
    result.log.push_back(TrainLogEntry{epoch, mean_loss, val_mape});
    double selector = val_ok.empty() ? mean_loss : val_mape;
    if (selector < best_val) {
      best_val = selector;
      best_params = model.params();
    }
  }

  result.best_val_mape = best_val;
  if (!best_params) best_params = model.params();
  result.model.emplace(cfg, stats, std::move(*best_params));
  return result;
}

// ---------------------------------------------------------------------------
// Model checkpoint: "TTEM", version byte, config text, binary stats, then
// the named-tensor container. Exact round-trip.

namespace detail {

inline std::string config_to_text(const ModelConfig& c) {
  std::string out;
  out += strprintf("variant=%s\n", variant_name(c.variant));
  out += strprintf("distance_mode=%s\n", distance_mode_name(c.distance_mode));
  out += strprintf("k=%d\n", c.k);
  out += strprintf("conv_channels=%d\n", c.conv_channels);
  out += strprintf("loc_dim=%d\n", c.loc_dim);
  out += strprintf("rnn_hidden=%d\n", c.rnn_hidden);
  out += strprintf("rnn_layers=%d\n", c.rnn_layers);
  out += strprintf("attn_dim=%d\n", c.attn_dim);
  out += strprintf("beta=%.17g\n", c.beta);
  out += strprintf("driver_embed_dim=%d\n", c.driver_embed_dim);
  out += strprintf("week_embed_dim=%d\n", c.week_embed_dim);
  out += strprintf("time_embed_dim=%d\n", c.time_embed_dim);
  out += strprintf("use_date=%d\n", c.use_date ? 1 : 0);
  out += strprintf("date_embed_dim=%d\n", c.date_embed_dim);
  out += strprintf("driver_vocab=%lld\n", c.driver_vocab);
  out += strprintf("node_embed_dim=%d\n", c.node_embed_dim);
  out += strprintf("epochs=%d\n", c.epochs);
  out += strprintf("batch_size=%d\n", c.batch_size);
  out += strprintf("learning_rate=%.17g\n", c.learning_rate);
  out += strprintf("seed=%llu\n", static_cast<unsigned long long>(c.seed));
  out += strprintf("local_epsilon_s=%.17g\n", c.local_epsilon_s);
  return out;
}

inline ModelConfig config_from_text(const std::string& text) {
  ModelConfig c;
  for (const auto& raw : split(text, '\n')) {
    std::string line = trim(raw);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) fail("model config: bad line '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    if (key == "variant") c.variant = parse_variant(val);
    else if (key == "distance_mode") c.distance_mode = parse_distance_mode(val);
    else if (key == "k") c.k = static_cast<int>(parse_int(val, key));
    else if (key == "conv_channels") c.conv_channels = static_cast<int>(parse_int(val, key));
    else if (key == "loc_dim") c.loc_dim = static_cast<int>(parse_int(val, key));
    else if (key == "rnn_hidden") c.rnn_hidden = static_cast<int>(parse_int(val, key));
    else if (key == "rnn_layers") c.rnn_layers = static_cast<int>(parse_int(val, key));
    else if (key == "attn_dim") c.attn_dim = static_cast<int>(parse_int(val, key));
    else if (key == "beta") c.beta = parse_double(val, key);
    else if (key == "driver_embed_dim") c.driver_embed_dim = static_cast<int>(parse_int(val, key));
    else if (key == "week_embed_dim") c.week_embed_dim = static_cast<int>(parse_int(val, key));
    else if (key == "time_embed_dim") c.time_embed_dim = static_cast<int>(parse_int(val, key));
    else if (key == "use_date") c.use_date = parse_int(val, key) != 0;
    else if (key == "date_embed_dim") c.date_embed_dim = static_cast<int>(parse_int(val, key));
    else if (key == "driver_vocab") c.driver_vocab = parse_int(val, key);
    else if (key == "node_embed_dim") c.node_embed_dim = static_cast<int>(parse_int(val, key));
    else if (key == "epochs") c.epochs = static_cast<int>(parse_int(val, key));
    else if (key == "batch_size") c.batch_size = static_cast<int>(parse_int(val, key));
    else if (key == "learning_rate") c.learning_rate = parse_double(val, key);
    else if (key == "seed") c.seed = static_cast<uint64_t>(parse_int(val, key));
    else if (key == "local_epsilon_s") c.local_epsilon_s = parse_double(val, key);
    else fail("model config: unknown key '" + key + "'");
  }
  return c;
}

inline void stats_to_bytes(const NormStats& s, std::string& out) {
  for (double v : {s.log_time_mean, s.log_time_std, s.log_local_mean, s.log_local_std,
                   s.gap_coord_mean, s.gap_coord_std, s.gap_map_mean, s.gap_map_std,
                   s.total_coord_mean, s.total_coord_std, s.total_map_mean, s.total_map_std,
                   s.lat_mean, s.lat_std, s.lon_mean, s.lon_std})
    ad::detail::put_f64(out, v);
}

inline NormStats stats_from_reader(ad::detail::ByteReader& r) {
  NormStats s;
  s.log_time_mean = r.f64();
  s.log_time_std = r.f64();
  s.log_local_mean = r.f64();
  s.log_local_std = r.f64();
  s.gap_coord_mean = r.f64();
  s.gap_coord_std = r.f64();
  s.gap_map_mean = r.f64();
  s.gap_map_std = r.f64();
  s.total_coord_mean = r.f64();
  s.total_coord_std = r.f64();
  s.total_map_mean = r.f64();
  s.total_map_std = r.f64();
  s.lat_mean = r.f64();
  s.lat_std = r.f64();
  s.lon_mean = r.f64();
  s.lon_std = r.f64();
  return s;
}

}  // namespace detail

inline std::string serialize_model(const TteModel& model) {
  std::string out = "TTEM";
  out.push_back(1);  // version
  std::string cfg_text = detail::config_to_text(model.config());
  ad::detail::put_u32(out, static_cast<uint32_t>(cfg_text.size()));
  out += cfg_text;
  detail::stats_to_bytes(model.stats(), out);
  out += ad::serialize_params(model.params());
  return out;
}

inline TteModel deserialize_model(const std::string& bytes) {
  ad::detail::ByteReader r(bytes);
  if (r.bytes(4) != "TTEM") fail("model checkpoint: bad magic");
  if (r.u8() != 1) fail("model checkpoint: unsupported version");
  uint32_t cfg_len = r.u32();
  ModelConfig cfg = detail::config_from_text(r.bytes(cfg_len));
  NormStats stats = detail::stats_from_reader(r);
  ad::ParamStore params = ad::deserialize_params(bytes, r.pos());
  return TteModel(cfg, stats, std::move(params));
}

inline void save_model(const TteModel& model, const std::string& path) {
  write_file(path, serialize_model(model));
}

inline TteModel load_model(const std::string& path) { return deserialize_model(read_file(path)); }

}  // namespace tte
