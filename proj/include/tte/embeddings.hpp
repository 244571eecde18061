#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "tte/common.hpp"
#include "tte/roadnet.hpp"

namespace tte {

struct WalkConfig {
  int walks_per_node = 10;
  int walk_length = 40;
  double return_param = 1.0;  // p: weight 1/p for stepping back to the previous node
  double inout_param = 1.0;   // q: weight 1/q for leaving the previous node's neighborhood
  int window = 5;
  int negatives = 5;
  int epochs = 5;
  double learning_rate = 0.025;
  uint64_t seed = 1;

  void validate() const {
    if (walks_per_node < 1 || walk_length < 1) fail("walk config: counts must be positive");
    if (!(return_param > 0.0) || !(inout_param > 0.0)) fail("walk config: p and q must be > 0");
    if (window < 1 || negatives < 0 || epochs < 1) fail("walk config: bad training settings");
    if (!(learning_rate > 0.0)) fail("walk config: learning rate must be > 0");
  }
};

struct EmbeddingTable {
  int dim = 128;
  std::map<long long, std::vector<double>> vectors;  // node id -> embedding
  std::string metadata;

  const std::vector<double>* find(long long id) const {
    auto it = vectors.find(id);
    return it == vectors.end() ? nullptr : &it->second;
  }
};

namespace detail {

// Undirected neighbor lists: embedding proximity reflects road adjacency
// regardless of travel direction.
inline std::vector<std::vector<int>> undirected_neighbors(const RoadNetwork& net) {
  std::vector<std::vector<int>> nbrs(net.nodes.size());
  for (size_t u = 0; u < net.adjacency.size(); ++u) {
    for (const auto& e : net.adjacency[u]) {
      nbrs[u].push_back(e.target);
      nbrs[static_cast<size_t>(e.target)].push_back(static_cast<int>(u));
    }
  }
  for (auto& v : nbrs) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  return nbrs;
}

inline bool adjacent(const std::vector<std::vector<int>>& nbrs, int a, int b) {
  const auto& v = nbrs[static_cast<size_t>(a)];
  return std::binary_search(v.begin(), v.end(), b);
}

}  // namespace detail

// Second-order biased random walks: from the edge (prev -> cur), the
// unnormalized weight of candidate x is 1/p when x == prev, 1 when x is a
// neighbor of prev, and 1/q otherwise. Walks start walks_per_node times at
// every node; each walk is seeded independently of walk order.
inline std::vector<std::vector<int>> generate_walks(const RoadNetwork& net, const WalkConfig& cfg) {
  cfg.validate();
  if (net.nodes.empty()) fail("generate_walks: empty network");
  auto nbrs = detail::undirected_neighbors(net);
  std::vector<std::vector<int>> walks;
  walks.reserve(net.nodes.size() * static_cast<size_t>(cfg.walks_per_node));
  std::vector<double> weights;
  for (size_t start = 0; start < net.nodes.size(); ++start) {
    for (int w = 0; w < cfg.walks_per_node; ++w) {
      uint64_t walk_seed =
          fnv1a64(&start, sizeof(start), fnv1a64(&w, sizeof(w), cfg.seed ^ 0x9e3779b97f4a7c15ULL));
      Rng rng(walk_seed);
      std::vector<int> walk{static_cast<int>(start)};
      int prev = -1;
      while (static_cast<int>(walk.size()) < cfg.walk_length) {
        int cur = walk.back();
        const auto& cand = nbrs[static_cast<size_t>(cur)];
        if (cand.empty()) break;  // dead end
        int next;
        if (prev < 0) {
          next = cand[static_cast<size_t>(rng.below(cand.size()))];
        } else {
          weights.resize(cand.size());
          double total = 0.0;
          for (size_t i = 0; i < cand.size(); ++i) {
            double wgt;
            if (cand[i] == prev)
              wgt = 1.0 / cfg.return_param;
            else if (detail::adjacent(nbrs, prev, cand[i]))
              wgt = 1.0;
            else
              wgt = 1.0 / cfg.inout_param;
            total += wgt;
            weights[i] = total;
          }
          double r = rng.uniform() * total;
          size_t pick = static_cast<size_t>(
              std::lower_bound(weights.begin(), weights.end(), r) - weights.begin());
          if (pick >= cand.size()) pick = cand.size() - 1;
          next = cand[pick];
        }
        prev = cur;
        walk.push_back(next);
      }
      walks.push_back(std::move(walk));
    }
  }
  return walks;
}

// ---------------------------------------------------------------------------
// Skip-gram with negative sampling

namespace sgns {

// Loss of one (center, context, negatives) example:
//   -log sigmoid(in . out_ctx) - sum_neg log sigmoid(-in . out_neg)
inline double example_loss(const std::vector<double>& center, const std::vector<double>& context,
                           const std::vector<std::vector<double>>& negatives) {
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  auto log_sigmoid = [](double x) { return x > 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); };
  double loss = -log_sigmoid(dot(center, context));
  for (const auto& n : negatives) loss -= log_sigmoid(-dot(center, n));
  return loss;
}

// Analytic gradients of example_loss.
inline void example_grads(const std::vector<double>& center, const std::vector<double>& context,
                          const std::vector<std::vector<double>>& negatives,
                          std::vector<double>& g_center, std::vector<double>& g_context,
                          std::vector<std::vector<double>>& g_negatives) {
  size_t d = center.size();
  g_center.assign(d, 0.0);
  g_context.assign(d, 0.0);
  g_negatives.assign(negatives.size(), std::vector<double>(d, 0.0));
  auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  double s = 0.0;
  for (size_t i = 0; i < d; ++i) s += center[i] * context[i];
  double coef = sigmoid(s) - 1.0;  // d(-log sigmoid(s))/ds
  for (size_t i = 0; i < d; ++i) {
    g_center[i] += coef * context[i];
    g_context[i] += coef * center[i];
  }
  for (size_t k = 0; k < negatives.size(); ++k) {
    double sn = 0.0;
    for (size_t i = 0; i < d; ++i) sn += center[i] * negatives[k][i];
    double cn = sigmoid(sn);  // d(-log sigmoid(-sn))/dsn
    for (size_t i = 0; i < d; ++i) {
      g_center[i] += cn * negatives[k][i];
      g_negatives[k][i] += cn * center[i];
    }
  }
}

}  // namespace sgns

struct SkipgramResult {
  EmbeddingTable table;
  std::vector<double> epoch_loss;  // mean example loss per epoch
};

// Trains node embeddings on a walk corpus. Deterministic for a fixed seed:
// single worker, fixed iteration order, explicit distribution mappings.
inline SkipgramResult train_skipgram(const RoadNetwork& net,
                                     const std::vector<std::vector<int>>& walks,
                                     const WalkConfig& cfg, int dim = 128) {
  cfg.validate();
  if (dim < 1) fail("train_skipgram: dim must be >= 1");
  if (walks.empty()) fail("train_skipgram: empty walk corpus");
  size_t vocab = net.nodes.size();

  // unigram^0.75 negative-sampling table over walk occurrences
  std::vector<double> freq(vocab, 0.0);
  size_t tokens = 0;
  for (const auto& w : walks)
    for (int node : w) {
      freq[static_cast<size_t>(node)] += 1.0;
      ++tokens;
    }
  std::vector<double> neg_cdf(vocab, 0.0);
  double total = 0.0;
  for (size_t i = 0; i < vocab; ++i) {
    total += std::pow(freq[i], 0.75);
    neg_cdf[i] = total;
  }
  if (total <= 0.0) fail("train_skipgram: corpus has no tokens");

  Rng rng(cfg.seed ^ 0x51f3c4b2a9d8e607ULL);
  std::vector<std::vector<double>> in_vec(vocab, std::vector<double>(static_cast<size_t>(dim)));
  std::vector<std::vector<double>> out_vec(vocab, std::vector<double>(static_cast<size_t>(dim), 0.0));
  for (auto& v : in_vec)
    for (auto& x : v) x = rng.uniform(-0.5 / dim, 0.5 / dim);

  auto sample_negative = [&]() {
    double r = rng.uniform() * total;
    size_t pick =
        static_cast<size_t>(std::lower_bound(neg_cdf.begin(), neg_cdf.end(), r) - neg_cdf.begin());
    return pick >= vocab ? static_cast<int>(vocab - 1) : static_cast<int>(pick);
  };

  std::vector<double> epoch_loss;
  std::vector<double> g_center(static_cast<size_t>(dim));
  auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  auto log_sigmoid = [](double x) {
    return x > 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
  };
  const double planned_tokens =
      static_cast<double>(tokens) * static_cast<double>(cfg.epochs);
  size_t processed_tokens = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    size_t examples = 0;
    for (const auto& walk : walks) {
      int len = static_cast<int>(walk.size());
      for (int c = 0; c < len; ++c) {
        double lr = cfg.learning_rate *
                    std::max(1.0 - static_cast<double>(processed_tokens) / planned_tokens, 1e-4);
        ++processed_tokens;
        int span = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(cfg.window)));
        for (int off = -span; off <= span; ++off) {
          int j = c + off;
          if (off == 0 || j < 0 || j >= len) continue;
          int center = walk[static_cast<size_t>(c)];
          int ctx = walk[static_cast<size_t>(j)];
          auto& vin = in_vec[static_cast<size_t>(center)];
          std::fill(g_center.begin(), g_center.end(), 0.0);
          double loss = 0.0;
          {
            auto& vout = out_vec[static_cast<size_t>(ctx)];
            double s = 0.0;
            for (int i = 0; i < dim; ++i) s += vin[static_cast<size_t>(i)] * vout[static_cast<size_t>(i)];
            loss -= log_sigmoid(s);
            double coef = sigmoid(s) - 1.0;
            for (int i = 0; i < dim; ++i) {
              g_center[static_cast<size_t>(i)] += coef * vout[static_cast<size_t>(i)];
              vout[static_cast<size_t>(i)] -= lr * coef * vin[static_cast<size_t>(i)];
            }
          }
          for (int k = 0; k < cfg.negatives; ++k) {
            int neg = sample_negative();
            if (neg == ctx) continue;
            auto& vout = out_vec[static_cast<size_t>(neg)];
            double s = 0.0;
            for (int i = 0; i < dim; ++i) s += vin[static_cast<size_t>(i)] * vout[static_cast<size_t>(i)];
            loss -= log_sigmoid(-s);
            double coef = sigmoid(s);
            for (int i = 0; i < dim; ++i) {
              g_center[static_cast<size_t>(i)] += coef * vout[static_cast<size_t>(i)];
              vout[static_cast<size_t>(i)] -= lr * coef * vin[static_cast<size_t>(i)];
            }
          }
          for (int i = 0; i < dim; ++i) vin[static_cast<size_t>(i)] -= lr * g_center[static_cast<size_t>(i)];
          loss_sum += loss;
          ++examples;
        }
      }
    }
    epoch_loss.push_back(examples > 0 ? loss_sum / static_cast<double>(examples) : 0.0);
  }

  SkipgramResult out;
  out.epoch_loss = std::move(epoch_loss);
  out.table.dim = dim;
  for (size_t i = 0; i < vocab; ++i) out.table.vectors[net.nodes[i].id] = in_vec[i];
  out.table.metadata = strprintf(
      "walks_per_node=%d walk_length=%d p=%g q=%g window=%d negatives=%d epochs=%d lr=%g seed=%llu "
      "tokens=%zu undirected=1",
      cfg.walks_per_node, cfg.walk_length, cfg.return_param, cfg.inout_param, cfg.window,
      cfg.negatives, cfg.epochs, cfg.learning_rate, static_cast<unsigned long long>(cfg.seed),
      tokens);
  return out;
}

// ---------------------------------------------------------------------------
// Text embedding file: first line "count dim", then one node per line with
// 6-decimal components (the word-vector text convention).

inline std::string serialize_embeddings(const EmbeddingTable& table) {
  std::string out = strprintf("%zu %d\n", table.vectors.size(), table.dim);
  for (const auto& [id, vec] : table.vectors) {
    out += std::to_string(id);
    for (double v : vec) out += " " + format_fixed(v, 6);
    out += "\n";
  }
  return out;
}

inline void save_embeddings(const EmbeddingTable& table, const std::string& path) {
  write_file(path, serialize_embeddings(table));
}

inline EmbeddingTable parse_embeddings(const std::string& text, const std::string& origin) {
  EmbeddingTable table;
  size_t pos = 0, line_no = 0;
  long long declared_count = -1;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (line.empty()) continue;
    auto parts = split(line, ' ');
    auto where = [&] { return strprintf("%s line %zu", origin.c_str(), line_no); };
    if (declared_count < 0) {
      if (parts.size() != 2) fail("embedding file: first line must be 'count dim' at " + where());
      declared_count = parse_int(parts[0], where());
      table.dim = static_cast<int>(parse_int(parts[1], where()));
      if (table.dim < 1) fail("embedding file: dim must be positive at " + where());
      continue;
    }
    if (static_cast<int>(parts.size()) != table.dim + 1)
      fail(strprintf("embedding file: expected %d values, got %zu at %s", table.dim,
                     parts.size() - 1, where().c_str()));
    long long id = parse_int(parts[0], where());
    if (table.vectors.count(id)) fail(strprintf("embedding file: duplicate node id %lld at %s", id, where().c_str()));
    std::vector<double> vec(static_cast<size_t>(table.dim));
    for (int i = 0; i < table.dim; ++i) {
      vec[static_cast<size_t>(i)] = parse_double(parts[static_cast<size_t>(i) + 1], where());
      if (!std::isfinite(vec[static_cast<size_t>(i)])) fail("embedding file: non-finite value at " + where());
    }
    table.vectors.emplace(id, std::move(vec));
  }
  if (declared_count < 0) fail("embedding file: empty " + origin);
  if (static_cast<long long>(table.vectors.size()) != declared_count)
    fail(strprintf("embedding file: header declares %lld rows, found %zu", declared_count,
                   table.vectors.size()));
  return table;
}

inline EmbeddingTable load_embeddings(const std::string& path) {
  return parse_embeddings(read_file(path), path);
}

}  // namespace tte
