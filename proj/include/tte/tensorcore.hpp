#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tte/common.hpp"

// Dense double-precision tensors with reverse-mode differentiation. A Graph
// is a tape confined to one forward/backward pass; Parameters live outside
// graphs and accumulate gradients across passes until the optimizer steps.
namespace tte::ad {

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

inline size_t numel(const std::vector<int>& s) {
  size_t n = 1;
  for (int d : s) n *= static_cast<size_t>(d);
  return n;
}

struct Node {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::function<void(Node&)> backward;  // scatter this node's grad into inputs
  const char* op = "leaf";
};

struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;

  size_t size() const { return value.size(); }
};

class Graph;

class Var {
public:
  Var() = default;
  Var(Graph* g, Node* n) : graph_(g), node_(n) {}

  const std::vector<int>& shape() const { return node_->shape; }
  const std::vector<double>& value() const { return node_->value; }
  const std::vector<double>& grad() const { return node_->grad; }
  size_t size() const { return node_->value.size(); }
  double scalar() const {
    if (node_->value.size() != 1) fail("scalar() on tensor of shape " + shape_str(node_->shape));
    return node_->value[0];
  }
  Graph* graph() const { return graph_; }
  Node* node() const { return node_; }

private:
  Graph* graph_ = nullptr;
  Node* node_ = nullptr;
};

class Graph {
public:
  Var leaf(std::vector<int> shape, std::vector<double> values, const char* op = "leaf") {
    if (numel(shape) != values.size())
      fail(strprintf("leaf: %zu values for shape %s", values.size(), shape_str(shape).c_str()));
    Node& n = new_node();
    n.shape = std::move(shape);
    n.value = std::move(values);
    n.grad.assign(n.value.size(), 0.0);
    n.op = op;
    check_finite(n);
    return Var(this, &n);
  }

  Var scalar_leaf(double v) { return leaf({1}, {v}, "scalar"); }

  // Leaf bound to an external Parameter; backward adds into the parameter's
  // persistent grad buffer.
  Var param(Parameter& p) {
    Node& n = new_node();
    n.shape = p.shape;
    n.value = p.value;
    n.grad.assign(p.value.size(), 0.0);
    n.op = "param";
    Parameter* pp = &p;
    n.backward = [pp](Node& self) {
      for (size_t i = 0; i < self.grad.size(); ++i) pp->grad[i] += self.grad[i];
    };
    return Var(this, &n);
  }

  Node& new_node() {
    tape_.emplace_back();
    return tape_.back();
  }

  void check_finite(const Node& n) const {
    for (double v : n.value)
      if (!std::isfinite(v)) fail(strprintf("non-finite value produced by op '%s'", n.op));
  }

  // Reverse accumulation from a scalar loss over the whole tape.
  void backward(const Var& loss) {
    if (loss.graph() != this) fail("backward: loss from another graph");
    if (loss.size() != 1)
      fail("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (backward_done_) fail("backward: already called on this graph; build a new graph");
    backward_done_ = true;
    loss.node()->grad[0] = 1.0;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      if (it->backward) it->backward(*it);
      for (double g : it->grad)
        if (!std::isfinite(g)) fail(strprintf("non-finite gradient at op '%s'", it->op));
    }
  }

  bool backward_done() const { return backward_done_; }
  size_t tape_size() const { return tape_.size(); }

private:
  std::deque<Node> tape_;
  bool backward_done_ = false;
};

namespace detail {

inline Node& binary_same_shape(Graph& g, const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    fail(strprintf("%s: shape mismatch %s vs %s", op, shape_str(a.shape()).c_str(),
                   shape_str(b.shape()).c_str()));
  Node& n = g.new_node();
  n.shape = a.shape();
  n.op = op;
  return n;
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  Graph& g = *a.graph();
  Node& n = detail::binary_same_shape(g, a, b, "add");
  n.value.resize(a.size());
  for (size_t i = 0; i < a.size(); ++i) n.value[i] = a.value()[i] + b.value()[i];
  n.grad.assign(n.value.size(), 0.0);
  Node *na = a.node(), *nb = b.node();
  n.backward = [na, nb](Node& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      na->grad[i] += self.grad[i];
      nb->grad[i] += self.grad[i];
    }
  };
  g.check_finite(n);
  return Var(&g, &n);
}

inline Var sub(const Var& a, const Var& b) {
  Graph& g = *a.graph();
  Node& n = detail::binary_same_shape(g, a, b, "sub");
  n.value.resize(a.size());
  for (size_t i = 0; i < a.size(); ++i) n.value[i] = a.value()[i] - b.value()[i];
  n.grad.assign(n.value.size(), 0.0);
  Node *na = a.node(), *nb = b.node();
  n.backward = [na, nb](Node& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      na->grad[i] += self.grad[i];
      nb->grad[i] -= self.grad[i];
    }
  };
  g.check_finite(n);
  return Var(&g, &n);
}

inline Var mul(const Var& a, const Var& b) {
  Graph& g = *a.graph();
  Node& n = detail::binary_same_shape(g, a, b, "mul");
  n.value.resize(a.size());
  for (size_t i = 0; i < a.size(); ++i) n.value[i] = a.value()[i] * b.value()[i];
  n.grad.assign(n.value.size(), 0.0);
  Node *na = a.node(), *nb = b.node();
  n.backward = [na, nb](Node& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      na->grad[i] += self.grad[i] * nb->value[i];
      nb->grad[i] += self.grad[i] * na->value[i];
    }
  };
  g.check_finite(n);
  return Var(&g, &n);
}

inline Var scale(const Var& a, double c) {
  Graph& g = *a.graph();
  Node& n = g.new_node();
  n.shape = a.shape();
  n.op = "scale";
  n.value.resize(a.size());
  for (size_t i = 0; i < a.size(); ++i) n.value[i] = a.value()[i] * c;
  n.grad.assign(n.value.size(), 0.0);
  Node* na = a.node();
  n.backward = [na, c](Node& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) na->grad[i] += self.grad[i] * c;
  };
  g.check_finite(n);
  return Var(&g, &n);
}

inline Var add_const(const Var& a, double c) {
  Graph& g = *a.graph();
  Node& n = g.new_node();
  n.shape = a.shape();
  n.op = "add_const";
  n.value.resize(a.size());
  for (size_t i = 0; i < a.size(); ++i) n.value[i] = a.value()[i] + c;
  n.grad.assign(n.value.size(), 0.0);
  Node* na = a.node();
  n.backward = [na](Node& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) na->grad[i] += self.grad[i];
  };
  g.check_finite(n);
  return Var(&g, &n);
}

namespace detail {

template <typename Fwd, typename Dfn>
inline Var unary_elementwise(const Var& a, const char* op, Fwd fwd, Dfn dfn) {
  Graph& g = *a.graph();
  Node& n = g.new_node();
  n.shape = a.shape();
  n.op = op;
  n.value.resize(a.size());
  for (size_t i = 0; i < a.size(); ++i) n.value[i] = fwd(a.value()[i]);
  n.grad.assign(n.value.size(), 0.0);
  Node* na = a.node();
  n.backward = [na, dfn](Node& self) {
    for (size_t i = 0; i < self.grad.size(); ++i)
      na->grad[i] += self.grad[i] * dfn(na->value[i], self.value[i]);
  };
  g.check_finite(n);
  return Var(&g, &n);
}

}  // namespace detail

inline Var neg(const Var& a) {
  return detail::unary_elementwise(
      a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

inline Var abs_(const Var& a) {
  return detail::unary_elementwise(
      a, "abs", [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var exp_(const Var& a) {
  return detail::unary_elementwise(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

// exp with a hard clamp on the argument; keeps early training finite.
inline Var exp_clamped(const Var& a, double lo, double hi) {
  return detail::unary_elementwise(
      a, "exp_clamped", [lo, hi](double x) { return std::exp(std::clamp(x, lo, hi)); },
      [lo, hi](double x, double y) { return (x >= lo && x <= hi) ? y : 0.0; });
}

inline Var log_(const Var& a) {
  return detail::unary_elementwise(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var tanh_(const Var& a) {
  return detail::unary_elementwise(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid_(const Var& a) {
  return detail::unary_elementwise(
      a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var elu(const Var& a) {
  return detail::unary_elementwise(
      a, "elu", [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

inline Var softplus(const Var& a) {
  return detail::unary_elementwise(
      a, "softplus",
      [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

inline Var sum(const Var& a) {
  Graph& g = *a.graph();
  Node& n = g.new_node();
  n.shape = {1};
  n.op = "sum";
  double s = 0.0;
  for (double v : a.value()) s += v;
  n.value = {s};
  n.grad = {0.0};
  Node* na = a.node();
  n.backward = [na](Node& self) {
    for (double& gv : na->grad) gv += self.grad[0];
  };
  g.check_finite(n);
  return Var(&g, &n);
}

inline Var mean(const Var& a) {
  if (a.size() == 0) fail("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

inline Var dot(const Var& a, const Var& b) {
  Graph& g = *a.graph();
  if (a.shape() != b.shape() || a.shape().size() != 1)
    fail(strprintf("dot: shape mismatch %s vs %s", shape_str(a.shape()).c_str(),
                   shape_str(b.shape()).c_str()));
  Node& n = g.new_node();
  n.shape = {1};
  n.op = "dot";
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a.value()[i] * b.value()[i];
  n.value = {s};
  n.grad = {0.0};
  Node *na = a.node(), *nb = b.node();
  n.backward = [na, nb](Node& self) {
    double go = self.grad[0];
    for (size_t i = 0; i < na->value.size(); ++i) {
      na->grad[i] += go * nb->value[i];
      nb->grad[i] += go * na->value[i];
    }
  };
  g.check_finite(n);
  return Var(&g, &n);
}

// y = W x + b with W (m x n), x (n), b (m)
inline Var affine(const Var& x, const Var& w, const Var& b) {
  Graph& g = *x.graph();
  if (x.shape().size() != 1 || w.shape().size() != 2 || b.shape().size() != 1 ||
      w.shape()[1] != x.shape()[0] || w.shape()[0] != b.shape()[0])
    fail(strprintf("affine: incompatible shapes W%s x%s b%s", shape_str(w.shape()).c_str(),
                   shape_str(x.shape()).c_str(), shape_str(b.shape()).c_str()));
  int m = w.shape()[0], nn = w.shape()[1];
  Node& n = g.new_node();
  n.shape = {m};
  n.op = "affine";
  n.value.assign(static_cast<size_t>(m), 0.0);
  for (int i = 0; i < m; ++i) {
    double s = b.value()[static_cast<size_t>(i)];
    const double* wr = &w.value()[static_cast<size_t>(i) * nn];
    for (int j = 0; j < nn; ++j) s += wr[j] * x.value()[static_cast<size_t>(j)];
    n.value[static_cast<size_t>(i)] = s;
  }
  n.grad.assign(n.value.size(), 0.0);
  Node *nx = x.node(), *nw = w.node(), *nb = b.node();
  n.backward = [nx, nw, nb, m, nn](Node& self) {
    for (int i = 0; i < m; ++i) {
      double go = self.grad[static_cast<size_t>(i)];
      if (go == 0.0) continue;
      nb->grad[static_cast<size_t>(i)] += go;
      double* gw = &nw->grad[static_cast<size_t>(i) * nn];
      const double* wr = &nw->value[static_cast<size_t>(i) * nn];
      for (int j = 0; j < nn; ++j) {
        gw[j] += go * nx->value[static_cast<size_t>(j)];
        nx->grad[static_cast<size_t>(j)] += go * wr[j];
      }
    }
  };
  g.check_finite(n);
  return Var(&g, &n);
}

// Y = X W^T + 1 b^T with X (T x n), W (m x n), b (m); row-wise affine.
inline Var linear_rows(const Var& x, const Var& w, const Var& b) {
  Graph& g = *x.graph();
  if (x.shape().size() != 2 || w.shape().size() != 2 || b.shape().size() != 1 ||
      w.shape()[1] != x.shape()[1] || w.shape()[0] != b.shape()[0])
    fail(strprintf("linear_rows: incompatible shapes X%s W%s b%s", shape_str(x.shape()).c_str(),
                   shape_str(w.shape()).c_str(), shape_str(b.shape()).c_str()));
  int t = x.shape()[0], nn = x.shape()[1], m = w.shape()[0];
  Node& n = g.new_node();
  n.shape = {t, m};
  n.op = "linear_rows";
  n.value.assign(static_cast<size_t>(t) * m, 0.0);
  for (int r = 0; r < t; ++r) {
    const double* xr = &x.value()[static_cast<size_t>(r) * nn];
    double* yr = &n.value[static_cast<size_t>(r) * m];
    for (int i = 0; i < m; ++i) {
      double s = b.value()[static_cast<size_t>(i)];
      const double* wr = &w.value()[static_cast<size_t>(i) * nn];
      for (int j = 0; j < nn; ++j) s += wr[j] * xr[j];
      yr[i] = s;
    }
  }
  n.grad.assign(n.value.size(), 0.0);
  Node *nx = x.node(), *nw = w.node(), *nb = b.node();
  n.backward = [nx, nw, nb, t, nn, m](Node& self) {
    for (int r = 0; r < t; ++r) {
      const double* gr = &self.grad[static_cast<size_t>(r) * m];
      const double* xr = &nx->value[static_cast<size_t>(r) * nn];
      double* gxr = &nx->grad[static_cast<size_t>(r) * nn];
      for (int i = 0; i < m; ++i) {
        double go = gr[i];
        if (go == 0.0) continue;
        nb->grad[static_cast<size_t>(i)] += go;
        double* gw = &nw->grad[static_cast<size_t>(i) * nn];
        const double* wr = &nw->value[static_cast<size_t>(i) * nn];
        for (int j = 0; j < nn; ++j) {
          gw[j] += go * xr[j];
          gxr[j] += go * wr[j];
        }
      }
    }
  };
  g.check_finite(n);
  return Var(&g, &n);
}

// Valid 1-D convolution over the rows of X (T x c_in) with kernel
// W (c_out x k*c_in): output row i is W . vec(X[i..i+k-1]) + b, giving
// T-k+1 output rows.
inline Var conv1d(const Var& x, const Var& w, const Var& b, int k) {
  Graph& g = *x.graph();
  if (x.shape().size() != 2 || w.shape().size() != 2 || b.shape().size() != 1)
    fail("conv1d: expected matrix input, matrix kernel, vector bias");
  int t = x.shape()[0], cin = x.shape()[1], cout = w.shape()[0];
  if (k < 1 || w.shape()[1] != k * cin || b.shape()[0] != cout)
    fail(strprintf("conv1d: incompatible shapes X%s W%s b%s k=%d", shape_str(x.shape()).c_str(),
                   shape_str(w.shape()).c_str(), shape_str(b.shape()).c_str(), k));
  if (t < k) fail(strprintf("conv1d: sequence length %d shorter than kernel %d", t, k));
  int m = t - k + 1;
  Node& n = g.new_node();
  n.shape = {m, cout};
  n.op = "conv1d";
  n.value.assign(static_cast<size_t>(m) * cout, 0.0);
  int win = k * cin;
  for (int i = 0; i < m; ++i) {
    const double* xw = &x.value()[static_cast<size_t>(i) * cin];  // contiguous k rows
    double* yr = &n.value[static_cast<size_t>(i) * cout];
    for (int o = 0; o < cout; ++o) {
      double s = b.value()[static_cast<size_t>(o)];
      const double* wr = &w.value()[static_cast<size_t>(o) * win];
      for (int j = 0; j < win; ++j) s += wr[j] * xw[j];
      yr[o] = s;
    }
  }
  n.grad.assign(n.value.size(), 0.0);
  Node *nx = x.node(), *nw = w.node(), *nb = b.node();
  n.backward = [nx, nw, nb, m, cout, cin, win](Node& self) {
    for (int i = 0; i < m; ++i) {
      const double* gr = &self.grad[static_cast<size_t>(i) * cout];
      const double* xw = &nx->value[static_cast<size_t>(i) * cin];
      double* gxw = &nx->grad[static_cast<size_t>(i) * cin];
      for (int o = 0; o < cout; ++o) {
        double go = gr[o];
        if (go == 0.0) continue;
        nb->grad[static_cast<size_t>(o)] += go;
        double* gw = &nw->grad[static_cast<size_t>(o) * win];
        const double* wr = &nw->value[static_cast<size_t>(o) * win];
        for (int j = 0; j < win; ++j) {
          gw[j] += go * xw[j];
          gxw[j] += go * wr[j];
        }
      }
    }
  };
  g.check_finite(n);
  return Var(&g, &n);
}

inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) fail("concat: no inputs");
  Graph& g = *parts[0].graph();
  size_t total = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 1) fail("concat: inputs must be vectors");
    total += p.size();
  }
  Node& n = g.new_node();
  n.shape = {static_cast<int>(total)};
  n.op = "concat";
  n.value.reserve(total);
  for (const auto& p : parts) n.value.insert(n.value.end(), p.value().begin(), p.value().end());
  n.grad.assign(total, 0.0);
  std::vector<Node*> ins;
  for (const auto& p : parts) ins.push_back(p.node());
  n.backward = [ins](Node& self) {
    size_t off = 0;
    for (Node* in : ins) {
      for (size_t i = 0; i < in->value.size(); ++i) in->grad[i] += self.grad[off + i];
      off += in->value.size();
    }
  };
  g.check_finite(n);
  return Var(&g, &n);
}

// Column-wise concatenation of matrices with a common row count.
inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) fail("concat_cols: no inputs");
  Graph& g = *parts[0].graph();
  int t = parts[0].shape()[0];
  int total_c = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.shape()[0] != t)
      fail(strprintf("concat_cols: shape %s does not share row count %d",
                     shape_str(p.shape()).c_str(), t));
    total_c += p.shape()[1];
  }
  Node& n = g.new_node();
  n.shape = {t, total_c};
  n.op = "concat_cols";
  n.value.assign(static_cast<size_t>(t) * total_c, 0.0);
  int off = 0;
  for (const auto& p : parts) {
    int c = p.shape()[1];
    for (int r = 0; r < t; ++r)
      for (int j = 0; j < c; ++j)
        n.value[static_cast<size_t>(r) * total_c + off + j] =
            p.value()[static_cast<size_t>(r) * c + j];
    off += c;
  }
  n.grad.assign(n.value.size(), 0.0);
  std::vector<Node*> ins;
  std::vector<int> widths;
  for (const auto& p : parts) {
    ins.push_back(p.node());
    widths.push_back(p.shape()[1]);
  }
  n.backward = [ins, widths, t, total_c](Node& self) {
    int off2 = 0;
    for (size_t pi = 0; pi < ins.size(); ++pi) {
      int c = widths[pi];
      for (int r = 0; r < t; ++r)
        for (int j = 0; j < c; ++j)
          ins[pi]->grad[static_cast<size_t>(r) * c + j] +=
              self.grad[static_cast<size_t>(r) * total_c + off2 + j];
      off2 += c;
    }
  };
  g.check_finite(n);
  return Var(&g, &n);
}

inline Var row(const Var& x, int r) {
  Graph& g = *x.graph();
  if (x.shape().size() != 2 || r < 0 || r >= x.shape()[0])
    fail(strprintf("row: index %d out of range for shape %s", r, shape_str(x.shape()).c_str()));
  int c = x.shape()[1];
  Node& n = g.new_node();
  n.shape = {c};
  n.op = "row";
  n.value.assign(x.value().begin() + static_cast<size_t>(r) * c,
                 x.value().begin() + static_cast<size_t>(r + 1) * c);
  n.grad.assign(n.value.size(), 0.0);
  Node* nx = x.node();
  n.backward = [nx, r, c](Node& self) {
    for (int j = 0; j < c; ++j) nx->grad[static_cast<size_t>(r) * c + j] += self.grad[static_cast<size_t>(j)];
  };
  g.check_finite(n);
  return Var(&g, &n);
}

inline Var slice(const Var& x, int offset, int len) {
  Graph& g = *x.graph();
  if (x.shape().size() != 1 || offset < 0 || len < 0 || offset + len > x.shape()[0])
    fail(strprintf("slice: [%d,%d) out of range for shape %s", offset, offset + len,
                   shape_str(x.shape()).c_str()));
  Node& n = g.new_node();
  n.shape = {len};
  n.op = "slice";
  n.value.assign(x.value().begin() + offset, x.value().begin() + offset + len);
  n.grad.assign(n.value.size(), 0.0);
  Node* nx = x.node();
  n.backward = [nx, offset, len](Node& self) {
    for (int j = 0; j < len; ++j) nx->grad[static_cast<size_t>(offset + j)] += self.grad[static_cast<size_t>(j)];
  };
  g.check_finite(n);
  return Var(&g, &n);
}

inline Var stack(const std::vector<Var>& scalars) {
  if (scalars.empty()) fail("stack: no inputs");
  Graph& g = *scalars[0].graph();
  Node& n = g.new_node();
  n.shape = {static_cast<int>(scalars.size())};
  n.op = "stack";
  for (const auto& s : scalars) {
    if (s.size() != 1) fail("stack: inputs must be scalars");
    n.value.push_back(s.value()[0]);
  }
  n.grad.assign(n.value.size(), 0.0);
  std::vector<Node*> ins;
  for (const auto& s : scalars) ins.push_back(s.node());
  n.backward = [ins](Node& self) {
    for (size_t i = 0; i < ins.size(); ++i) ins[i]->grad[0] += self.grad[i];
  };
  g.check_finite(n);
  return Var(&g, &n);
}

inline Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) fail("stack_rows: no inputs");
  Graph& g = *rows[0].graph();
  int c = rows[0].shape()[0];
  for (const auto& r : rows)
    if (r.shape().size() != 1 || r.shape()[0] != c) fail("stack_rows: rows must share length");
  int t = static_cast<int>(rows.size());
  Node& n = g.new_node();
  n.shape = {t, c};
  n.op = "stack_rows";
  n.value.reserve(static_cast<size_t>(t) * c);
  for (const auto& r : rows) n.value.insert(n.value.end(), r.value().begin(), r.value().end());
  n.grad.assign(n.value.size(), 0.0);
  std::vector<Node*> ins;
  for (const auto& r : rows) ins.push_back(r.node());
  n.backward = [ins, c](Node& self) {
    for (size_t i = 0; i < ins.size(); ++i)
      for (int j = 0; j < c; ++j) ins[i]->grad[static_cast<size_t>(j)] += self.grad[i * c + static_cast<size_t>(j)];
  };
  g.check_finite(n);
  return Var(&g, &n);
}

inline Var broadcast_rows(const Var& v, int t) {
  Graph& g = *v.graph();
  if (v.shape().size() != 1 || t < 1) fail("broadcast_rows: need vector input and t >= 1");
  int c = v.shape()[0];
  Node& n = g.new_node();
  n.shape = {t, c};
  n.op = "broadcast_rows";
  n.value.reserve(static_cast<size_t>(t) * c);
  for (int r = 0; r < t; ++r) n.value.insert(n.value.end(), v.value().begin(), v.value().end());
  n.grad.assign(n.value.size(), 0.0);
  Node* nv = v.node();
  n.backward = [nv, t, c](Node& self) {
    for (int r = 0; r < t; ++r)
      for (int j = 0; j < c; ++j) nv->grad[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(r) * c + j];
  };
  g.check_finite(n);
  return Var(&g, &n);
}

// y_t = X_t . w for X (T x n), w (n) -> (T)
inline Var matvec_rows(const Var& x, const Var& w) {
  Graph& g = *x.graph();
  if (x.shape().size() != 2 || w.shape().size() != 1 || x.shape()[1] != w.shape()[0])
    fail(strprintf("matvec_rows: incompatible shapes X%s w%s", shape_str(x.shape()).c_str(),
                   shape_str(w.shape()).c_str()));
  int t = x.shape()[0], c = x.shape()[1];
  Node& n = g.new_node();
  n.shape = {t};
  n.op = "matvec_rows";
  n.value.assign(static_cast<size_t>(t), 0.0);
  for (int r = 0; r < t; ++r) {
    double s = 0.0;
    const double* xr = &x.value()[static_cast<size_t>(r) * c];
    for (int j = 0; j < c; ++j) s += xr[j] * w.value()[static_cast<size_t>(j)];
    n.value[static_cast<size_t>(r)] = s;
  }
  n.grad.assign(n.value.size(), 0.0);
  Node *nx = x.node(), *nw = w.node();
  n.backward = [nx, nw, t, c](Node& self) {
    for (int r = 0; r < t; ++r) {
      double go = self.grad[static_cast<size_t>(r)];
      if (go == 0.0) continue;
      const double* xr = &nx->value[static_cast<size_t>(r) * c];
      double* gxr = &nx->grad[static_cast<size_t>(r) * c];
      for (int j = 0; j < c; ++j) {
        gxr[j] += go * nw->value[static_cast<size_t>(j)];
        nw->grad[static_cast<size_t>(j)] += go * xr[j];
      }
    }
  };
  g.check_finite(n);
  return Var(&g, &n);
}

// y = sum_t w_t X_t for X (T x n), w (T) -> (n)
inline Var weighted_rows_sum(const Var& x, const Var& w) {
  Graph& g = *x.graph();
  if (x.shape().size() != 2 || w.shape().size() != 1 || x.shape()[0] != w.shape()[0])
    fail(strprintf("weighted_rows_sum: incompatible shapes X%s w%s", shape_str(x.shape()).c_str(),
                   shape_str(w.shape()).c_str()));
  int t = x.shape()[0], c = x.shape()[1];
  Node& n = g.new_node();
  n.shape = {c};
  n.op = "weighted_rows_sum";
  n.value.assign(static_cast<size_t>(c), 0.0);
  for (int r = 0; r < t; ++r) {
    double wr = w.value()[static_cast<size_t>(r)];
    const double* xr = &x.value()[static_cast<size_t>(r) * c];
    for (int j = 0; j < c; ++j) n.value[static_cast<size_t>(j)] += wr * xr[j];
  }
  n.grad.assign(n.value.size(), 0.0);
  Node *nx = x.node(), *nw = w.node();
  n.backward = [nx, nw, t, c](Node& self) {
    for (int r = 0; r < t; ++r) {
      double wr = nw->value[static_cast<size_t>(r)];
      const double* xr = &nx->value[static_cast<size_t>(r) * c];
      double* gxr = &nx->grad[static_cast<size_t>(r) * c];
      double acc = 0.0;
      for (int j = 0; j < c; ++j) {
        gxr[j] += wr * self.grad[static_cast<size_t>(j)];
        acc += self.grad[static_cast<size_t>(j)] * xr[j];
      }
      nw->grad[static_cast<size_t>(r)] += acc;
    }
  };
  g.check_finite(n);
  return Var(&g, &n);
}

// y_i = v_i + s for a scalar Var s (a learnable bias shared across entries)
inline Var add_scalar(const Var& v, const Var& s) {
  Graph& g = *v.graph();
  if (s.size() != 1) fail("add_scalar: second argument must be scalar, got shape " + shape_str(s.shape()));
  Node& n = g.new_node();
  n.shape = v.shape();
  n.op = "add_scalar";
  n.value.resize(v.size());
  double sv = s.value()[0];
  for (size_t i = 0; i < v.size(); ++i) n.value[i] = v.value()[i] + sv;
  n.grad.assign(n.value.size(), 0.0);
  Node *nv = v.node(), *ns = s.node();
  n.backward = [nv, ns](Node& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      nv->grad[i] += self.grad[i];
      ns->grad[0] += self.grad[i];
    }
  };
  g.check_finite(n);
  return Var(&g, &n);
}

inline Var softmax(const Var& v) {
  Graph& g = *v.graph();
  if (v.shape().size() != 1 || v.size() == 0) fail("softmax: need a non-empty vector");
  Node& n = g.new_node();
  n.shape = v.shape();
  n.op = "softmax";
  double mx = v.value()[0];
  for (double x : v.value()) mx = std::max(mx, x);
  double z = 0.0;
  n.value.resize(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    n.value[i] = std::exp(v.value()[i] - mx);
    z += n.value[i];
  }
  for (double& y : n.value) y /= z;
  n.grad.assign(n.value.size(), 0.0);
  Node* nv = v.node();
  n.backward = [nv](Node& self) {
    double gy = 0.0;
    for (size_t i = 0; i < self.grad.size(); ++i) gy += self.grad[i] * self.value[i];
    for (size_t i = 0; i < self.grad.size(); ++i)
      nv->grad[i] += self.value[i] * (self.grad[i] - gy);
  };
  g.check_finite(n);
  return Var(&g, &n);
}

// ---------------------------------------------------------------------------
// Composite cells

struct LstmWeights {
  Var wx;  // (4H x d)   gate order: input, forget, cell, output
  Var wh;  // (4H x H)
  Var b;   // (4H)
};

struct LstmState {
  Var h;
  Var c;
};

// Standard four-gate LSTM cell built from primitive ops.
inline LstmState lstm_step(const Var& x, const LstmState& state, const LstmWeights& w) {
  int hidden = state.h.shape()[0];
  Var zero_b = state.h.graph()->leaf({4 * hidden}, std::vector<double>(static_cast<size_t>(4 * hidden), 0.0));
  Var gates = add(affine(x, w.wx, w.b), affine(state.h, w.wh, zero_b));
  Var i = sigmoid_(slice(gates, 0, hidden));
  Var f = sigmoid_(slice(gates, hidden, hidden));
  Var gc = tanh_(slice(gates, 2 * hidden, hidden));
  Var o = sigmoid_(slice(gates, 3 * hidden, hidden));
  Var c_next = add(mul(f, state.c), mul(i, gc));
  Var h_next = mul(o, tanh_(c_next));
  return {h_next, c_next};
}

struct AttentionWeights {
  Var w1;  // (s x (h + a))
  Var b1;  // (s)
  Var w2;  // (s)
};

// Attention pooling: weights are the normalized exponential of a learned
// score of (h_t, attr); the output is the weighted sum of the h rows.
inline Var attention_pool(const Var& h_seq, const Var& attr, const AttentionWeights& w) {
  if (h_seq.shape().size() != 2 || h_seq.shape()[0] < 1)
    fail("attention_pool: empty sequence");
  int t = h_seq.shape()[0];
  Var m = concat_cols({h_seq, broadcast_rows(attr, t)});
  Var scores = matvec_rows(tanh_(linear_rows(m, w.w1, w.b1)), w.w2);
  Var alpha = softmax(scores);
  return weighted_rows_sum(h_seq, alpha);
}

// ---------------------------------------------------------------------------
// Parameters and the optimizer

class ParamStore {
public:
  Parameter& create(const std::string& name, std::vector<int> shape) {
    if (params_.count(name)) fail("duplicate parameter name: " + name);
    Parameter& p = params_[name];
    p.name = name;
    p.shape = std::move(shape);
    p.value.assign(numel(p.shape), 0.0);
    p.grad.assign(p.value.size(), 0.0);
    return p;
  }

  Parameter& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) fail("unknown parameter: " + name);
    return it->second;
  }

  const Parameter& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) fail("unknown parameter: " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  void zero_grads() {
    for (auto& [_, p] : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }

  void scale_grads(double c) {
    for (auto& [_, p] : params_)
      for (double& g : p.grad) g *= c;
  }

  // deterministic (name-sorted) iteration
  std::map<std::string, Parameter>& all() { return params_; }
  const std::map<std::string, Parameter>& all() const { return params_; }

  size_t total_size() const {
    size_t n = 0;
    for (const auto& [_, p] : params_) n += p.size();
    return n;
  }

private:
  std::map<std::string, Parameter> params_;
};

struct AdamConfig {
  double step = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore& params) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params.all()) {
      Moments& m = moments_[name];
      if (m.m.empty()) {
        m.m.assign(p.size(), 0.0);
        m.v.assign(p.size(), 0.0);
      }
      for (size_t i = 0; i < p.size(); ++i) {
        double g = p.grad[i];
        m.m[i] = cfg_.beta1 * m.m[i] + (1.0 - cfg_.beta1) * g;
        m.v[i] = cfg_.beta2 * m.v[i] + (1.0 - cfg_.beta2) * g * g;
        double mh = m.m[i] / bc1;
        double vh = m.v[i] / bc2;
        p.value[i] -= cfg_.step * mh / (std::sqrt(vh) + cfg_.epsilon);
      }
    }
  }

private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamConfig cfg_;
  std::map<std::string, Moments> moments_;
  long long t_ = 0;
};

// Xavier-uniform weight initialization; biases stay zero.
inline void init_xavier(Parameter& p, Rng& rng, int fan_in, int fan_out) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : p.value) v = rng.uniform(-bound, bound);
}

inline void init_uniform(Parameter& p, Rng& rng, double bound) {
  for (double& v : p.value) v = rng.uniform(-bound, bound);
}

// ---------------------------------------------------------------------------
// Named-tensor container (checkpoint payload)
//
// Layout: "TTET" magic, version byte, u32 tensor count, then per tensor:
// u16 name length, name bytes, u8 ndim, u32 dims, f64 little-endian data.

namespace detail {

inline void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class ByteReader {
public:
  ByteReader(const std::string& data, size_t pos = 0) : data_(data), pos_(pos) {}

  uint8_t u8() { return static_cast<uint8_t>(byte()); }

  uint16_t u16() {
    uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<uint16_t>(static_cast<uint8_t>(byte())) << (8 * i);
    return v;
  }

  uint32_t u32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(byte())) << (8 * i);
    return v;
  }

  double f64() {
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(static_cast<uint8_t>(byte())) << (8 * i);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }

  std::string bytes(size_t n) {
    if (pos_ + n > data_.size()) fail("tensor container: truncated");
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  size_t pos() const { return pos_; }

private:
  char byte() {
    if (pos_ >= data_.size()) fail("tensor container: truncated");
    return data_[pos_++];
  }
  const std::string& data_;
  size_t pos_;
};

}  // namespace detail

inline std::string serialize_params(const ParamStore& params) {
  std::string out = "TTET";
  out.push_back(1);  // version
  detail::put_u32(out, static_cast<uint32_t>(params.all().size()));
  for (const auto& [name, p] : params.all()) {
    detail::put_u16(out, static_cast<uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(p.shape.size()));
    for (int d : p.shape) detail::put_u32(out, static_cast<uint32_t>(d));
    for (double v : p.value) detail::put_f64(out, v);
  }
  return out;
}

inline ParamStore deserialize_params(const std::string& data, size_t offset = 0) {
  detail::ByteReader r(data, offset);
  if (r.bytes(4) != "TTET") fail("tensor container: bad magic");
  if (r.u8() != 1) fail("tensor container: unsupported version");
  uint32_t count = r.u32();
  ParamStore store;
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t name_len = r.u16();
    std::string name = r.bytes(name_len);
    uint8_t ndim = r.u8();
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    Parameter& p = store.create(name, shape);
    for (double& v : p.value) v = r.f64();
  }
  return store;
}

}  // namespace tte::ad
