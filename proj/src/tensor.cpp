#include "odpfl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace odpfl {

namespace {

size_t shape_count(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimension must be positive");
    n *= static_cast<size_t>(d);
  }
  return n;
}

[[noreturn]] void dim_error(const std::string& op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + a.shape_str() + " and " +
                              b.shape_str());
}

void require_matrix(const std::string& op, const Tensor& t) {
  if (t.rank() != 2)
    throw std::invalid_argument(op + ": expected a rank-2 tensor, got " + t.shape_str());
}

// raw matrix products; inner accumulation runs in ascending index order
Tensor mm(const Tensor& a, const Tensor& b) {
  int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double av = a.at(i, p);
      const double* brow = &b.v[static_cast<size_t>(p) * n];
      double* orow = &out.v[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  return out;
}

// a * b^T
Tensor mm_nt(const Tensor& a, const Tensor& b) {
  int m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a.at(i, p) * b.at(j, p);
      out.at(i, j) = acc;
    }
  return out;
}

// a^T * b
Tensor mm_tn(const Tensor& a, const Tensor& b) {
  int m = a.cols(), k = a.rows(), n = b.cols();
  Tensor out = Tensor::zeros({m, n});
  for (int p = 0; p < k; ++p)
    for (int i = 0; i < m; ++i) {
      double av = a.at(p, i);
      const double* brow = &b.v[static_cast<size_t>(p) * n];
      double* orow = &out.v[static_cast<size_t>(i) * n];
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  return out;
}

int ensure_node(Tape& tape, const Tensor& t) {
  if (t.node >= 0) return t.node;
  Tensor copy = t;
  return tape.leaf(copy).node;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape_in, std::vector<double> values)
    : shape(std::move(shape_in)), v(std::move(values)) {
  if (shape_count(shape) != v.size())
    throw std::invalid_argument("tensor shape " + shape_str() + " does not match value count " +
                                std::to_string(v.size()));
}

Tensor Tensor::zeros(std::vector<int> shape_in) {
  size_t n = shape_count(shape_in);
  return Tensor(std::move(shape_in), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<int> shape_in, double value) {
  size_t n = shape_count(shape_in);
  return Tensor(std::move(shape_in), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? " x " : "") << shape[i];
  os << "]";
  return os.str();
}

bool Tensor::all_finite() const {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

// ---- Tape ----

Tensor Tape::leaf(const Tensor& t) {
  Tensor out = t;
  out.node = record(Node{"leaf", {}, nullptr, nullptr}, out);
  return out;
}

int Tape::record(Node node, Tensor value) {
  int id = static_cast<int>(nodes_.size());
  value.node = id;
  nodes_.push_back(std::move(node));
  values_.push_back(std::move(value));
  return id;
}

const Tensor& Tape::value(int node) const {
  if (node < 0 || node >= n_nodes())
    throw std::out_of_range("tape: unknown node id " + std::to_string(node));
  return values_[static_cast<size_t>(node)];
}

bool Tape::replay_matches() const {
  std::vector<Tensor> vals(values_.size());
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].forward) {
      vals[i] = values_[i];
      continue;
    }
    std::vector<Tensor> ins;
    ins.reserve(nodes_[i].inputs.size());
    for (int in : nodes_[i].inputs) vals[static_cast<size_t>(in)].node = in, ins.push_back(vals[static_cast<size_t>(in)]);
    vals[i] = nodes_[i].forward(ins);
    if (vals[i].shape != values_[i].shape) return false;
    if (std::memcmp(vals[i].v.data(), values_[i].v.data(), vals[i].size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

std::vector<Tensor> Tape::backward(const std::vector<AdjointSeed>& seeds) const {
  std::vector<Tensor> adj(values_.size());
  for (const AdjointSeed& s : seeds) {
    const Tensor& target = value(s.node);
    if (s.cotangent.shape != target.shape)
      throw std::invalid_argument("adjoint seed shape " + s.cotangent.shape_str() +
                                  " does not match target shape " + target.shape_str());
    Tensor& a = adj[static_cast<size_t>(s.node)];
    if (a.size() == 0) {
      a = s.cotangent;
    } else {
      for (size_t i = 0; i < a.size(); ++i) a.v[i] += s.cotangent.v[i];
    }
  }
  for (int id = n_nodes() - 1; id >= 0; --id) {
    const Node& node = nodes_[static_cast<size_t>(id)];
    Tensor& cot = adj[static_cast<size_t>(id)];
    if (cot.size() == 0 || !node.backward) continue;
    std::vector<Tensor> ins;
    ins.reserve(node.inputs.size());
    for (int in : node.inputs) ins.push_back(values_[static_cast<size_t>(in)]);
    std::vector<Tensor> grads = node.backward(ins, values_[static_cast<size_t>(id)], cot);
    for (size_t k = 0; k < node.inputs.size(); ++k) {
      if (grads[k].size() == 0) continue;
      Tensor& a = adj[static_cast<size_t>(node.inputs[k])];
      if (a.size() == 0) {
        a = std::move(grads[k]);
      } else {
        for (size_t i = 0; i < a.size(); ++i) a.v[i] += grads[k].v[i];
      }
    }
  }
  for (auto& t : adj) t.node = -1;
  return adj;
}

std::vector<Tensor> Tape::backward(const AdjointSeed& seed) const {
  return backward(std::vector<AdjointSeed>{seed});
}

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  if (a.cols() != b.rows()) dim_error("matmul", a, b);
  Tensor out = mm(a, b);
  if (!tape) return out;
  int ia = ensure_node(*tape, a), ib = ensure_node(*tape, b);
  out.node = tape->record(
      Tape::Node{"matmul",
                 {ia, ib},
                 [](const std::vector<Tensor>& ins) { return mm(ins[0], ins[1]); },
                 [](const std::vector<Tensor>& ins, const Tensor&, const Tensor& cot) {
                   return std::vector<Tensor>{mm_nt(cot, ins[1]), mm_tn(ins[0], cot)};
                 }},
      out);
  return out;
}

namespace {

Tensor ew_forward(const std::string& op, const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out.node = -1;
  if (op == "add")
    for (size_t i = 0; i < out.size(); ++i) out.v[i] = a.v[i] + b.v[i];
  else if (op == "sub")
    for (size_t i = 0; i < out.size(); ++i) out.v[i] = a.v[i] - b.v[i];
  else
    for (size_t i = 0; i < out.size(); ++i) out.v[i] = a.v[i] * b.v[i];
  return out;
}

Tensor ew_record(const std::string& op, const Tensor& a, const Tensor& b, Tape* tape) {
  if (!a.same_shape(b)) dim_error(op, a, b);
  Tensor out = ew_forward(op, a, b);
  if (!tape) return out;
  int ia = ensure_node(*tape, a), ib = ensure_node(*tape, b);
  std::string opn = op;
  out.node = tape->record(
      Tape::Node{op,
                 {ia, ib},
                 [opn](const std::vector<Tensor>& ins) { return ew_forward(opn, ins[0], ins[1]); },
                 [opn](const std::vector<Tensor>& ins, const Tensor&, const Tensor& cot) {
                   std::vector<Tensor> g(2);
                   if (opn == "add") {
                     g[0] = cot;
                     g[1] = cot;
                   } else if (opn == "sub") {
                     g[0] = cot;
                     g[1] = cot;
                     for (auto& x : g[1].v) x = -x;
                   } else {
                     g[0] = cot;
                     g[1] = cot;
                     for (size_t i = 0; i < cot.size(); ++i) {
                       g[0].v[i] = cot.v[i] * ins[1].v[i];
                       g[1].v[i] = cot.v[i] * ins[0].v[i];
                     }
                   }
                   return g;
                 }},
      out);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) { return ew_record("add", a, b, tape); }
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) { return ew_record("sub", a, b, tape); }
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape) { return ew_record("mul", a, b, tape); }

Tensor relu(const Tensor& a, Tape* tape) {
  Tensor out = a;
  out.node = -1;
  for (auto& x : out.v) x = x > 0.0 ? x : 0.0;
  if (!tape) return out;
  int ia = ensure_node(*tape, a);
  out.node = tape->record(
      Tape::Node{"relu",
                 {ia},
                 [](const std::vector<Tensor>& ins) {
                   Tensor o = ins[0];
                   o.node = -1;
                   for (auto& x : o.v) x = x > 0.0 ? x : 0.0;
                   return o;
                 },
                 [](const std::vector<Tensor>& ins, const Tensor&, const Tensor& cot) {
                   Tensor g = cot;
                   for (size_t i = 0; i < g.size(); ++i)
                     if (ins[0].v[i] <= 0.0) g.v[i] = 0.0;
                   return std::vector<Tensor>{g};
                 }},
      out);
  return out;
}

Tensor scale(const Tensor& a, double c, Tape* tape) {
  Tensor out = a;
  out.node = -1;
  for (auto& x : out.v) x *= c;
  if (!tape) return out;
  int ia = ensure_node(*tape, a);
  out.node = tape->record(
      Tape::Node{"scale",
                 {ia},
                 [c](const std::vector<Tensor>& ins) {
                   Tensor o = ins[0];
                   o.node = -1;
                   for (auto& x : o.v) x *= c;
                   return o;
                 },
                 [c](const std::vector<Tensor>&, const Tensor&, const Tensor& cot) {
                   Tensor g = cot;
                   for (auto& x : g.v) x *= c;
                   return std::vector<Tensor>{g};
                 }},
      out);
  return out;
}

namespace {

Tensor add_bias_forward(const Tensor& x, const Tensor& b) {
  Tensor out = x;
  out.node = -1;
  int m = x.rows(), n = x.cols();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) += b.v[static_cast<size_t>(j)];
  return out;
}

}  // namespace

Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape) {
  require_matrix("add_bias", x);
  if (bias.rank() != 1 || bias.shape[0] != x.cols()) dim_error("add_bias", x, bias);
  Tensor out = add_bias_forward(x, bias);
  if (!tape) return out;
  int ix = ensure_node(*tape, x), ib = ensure_node(*tape, bias);
  out.node = tape->record(
      Tape::Node{"add_bias",
                 {ix, ib},
                 [](const std::vector<Tensor>& ins) { return add_bias_forward(ins[0], ins[1]); },
                 [](const std::vector<Tensor>& ins, const Tensor&, const Tensor& cot) {
                   int m = ins[0].rows(), n = ins[0].cols();
                   Tensor gb = Tensor::zeros({n});
                   for (int i = 0; i < m; ++i)
                     for (int j = 0; j < n; ++j) gb.v[static_cast<size_t>(j)] += cot.at(i, j);
                   return std::vector<Tensor>{cot, gb};
                 }},
      out);
  return out;
}

namespace {

Tensor pool_forward(const Tensor& x, PoolKind kind) {
  int m = x.rows(), d = x.cols();
  Tensor out = Tensor::zeros({d});
  if (kind == PoolKind::kMean) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < d; ++j) out.v[static_cast<size_t>(j)] += x.at(i, j);
    for (auto& v : out.v) v /= m;
  } else {
    for (int j = 0; j < d; ++j) {
      double best = x.at(0, j);
      for (int i = 1; i < m; ++i) best = std::max(best, x.at(i, j));
      out.v[static_cast<size_t>(j)] = best;
    }
  }
  return out;
}

}  // namespace

Tensor set_pool(const Tensor& x, PoolKind kind, Tape* tape) {
  require_matrix("set_pool", x);
  if (x.rows() < 1) throw std::invalid_argument("set_pool: empty client dataset");
  Tensor out = pool_forward(x, kind);
  if (!tape) return out;
  int ix = ensure_node(*tape, x);
  out.node = tape->record(
      Tape::Node{kind == PoolKind::kMean ? "set_pool_mean" : "set_pool_max",
                 {ix},
                 [kind](const std::vector<Tensor>& ins) { return pool_forward(ins[0], kind); },
                 [kind](const std::vector<Tensor>& ins, const Tensor&, const Tensor& cot) {
                   const Tensor& xin = ins[0];
                   int m = xin.rows(), d = xin.cols();
                   Tensor g = Tensor::zeros({m, d});
                   if (kind == PoolKind::kMean) {
                     for (int i = 0; i < m; ++i)
                       for (int j = 0; j < d; ++j) g.at(i, j) = cot.v[static_cast<size_t>(j)] / m;
                   } else {
                     for (int j = 0; j < d; ++j) {
                       int arg = 0;
                       double best = xin.at(0, j);
                       for (int i = 1; i < m; ++i)
                         if (xin.at(i, j) > best) best = xin.at(i, j), arg = i;
                       g.at(arg, j) = cot.v[static_cast<size_t>(j)];
                     }
                   }
                   return std::vector<Tensor>{g};
                 }},
      out);
  return out;
}

namespace {

Tensor sce_forward(const Tensor& logits, const std::vector<int>& labels) {
  int m = logits.rows(), c = logits.cols();
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    double hi = logits.at(i, 0);
    for (int j = 1; j < c; ++j) hi = std::max(hi, logits.at(i, j));
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(logits.at(i, j) - hi);
    total += hi + std::log(z) - logits.at(i, labels[static_cast<size_t>(i)]);
  }
  return Tensor::scalar(total / m);
}

}  // namespace

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tape* tape) {
  require_matrix("softmax_cross_entropy", logits);
  if (static_cast<int>(labels.size()) != logits.rows())
    throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(logits.rows()) + " rows");
  for (int y : labels)
    if (y < 0 || y >= logits.cols())
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(y) +
                              " outside [0, " + std::to_string(logits.cols()) + ")");
  Tensor out = sce_forward(logits, labels);
  if (!tape) return out;
  int il = ensure_node(*tape, logits);
  std::vector<int> labs = labels;
  out.node = tape->record(
      Tape::Node{"softmax_cross_entropy",
                 {il},
                 [labs](const std::vector<Tensor>& ins) { return sce_forward(ins[0], labs); },
                 [labs](const std::vector<Tensor>& ins, const Tensor&, const Tensor& cot) {
                   const Tensor& lg = ins[0];
                   int m = lg.rows(), c = lg.cols();
                   Tensor g = Tensor::zeros({m, c});
                   double s = cot.v[0] / m;
                   for (int i = 0; i < m; ++i) {
                     double hi = lg.at(i, 0);
                     for (int j = 1; j < c; ++j) hi = std::max(hi, lg.at(i, j));
                     double z = 0.0;
                     for (int j = 0; j < c; ++j) z += std::exp(lg.at(i, j) - hi);
                     for (int j = 0; j < c; ++j) {
                       double p = std::exp(lg.at(i, j) - hi) / z;
                       g.at(i, j) = s * (p - (labs[static_cast<size_t>(i)] == j ? 1.0 : 0.0));
                     }
                   }
                   return std::vector<Tensor>{g};
                 }},
      out);
  return out;
}

namespace {

constexpr double kNormFloor = 1e-30;

Tensor row_normalize_forward(const Tensor& x) {
  Tensor out = x;
  out.node = -1;
  int m = x.rows(), d = x.cols();
  for (int i = 0; i < m; ++i) {
    double n2 = 0.0;
    for (int j = 0; j < d; ++j) n2 += x.at(i, j) * x.at(i, j);
    double n = std::max(std::sqrt(n2), kNormFloor);
    for (int j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) / n;
  }
  return out;
}

}  // namespace

Tensor row_normalize(const Tensor& x, Tape* tape) {
  require_matrix("row_normalize", x);
  Tensor out = row_normalize_forward(x);
  if (!tape) return out;
  int ix = ensure_node(*tape, x);
  out.node = tape->record(
      Tape::Node{"row_normalize",
                 {ix},
                 [](const std::vector<Tensor>& ins) { return row_normalize_forward(ins[0]); },
                 [](const std::vector<Tensor>& ins, const Tensor& outv, const Tensor& cot) {
                   const Tensor& xin = ins[0];
                   int m = xin.rows(), d = xin.cols();
                   Tensor g = Tensor::zeros({m, d});
                   for (int i = 0; i < m; ++i) {
                     double n2 = 0.0;
                     for (int j = 0; j < d; ++j) n2 += xin.at(i, j) * xin.at(i, j);
                     double n = std::max(std::sqrt(n2), kNormFloor);
                     double dot = 0.0;
                     for (int j = 0; j < d; ++j) dot += outv.at(i, j) * cot.at(i, j);
                     for (int j = 0; j < d; ++j)
                       g.at(i, j) = (cot.at(i, j) - dot * outv.at(i, j)) / n;
                   }
                   return std::vector<Tensor>{g};
                 }},
      out);
  return out;
}

Tensor slice_cols(const Tensor& x, int c0, int c1, Tape* tape) {
  require_matrix("slice_cols", x);
  if (c0 < 0 || c1 > x.cols() || c0 >= c1)
    throw std::invalid_argument("slice_cols: range [" + std::to_string(c0) + ", " +
                                std::to_string(c1) + ") invalid for " + x.shape_str());
  auto fwd = [c0, c1](const Tensor& xin) {
    int m = xin.rows();
    Tensor out = Tensor::zeros({m, c1 - c0});
    for (int i = 0; i < m; ++i)
      for (int j = c0; j < c1; ++j) out.at(i, j - c0) = xin.at(i, j);
    return out;
  };
  Tensor out = fwd(x);
  if (!tape) return out;
  int ix = ensure_node(*tape, x);
  out.node = tape->record(
      Tape::Node{"slice_cols",
                 {ix},
                 [fwd](const std::vector<Tensor>& ins) { return fwd(ins[0]); },
                 [c0, c1](const std::vector<Tensor>& ins, const Tensor&, const Tensor& cot) {
                   Tensor g = Tensor::zeros(ins[0].shape);
                   int m = g.rows();
                   for (int i = 0; i < m; ++i)
                     for (int j = c0; j < c1; ++j) g.at(i, j) = cot.at(i, j - c0);
                   return std::vector<Tensor>{g};
                 }},
      out);
  return out;
}

Tensor concat_vec(const Tensor& a, const Tensor& b, Tape* tape) {
  if (a.rank() != 1 || b.rank() != 1) dim_error("concat_vec", a, b);
  auto fwd = [](const Tensor& x, const Tensor& y) {
    Tensor out = Tensor::zeros({x.shape[0] + y.shape[0]});
    std::copy(x.v.begin(), x.v.end(), out.v.begin());
    std::copy(y.v.begin(), y.v.end(), out.v.begin() + x.shape[0]);
    return out;
  };
  Tensor out = fwd(a, b);
  if (!tape) return out;
  int ia = ensure_node(*tape, a), ib = ensure_node(*tape, b);
  out.node = tape->record(
      Tape::Node{"concat_vec",
                 {ia, ib},
                 [fwd](const std::vector<Tensor>& ins) { return fwd(ins[0], ins[1]); },
                 [](const std::vector<Tensor>& ins, const Tensor&, const Tensor& cot) {
                   int na = ins[0].shape[0], nb = ins[1].shape[0];
                   Tensor ga = Tensor::zeros({na}), gb = Tensor::zeros({nb});
                   std::copy(cot.v.begin(), cot.v.begin() + na, ga.v.begin());
                   std::copy(cot.v.begin() + na, cot.v.begin() + na + nb, gb.v.begin());
                   return std::vector<Tensor>{ga, gb};
                 }},
      out);
  return out;
}

Tensor reshape(const Tensor& x, std::vector<int> shape, Tape* tape) {
  if (shape_count(shape) != x.size())
    throw std::invalid_argument("reshape: " + x.shape_str() + " has " + std::to_string(x.size()) +
                                " values, target needs " + std::to_string(shape_count(shape)));
  Tensor out(shape, x.v);
  if (!tape) return out;
  int ix = ensure_node(*tape, x);
  std::vector<int> target = shape;
  out.node = tape->record(
      Tape::Node{"reshape",
                 {ix},
                 [target](const std::vector<Tensor>& ins) { return Tensor(target, ins[0].v); },
                 [](const std::vector<Tensor>& ins, const Tensor&, const Tensor& cot) {
                   return std::vector<Tensor>{Tensor(ins[0].shape, cot.v)};
                 }},
      out);
  return out;
}

Tensor sum(const Tensor& x, Tape* tape) {
  auto fwd = [](const Tensor& xin) {
    double acc = 0.0;
    for (double v : xin.v) acc += v;
    return Tensor::scalar(acc);
  };
  Tensor out = fwd(x);
  if (!tape) return out;
  int ix = ensure_node(*tape, x);
  out.node = tape->record(
      Tape::Node{"sum",
                 {ix},
                 [fwd](const std::vector<Tensor>& ins) { return fwd(ins[0]); },
                 [](const std::vector<Tensor>& ins, const Tensor&, const Tensor& cot) {
                   return std::vector<Tensor>{Tensor::full(ins[0].shape, cot.v[0])};
                 }},
      out);
  return out;
}

Tensor mean_squared_error(const Tensor& a, const Tensor& b, Tape* tape) {
  if (!a.same_shape(b)) dim_error("mean_squared_error", a, b);
  auto fwd = [](const Tensor& x, const Tensor& y) {
    double acc = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
      double d = x.v[i] - y.v[i];
      acc += d * d;
    }
    return Tensor::scalar(acc / static_cast<double>(x.size()));
  };
  Tensor out = fwd(a, b);
  if (!tape) return out;
  int ia = ensure_node(*tape, a), ib = ensure_node(*tape, b);
  out.node = tape->record(
      Tape::Node{"mean_squared_error",
                 {ia, ib},
                 [fwd](const std::vector<Tensor>& ins) { return fwd(ins[0], ins[1]); },
                 [](const std::vector<Tensor>& ins, const Tensor&, const Tensor& cot) {
                   double s = 2.0 * cot.v[0] / static_cast<double>(ins[0].size());
                   Tensor ga = ins[0], gb = ins[1];
                   ga.node = gb.node = -1;
                   for (size_t i = 0; i < ga.size(); ++i) {
                     double d = s * (ins[0].v[i] - ins[1].v[i]);
                     ga.v[i] = d;
                     gb.v[i] = -d;
                   }
                   return std::vector<Tensor>{ga, gb};
                 }},
      out);
  return out;
}

}  // namespace odpfl
