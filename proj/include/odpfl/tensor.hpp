#pragma once

#include <functional>
#include <string>
#include <vector>

namespace odpfl {

// Dense row-major tensor of 64-bit floats. Value object; `node` links it
// into a recording tape when a pass is being differentiated (-1 otherwise).
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;
  int node = -1;

  Tensor() = default;
  Tensor(std::vector<int> shape_in, std::vector<double> values);

  static Tensor zeros(std::vector<int> shape_in);
  static Tensor full(std::vector<int> shape_in, double value);
  static Tensor scalar(double value);

  size_t size() const { return v.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }

  double& at(int i, int j) { return v[static_cast<size_t>(i) * shape[1] + j]; }
  double at(int i, int j) const { return v[static_cast<size_t>(i) * shape[1] + j]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const;

  // finite check used after forward ops
  bool all_finite() const;
};

enum class PoolKind { kMean, kMax };

struct AdjointSeed {
  int node = -1;
  Tensor cotangent;
};

// Recorded forward pass. Node ids are indices; inputs always precede the
// nodes that consume them. Backward is a pure function of (tape, seeds),
// so one tape supports many backward passes.
class Tape {
 public:
  struct Node {
    std::string op;
    std::vector<int> inputs;
    // recompute output from input values (null for leaves)
    std::function<Tensor(const std::vector<Tensor>&)> forward;
    // cotangents for inputs, given (input values, output value, output cotangent)
    std::function<std::vector<Tensor>(const std::vector<Tensor>&, const Tensor&, const Tensor&)> backward;
  };

  // registers a leaf value; returned tensor carries its node id
  Tensor leaf(const Tensor& t);

  int record(Node node, Tensor value);

  int n_nodes() const { return static_cast<int>(nodes_.size()); }
  const Tensor& value(int node) const;
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

  // re-runs every recorded op from leaf values; true iff all node values
  // reproduce bitwise
  bool replay_matches() const;

  // multi-seed reverse sweep; result indexed by node id, empty tensor where
  // no cotangent flowed
  std::vector<Tensor> backward(const std::vector<AdjointSeed>& seeds) const;
  std::vector<Tensor> backward(const AdjointSeed& seed) const;

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor> values_;
};

// ---- forward ops (recorded when tape != nullptr) ----

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor relu(const Tensor& a, Tape* tape = nullptr);
Tensor scale(const Tensor& a, double c, Tape* tape = nullptr);

// bias broadcast over the rows of a [m x n] matrix
Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape = nullptr);

// per-column mean or max across the m rows of a [m x d] matrix -> [d].
// Max ties route the cotangent to the lowest row index attaining the max.
Tensor set_pool(const Tensor& x, PoolKind kind, Tape* tape = nullptr);

// mean over rows of -log softmax(logits)[label]; max-subtraction stabilized
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tape* tape = nullptr);

// rows scaled to unit L2 norm
Tensor row_normalize(const Tensor& x, Tape* tape = nullptr);

// column range [c0, c1) of a [m x d] matrix
Tensor slice_cols(const Tensor& x, int c0, int c1, Tape* tape = nullptr);

// join two vectors end to end
Tensor concat_vec(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

Tensor reshape(const Tensor& x, std::vector<int> shape, Tape* tape = nullptr);

// sum of all entries -> scalar
Tensor sum(const Tensor& x, Tape* tape = nullptr);

// mean of squared entries of (a - b) -> scalar
Tensor mean_squared_error(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

}  // namespace odpfl
