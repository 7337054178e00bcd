#pragma once

// Reverse-mode tape over Matrix values. Each op computes its forward with the
// tensor kernels and records a hand-derived vector-Jacobian product.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "scd/tensor.hpp"

namespace scd {

/// A named trainable tensor. `reads` counts how many times a graph bound it,
/// which lets tests assert that a code path never touched a parameter.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;
  mutable std::uint64_t reads = 0;

  Param() = default;
  Param(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {}
  void zero_grad() { grad = Matrix(value.rows(), value.cols()); }
};

using ParamList = std::vector<Param*>;

struct Var {
  std::size_t id = 0;
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, const Matrix& out_grad)>;

  Var constant(Matrix value);
  /// Binds `p` as a leaf. Gradients reach `p.grad` only when `p.trainable`.
  Var param(Param& p);
  Var push(Matrix value, std::span<const Var> parents, Backward backward);
  Var push(Matrix value, std::initializer_list<Var> parents, Backward backward) {
    return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
  }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  void accumulate(Var v, const Matrix& g);

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 node and accumulates into bound params.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    Param* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Param*, std::size_t> bound_;
};

// --- ops -----------------------------------------------------------------------

Var matmul(Graph& g, Var a, Var b);
Var matmul_nt(Graph& g, Var a, Var b);  // a * b^T
Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var add_row(Graph& g, Var a, Var row);  // broadcast a 1 x n row over every row of a
Var scale(Graph& g, Var a, double s);
Var hadamard(Graph& g, Var a, Var b);
Var sigmoid(Graph& g, Var a);
Var gelu(Graph& g, Var a);  // tanh approximation
Var layer_norm_rows(Graph& g, Var x, Var gain, Var bias, double eps);
Var softmax_rows(Graph& g, Var x);
/// Row softmax restricted to entries where `allow(i, j) != 0`; excluded entries are
/// exactly zero and rows with nothing allowed are all zero.
Var masked_softmax_rows(Graph& g, Var x, const Matrix& allow);
Var conv1d_same(Graph& g, Var x, Var weight, Var bias, std::size_t width);
Var slice_cols(Graph& g, Var x, std::size_t begin, std::size_t count);
Var slice_rows(Graph& g, Var x, std::size_t begin, std::size_t count);
Var concat_cols(Graph& g, std::span<const Var> parts);
Var concat_rows(Graph& g, std::span<const Var> parts);
Var mean_rows(Graph& g, Var x);  // -> 1 x cols
Var sum(Graph& g, std::span<const Var> parts);
Var reshape(Graph& g, Var x, std::size_t rows, std::size_t cols);
Var gather_rows(Graph& g, Var table, std::span<const std::size_t> ids);
Var l2_normalize_rows(Graph& g, Var x);
Var l2_normalize_all(Graph& g, Var x);
/// out[k] = sum_i alpha(i,k) * (frames[i] - centers[k]); each output entry is summed
/// over frames in sorted order so the result does not depend on frame order.
Var vlad_aggregate(Graph& g, Var alpha, Var frames, Var centers);
/// Mean cross entropy over rows whose target is >= 0. Throws if none are.
Var cross_entropy(Graph& g, Var logits, std::span<const int> targets);

/// Central-difference verification of every bound parameter's gradient.
/// `loss` builds a fresh graph and returns a 1x1 node. Returns
/// max |analytic - numeric| / (|numeric| + 1e-8) over all entries of `params`.
double check_gradients(const std::function<Var(Graph&)>& loss, std::span<Param* const> params,
                       double h = 1e-4);

}  // namespace scd
