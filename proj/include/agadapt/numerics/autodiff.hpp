#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "agadapt/numerics/tensor.hpp"

namespace agadapt {

class Graph;

/// Handle to a recorded value inside a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  bool valid() const { return graph != nullptr; }
};

/// Reverse-mode tape. Values are recorded in creation order, which is already
/// a topological order, so backward is a single reverse sweep.
///
/// A graph built with `record = false` keeps only forward values; it is the
/// inference path used for greedy decoding and attention analysis.
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  /// Leaf that always receives a gradient (used to differentiate w.r.t. an
  /// intermediate such as an attention map).
  Var variable(Tensor value);
  /// Leaf referencing a parameter's storage. It receives a gradient only if
  /// the parameter is trainable. The parameter must outlive the graph.
  Var parameter(const Parameter& p);

  const Tensor& value(Var v) const;
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  /// Gradient after backward(); nullptr when the node received none.
  const Tensor* grad(Var v) const;

  /// Runs the reverse sweep from a 1x1 loss. Throws NumericError otherwise.
  void backward(Var loss);
  /// backward() followed by collection of parameter gradients. Every
  /// trainable parameter of `params` gets an entry; unreached ones are zero.
  GradientStore backward(Var loss, const ParameterStore& params);

  std::size_t size() const { return nodes_.size(); }

  // Internal API used by the op implementations.
  using Backprop = std::function<void(Graph&, std::size_t self)>;
  Var push(Tensor value, bool needs_grad, Backprop backprop);
  Tensor& grad_ref(std::size_t id);
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }
  bool node_needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool needs_grad = false;
    const Parameter* param = nullptr;
    Backprop backprop;
  };

  const Tensor& node_value(const Node& n) const { return n.external ? *n.external : n.value; }

  bool record_;
  std::vector<Node> nodes_;
};

// ---- differentiable operations (all values are treated as matrices) ----

Var matmul(Var a, Var b);     // a[n,k] * b[k,m]
Var matmul_nt(Var a, Var b);  // a[n,k] * b[m,k]^T
Var add(Var a, Var b);
Var add_row(Var a, Var bias);  // bias broadcast over rows
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double s);
Var gelu(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var row_slice(Var a, std::size_t r0, std::size_t r1);
Var col_slice(Var a, std::size_t c0, std::size_t c1);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(Var table, std::span<const int> ids);
/// Row softmax; with `causal`, entry (i, j) for j > i is masked to zero.
Var softmax(Var a, bool causal);
/// Summed cross-entropy of softmax(logits) against per-row targets. Rows with
/// target < 0 are skipped.
Var softmax_cross_entropy(Var logits, std::span<const int> targets);
Var sum(Var a);
Var sum_squares(Var a);
/// sum_i sum_{k} (a[i, cols[k]] - target[i, k])^2; the gradient touches only
/// the listed columns.
Var column_sq_error(Var a, std::span<const std::size_t> cols, const Tensor& target);
Var add_all(std::span<const Var> scalars);

/// GELU (tanh form), shared by feed-forward blocks and adapters.
double gelu_value(double x);

}  // namespace agadapt
