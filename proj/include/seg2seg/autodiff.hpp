#pragma once

// Tape-based reverse-mode differentiation over dense fp64 tensors.
//
// A Graph owns an append-only list of nodes. Each primitive evaluates its
// forward value eagerly and records a vector-Jacobian product closure; the
// backward sweep walks nodes in reverse insertion order, so every node is
// visited exactly once.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "seg2seg/tensor.hpp"

namespace seg2seg::ad {

// NaN reached an operation that cannot propagate it meaningfully.
struct NumericalError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

class Graph;

class Var {
 public:
  Var() = default;

  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

// grad_in[p] is the accumulator of the p-th parent; closures add into it.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor*> grad_in)>;
using ParamMap = std::map<std::string, Tensor>;
using Gradients = std::map<std::string, Tensor>;

class Graph {
 public:
  // With record_backward = false no closures are kept (inference mode).
  explicit Graph(bool record_backward = true) : record_(record_backward) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Trainable leaf bound to externally owned storage; the tensor must outlive
  // the graph. Repeated calls with the same name return the same node.
  Var parameter(const std::string& name, const Tensor& value);
  Var parameter(const std::string& name, Tensor&& value) = delete;
  Var record(Tensor value, std::vector<int> parents, BackwardFn backward);

  const Tensor& value(int id) const;
  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return record_; }

  // d(loss)/d(param) for every parameter leaf reachable from the graph.
  // Does not mutate the graph; repeated calls return identical results.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    std::vector<int> parents;
    BackwardFn backward;
    std::string param_name;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::map<std::string, int> param_index_;
};

// Elementwise / linear algebra.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_bias(Var x, Var bias);  // [n,m] + [m] broadcast over rows
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
Var minimum(Var a, Var b);  // ties route the gradient to `a`
Var maximum(Var a, Var b);

// Nonlinearities.
Var sigmoid(Var x);
Var gelu(Var x);  // tanh approximation
Var log(Var x);   // strictly positive inputs only

// Row-wise softmax over the last axis. mask[i] == 0 excludes entry i before
// normalisation; excluded entries get probability 0 and gradient 0.
Var masked_softmax(Var x, const std::vector<std::uint8_t>& mask);
Var softmax(Var x);
// Divides each row by max(row sum, floor).
Var row_normalize(Var x, double floor);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var embedding(Var table, std::span<const int> ids);
Var dropout(Var x, double rate, std::mt19937_64& rng);

// Reductions (fixed left-to-right order).
Var sum(Var x);
Var mean(Var x);
Var sum_axis(Var x, std::size_t axis);  // rank-2 input
Var cumsum(Var x, std::size_t axis);
// Non-overlapping windows along a rank-1 input; the final partial window is
// kept. Ties pick the lowest index.
Var max_pool(Var x, std::size_t kernel);
Var l2_norm(Var x);

// Structure.
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
Var transpose(Var x);
Var reshape(Var x, Shape shape);

}  // namespace seg2seg::ad
