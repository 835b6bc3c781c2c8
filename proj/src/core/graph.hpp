#pragma once

#include <functional>
#include <vector>

#include "core/error.hpp"
#include "core/tensor.hpp"

namespace avloc {

// Define-by-run reverse-mode tape. A graph is built per forward pass; nodes
// are created in topological order, so the backward sweep is a reverse walk
// over creation order. Gradients accumulate into per-node buffers.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int)>;

  int add_node(Tensor value, std::vector<int> parents, BackwardFn bw) {
    bool req = false;
    for (int p : parents) req = req || nodes_[static_cast<std::size_t>(p)].needs_grad;
    nodes_.push_back(Node{std::move(value), Tensor(), req, std::move(parents), std::move(bw)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int leaf(Tensor value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, {}, nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Tensor& value(int id) { return nodes_[static_cast<std::size_t>(id)].value; }

  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

  // Gradient buffer, allocated (zeroed) on first access.
  Tensor& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.numel() != n.value.numel()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  void backward(int root) {
    if (value(root).numel() != 1)
      throw ValidationError("backward root must be a scalar");
    grad(root)[0] = 1.0;
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.needs_grad || !n.bw) continue;
      if (n.grad.numel() != n.value.numel()) continue;  // unreached node
      n.bw(*this, id);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::vector<int> parents;
    BackwardFn bw;
  };
  std::vector<Node> nodes_;
};

// Lightweight handle used by the op layer.
struct Var {
  Graph* g = nullptr;
  int id = -1;
  const Tensor& val() const { return g->value(id); }
  Tensor& grad() const { return g->grad(id); }
  bool requires_grad() const { return g->requires_grad(id); }
};

inline Var make_leaf(Graph& g, Tensor t, bool requires_grad = true) {
  return Var{&g, g.leaf(std::move(t), requires_grad)};
}
inline Var make_const(Graph& g, Tensor t) { return Var{&g, g.constant(std::move(t))}; }

}  // namespace avloc
