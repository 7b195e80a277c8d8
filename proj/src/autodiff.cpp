#include "kani/autodiff.hpp"

#include <unordered_set>
#include <utility>

namespace kani {

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b)) {}

Tensor& Node::ensure_grad() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Tensor Var::grad() const {
  if (node_->has_grad()) return node_->grad;
  return Tensor(node_->value.shape(), 0.0);
}

Tensor& Var::mutable_value() {
  if (!node_->inputs.empty()) throw std::logic_error("mutable_value on interior node '" + std::string(node_->op) + "'");
  return node_->value;
}

void Var::zero_grad() {
  if (node_->has_grad()) node_->grad.fill(0.0);
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = "constant";
  return Var(std::move(n));
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->op = "parameter";
  return Var(std::move(n));
}

Var make_node(const char* op, Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  for (const auto& in : inputs) {
    if (in.defined() && in.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.ptr());
    n->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(n));
}

void backward(const Var& root) {
  if (root.size() != 1) {
    throw ShapeError("backward: root must hold a single value, got " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
}

}  // namespace kani
