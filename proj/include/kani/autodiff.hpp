#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "kani/tensor.hpp"

namespace kani {

// Raised when an operation receives incompatible operand shapes.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b);
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// Raised on non-finite losses, gradients or parameters.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into this node
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;
  const char* op = "leaf";

  Tensor& ensure_grad();
  bool has_grad() const { return !grad.empty(); }
};

// Handle onto a node of the computation graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  // Gradient accumulated by backward(); zeros when nothing flowed in.
  Tensor grad() const;

  // Leaf nodes only: direct access for optimizers and perturbation checks.
  Tensor& mutable_value();
  Tensor& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

struct NamedVar {
  std::string name;
  Var var;
};

Var constant(Tensor value);
Var parameter(Tensor value);

// Builds an interior node. When no input requires a gradient the result is a
// constant and the backward recipe is dropped.
Var make_node(const char* op, Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

// Reverse pass from a single-element root. Each reachable node's recipe runs
// exactly once, in reverse topological order.
void backward(const Var& root);

}  // namespace kani
