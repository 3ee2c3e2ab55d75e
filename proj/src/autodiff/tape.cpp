#include <memory>
#include <stdexcept>

#include "dcem/autodiff.hpp"

namespace dcem::ad {

Tape& Var::tape() const {
  if (tape_ == nullptr) throw std::logic_error("use of an empty Var");
  return *tape_;
}

const Tensor& Var::value() const { return tape().nodes_[id_].value; }

Tensor Var::grad() const {
  const auto& node = tape().nodes_[id_];
  if (node.grad.empty() && !node.value.empty()) return Tensor(node.value.rows(), node.value.cols());
  return node.grad;
}

bool Var::requires_grad() const { return tape().nodes_[id_].requires_grad; }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::variable(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = "variable";
  n.requires_grad = recording_;
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  return push(std::move(n));
}

Var Tape::record(std::string_view op, std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  bool any = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw std::invalid_argument(std::string(op) + ": inputs live on different tapes");
    any = any || nodes_[in.id()].requires_grad;
  }
  if (recording_ && any) {
    n.requires_grad = true;
    n.backward = std::move(backward);
    n.parents.reserve(inputs.size());
    for (const Var& in : inputs) n.parents.push_back(in.id());
  }
  return push(std::move(n));
}

Var Tape::apply(const CustomPrimitive& prim, std::vector<Var> inputs) {
  std::vector<const Tensor*> values;
  values.reserve(inputs.size());
  for (const Var& in : inputs) values.push_back(&in.value());
  auto context = std::make_shared<std::any>();
  Tensor out = prim.forward(values, *context);

  auto backward_fn = prim.backward;
  std::string name = prim.name;
  auto fn = [backward_fn, name, context, inputs](const Var& g, const Var& self, std::span<const bool> needs) {
    Tape& tape = self.tape();
    std::vector<const Tensor*> in_values;
    for (const Var& in : inputs) in_values.push_back(&in.value());
    std::vector<Tensor> grads = backward_fn(*context, in_values, self.value(), g.value());
    if (grads.size() != inputs.size())
      throw ShapeError(name + ": backward returned " + std::to_string(grads.size()) + " gradients for " +
                       std::to_string(inputs.size()) + " inputs");
    std::vector<Var> out(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!needs[i]) continue;
      if (!grads[i].same_shape(inputs[i].value()))
        throw ShapeError(name + ": backward returned gradient of shape " + grads[i].shape_str() + " for input of shape " +
                         inputs[i].value().shape_str());
      // The VJP is opaque, so its result is a leaf as far as higher-order
      // derivatives go; differentiating through it again is refused.
      out[i] = tape.record(
          "custom_grad", {g}, std::move(grads[i]), [name](const Var&, const Var&, std::span<const bool>) -> std::vector<Var> {
            throw std::logic_error(name + ": second derivatives through a custom primitive are not supported");
          });
    }
    return out;
  };
  return record("custom", std::move(inputs), std::move(out), std::move(fn));
}

std::vector<Var> Tape::sweep(const Var& root, std::span<const Var> wrt, bool create_graph, bool all_leaves) {
  if (&root.tape() != this) throw std::invalid_argument("backward: root lives on a different tape");
  if (!root.value().is_scalar()) throw ShapeError("backward: root must be scalar, got " + root.value().shape_str());

  const std::size_t n = root.id() + 1;
  // relevant[i]: node i depends on a differentiation target
  std::vector<char> relevant(n, 0);
  if (all_leaves) {
    for (std::size_t i = 0; i < n; ++i) relevant[i] = nodes_[i].requires_grad ? 1 : 0;
  } else {
    for (const Var& w : wrt) {
      if (&w.tape() != this) throw std::invalid_argument("grad: target lives on a different tape");
      if (w.id() < n) relevant[w.id()] = 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (relevant[i]) continue;
      for (std::size_t p : nodes_[i].parents)
        if (relevant[p]) {
          relevant[i] = 1;
          break;
        }
    }
  }

  const bool saved = recording_;
  recording_ = create_graph;
  std::vector<Var> adj(n);
  try {
    adj[root.id()] = constant(Tensor::scalar(1.0));
    for (std::size_t i = n; i-- > 0;) {
      if (!adj[i].valid() || !relevant[i]) continue;
      const Node& node = nodes_[i];
      if (!node.backward) continue;
      const std::size_t np = node.parents.size();
      auto needs = std::make_unique<bool[]>(np);
      bool any = false;
      for (std::size_t j = 0; j < np; ++j) {
        needs[j] = relevant[node.parents[j]] != 0;
        any = any || needs[j];
      }
      if (!any) continue;
      std::vector<Var> grads = node.backward(adj[i], Var(this, i), std::span<const bool>(needs.get(), np));
      for (std::size_t j = 0; j < node.parents.size(); ++j) {
        if (!needs[j]) continue;
        const std::size_t p = node.parents[j];
        const Var& gj = grads.at(j);
        if (!gj.valid()) continue;
        if (!gj.value().same_shape(nodes_[p].value))
          throw ShapeError(std::string(node.op) + ": backward produced gradient " + gj.value().shape_str() +
                           " for operand " + nodes_[p].value.shape_str());
        adj[p] = adj[p].valid() ? add(adj[p], gj) : gj;
      }
    }
  } catch (...) {
    recording_ = saved;
    throw;
  }
  recording_ = saved;

  std::vector<Var> out;
  if (all_leaves) {
    for (std::size_t i = 0; i < n; ++i) {
      Node& node = nodes_[i];
      if (!node.parents.empty() || !node.requires_grad) continue;
      node.grad = adj[i].valid() ? adj[i].value() : Tensor(node.value.rows(), node.value.cols());
    }
    return out;
  }
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (w.id() < n && adj[w.id()].valid()) {
      out.push_back(adj[w.id()]);
    } else {
      out.push_back(constant(Tensor(w.value().rows(), w.value().cols())));
    }
  }
  return out;
}

void Tape::backward(const Var& root) {
  const std::size_t mark = nodes_.size();
  sweep(root, {}, /*create_graph=*/false, /*all_leaves=*/true);
  while (nodes_.size() > mark) nodes_.pop_back();
}

std::vector<Var> Tape::grad(const Var& root, std::span<const Var> wrt, bool create_graph) {
  return sweep(root, wrt, create_graph, /*all_leaves=*/false);
}

}  // namespace dcem::ad
