#include "anacto/tape.hpp"

#include <stdexcept>
#include <string>

#include "anacto/errors.hpp"

namespace anacto {

const Tensor& BackwardCtx::in_value(std::size_t i) const { return tape_->nodes_[inputs_[i]].value; }

bool BackwardCtx::needs_grad(std::size_t i) const { return tape_->nodes_[inputs_[i]].requires_grad; }

Tensor& BackwardCtx::in_grad(std::size_t i) {
  Tape::Node& n = tape_->nodes_[inputs_[i]];
  if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (value.empty()) throw std::invalid_argument("Tape::leaf: empty tensor");
  if (!value.all_finite()) throw NumericError("Tape::leaf: non-finite value");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* name, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string("op '") + name + "' produced a non-finite value");
  }
  Node n;
  n.value = std::move(value);
  n.op = name;
  bool needs = false;
  for (std::size_t in : inputs) {
    if (in >= nodes_.size()) throw std::invalid_argument("Tape::record: input node out of range");
    needs = needs || nodes_[in].requires_grad;
  }
  n.inputs = std::move(inputs);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(std::size_t node) const { return nodes_.at(node).value; }

const Tensor& Tape::value(const Var& v) const {
  check_owns(v, "value");
  return nodes_[v.node()].value;
}

bool Tape::requires_grad(std::size_t node) const { return nodes_.at(node).requires_grad; }

void Tape::check_owns(const Var& v, const char* what) const {
  if (v.tape() != this) {
    throw std::invalid_argument(std::string("Tape::") + what + ": Var does not belong to this tape");
  }
  if (v.node() >= nodes_.size()) {
    throw std::invalid_argument(std::string("Tape::") + what + ": Var node out of range (tape cleared?)");
  }
}

std::vector<Tensor> Tape::gradients(const Var& loss, std::span<const Var> params) {
  check_owns(loss, "gradients");
  const Node& loss_node = nodes_[loss.node()];
  if (loss_node.value.size() != 1) {
    throw std::invalid_argument("Tape::gradients: loss must be a scalar, got shape " +
                                shape_to_string(loss_node.value.shape()));
  }
  for (const Var& p : params) {
    check_owns(p, "gradients");
    if (!nodes_[p.node()].requires_grad) {
      throw std::invalid_argument("Tape::gradients: param node was not recorded as differentiable");
    }
  }

  for (Node& n : nodes_) n.grad = Tensor();

  nodes_[loss.node()].grad = Tensor::full(loss_node.value.shape(), 1.0);

  // Reverse sweep. Node order is topological, so each recorded op is
  // visited once, after everything that consumes its output.
  for (std::size_t i = loss.node() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    BackwardCtx ctx(this, n.inputs, &n.value, &n.grad);
    n.backward(ctx);
  }

  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Var& p : params) {
    Node& n = nodes_[p.node()];
    out.push_back(n.grad.empty() ? Tensor::zeros(n.value.shape()) : n.grad);
  }
  return out;
}

}  // namespace anacto
