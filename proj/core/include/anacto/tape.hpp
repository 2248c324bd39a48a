#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "anacto/tensor.hpp"

namespace anacto {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives
// and has not been cleared.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const { return tape_; }
  std::size_t node() const { return node_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t node) : tape_(tape), node_(node) {}

  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

// Context handed to an op's backward function during the reverse sweep.
class BackwardCtx {
 public:
  const Tensor& out_grad() const { return *out_grad_; }
  const Tensor& out_value() const { return *out_value_; }
  std::size_t num_inputs() const { return inputs_.size(); }
  const Tensor& in_value(std::size_t i) const;
  // True when input i leads back to a differentiable leaf; backward
  // functions may skip work for inputs that don't.
  bool needs_grad(std::size_t i) const;
  // Accumulation buffer for input i, allocated as zeros on first access.
  Tensor& in_grad(std::size_t i);

 private:
  friend class Tape;
  BackwardCtx(Tape* tape, std::span<const std::size_t> inputs, const Tensor* out_value, const Tensor* out_grad)
      : tape_(tape), inputs_(inputs), out_value_(out_value), out_grad_(out_grad) {}

  Tape* tape_;
  std::span<const std::size_t> inputs_;
  const Tensor* out_value_;
  const Tensor* out_grad_;
};

using BackwardFn = std::function<void(BackwardCtx&)>;

// Append-only record of executed differentiable operations. Insertion
// order is topological by construction: an op is recorded only after its
// inputs, so one reverse sweep visits every op exactly once.
//
// A tape is single-threaded. Parameters can be bound onto a fresh tape per
// training step via leaf(); bind each parameter once per tape so that all
// gradient contributions accumulate into a single node.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant_scalar(double v) { return leaf(Tensor::scalar(v), false); }

  // Records an op. `name` must outlive the tape (string literal).
  // Output finiteness is enforced here: NaN/Inf is an error state.
  Var record(const char* name, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(std::size_t node) const;
  const Tensor& value(const Var& v) const;
  bool requires_grad(std::size_t node) const;
  std::size_t size() const { return nodes_.size(); }

  // dLoss/dParam for each param, in order. Loss must be a scalar on this
  // tape; params must be differentiable nodes of this tape. Params the
  // loss does not reach get zero gradients.
  std::vector<Tensor> gradients(const Var& loss, std::span<const Var> params);

  void clear() { nodes_.clear(); }

 private:
  friend class BackwardCtx;

  struct Node {
    Tensor value;
    Tensor grad;  // empty until touched by a backward sweep
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    const char* op = "leaf";
    bool requires_grad = false;
  };

  void check_owns(const Var& v, const char* what) const;

  // deque: node references stay valid while the tape grows, so callers may
  // hold Tensor references across later op recordings.
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(node_); }

}  // namespace anacto
