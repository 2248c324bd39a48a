#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "anacto/rng.hpp"
#include "anacto/tape.hpp"
#include "anacto/tensor.hpp"

namespace anacto {

// Index of a parameter inside its ParamStore.
struct PRef {
  std::size_t index = static_cast<std::size_t>(-1);
  bool valid() const { return index != static_cast<std::size_t>(-1); }
};

// Ordered, named collection of trainable tensors. Creation order is fixed
// by model construction, which makes initialization, SGD updates and
// checkpoint layout deterministic.
class ParamStore {
 public:
  PRef add(std::string name, Tensor init);

  std::size_t count() const { return values_.size(); }
  const std::string& name(PRef r) const { return names_.at(r.index); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  Tensor& value(PRef r) { return values_.at(r.index); }
  const Tensor& value(PRef r) const { return values_.at(r.index); }
  Tensor& value(std::size_t i) { return values_.at(i); }
  const Tensor& value(std::size_t i) const { return values_.at(i); }

  PRef find(std::string_view name) const;  // invalid PRef when absent

  std::size_t total_elements() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

// Per-tape bound view of a ParamStore: every parameter becomes a
// differentiable leaf exactly once, so gradient contributions from all
// uses accumulate into one node.
class Binder {
 public:
  Binder(Tape& tape, const ParamStore& store);

  Var operator[](PRef r) const { return vars_.at(r.index); }
  std::span<const Var> all() const { return vars_; }

 private:
  std::vector<Var> vars_;
};

// Weight initializers. Linear maps use uniform(-1/sqrt(fan_in), +1/sqrt(fan_in));
// embeddings and learned tokens use normal(0, 0.02).
Tensor init_linear_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor init_zeros(Shape shape);
Tensor init_embedding(Shape shape, Rng& rng);

}  // namespace anacto
