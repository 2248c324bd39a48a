#pragma once

#include <span>

#include "anacto/params.hpp"
#include "anacto/tensor.hpp"

namespace anacto {

struct SgdConfig {
  double learning_rate = 1e-5;
  int epochs = 50;

  void validate() const;
};

// p <- p - lr * g, elementwise. Shapes must match pairwise.
void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, const SgdConfig& config);

// Applies one step to every parameter of a store, grads in store order.
void sgd_step(ParamStore& store, std::span<const Tensor> grads, const SgdConfig& config);

}  // namespace anacto
