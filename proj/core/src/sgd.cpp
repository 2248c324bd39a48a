#include "anacto/sgd.hpp"

#include <stdexcept>
#include <string>

namespace anacto {

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("SgdConfig: learning_rate must be > 0");
  if (epochs < 1) throw std::invalid_argument("SgdConfig: epochs must be >= 1");
}

void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, const SgdConfig& config) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("sgd_step: param/grad count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (!p.same_shape(g)) {
      throw std::invalid_argument("sgd_step: shape mismatch at param " + std::to_string(i) + ": " +
                                  shape_to_string(p.shape()) + " vs " + shape_to_string(g.shape()));
    }
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= config.learning_rate * g[j];
  }
}

void sgd_step(ParamStore& store, std::span<const Tensor> grads, const SgdConfig& config) {
  if (store.count() != grads.size()) {
    throw std::invalid_argument("sgd_step: grad count does not match parameter store");
  }
  std::vector<Tensor*> ptrs;
  ptrs.reserve(store.count());
  for (std::size_t i = 0; i < store.count(); ++i) ptrs.push_back(&store.value(i));
  sgd_step(ptrs, grads, config);
}

}  // namespace anacto
