#include "anacto/params.hpp"

#include <cmath>
#include <stdexcept>

namespace anacto {

PRef ParamStore::add(std::string name, Tensor init) {
  if (find(name).valid()) throw std::invalid_argument("ParamStore::add: duplicate name " + name);
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return PRef{values_.size() - 1};
}

PRef ParamStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return PRef{i};
  }
  return PRef{};
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const Tensor& t : values_) n += t.size();
  return n;
}

Binder::Binder(Tape& tape, const ParamStore& store) {
  vars_.reserve(store.count());
  for (std::size_t i = 0; i < store.count(); ++i) {
    vars_.push_back(tape.leaf(store.value(i), /*requires_grad=*/true));
  }
}

Tensor init_linear_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor w(Shape{fan_in, fan_out});
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
  return w;
}

Tensor init_zeros(Shape shape) { return Tensor::zeros(std::move(shape)); }

Tensor init_embedding(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, 0.02);
  return t;
}

}  // namespace anacto
