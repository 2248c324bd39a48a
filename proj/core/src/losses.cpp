#include "anacto/losses.hpp"

#include <stdexcept>

namespace anacto {

namespace {

// Per-step masked squared error between an R^8 prediction and a BoxPair
// target in normalized units.
Var masked_box_error(Tape& tape, Var yhat, const BoxPair& gt) {
  Tensor target(Shape{8});
  Tensor mask(Shape{8});
  const auto flat = gt.flat();
  for (std::size_t slot = 0; slot < 2; ++slot) {
    if (!gt.valid[slot]) continue;
    for (std::size_t k = 0; k < 4; ++k) {
      target[slot * 4 + k] = flat[slot * 4 + k];
      mask[slot * 4 + k] = 1.0;
    }
  }
  Var diff = mul(sub(yhat, tape.constant(std::move(target))), tape.constant(std::move(mask)));
  return sum(mul(diff, diff));
}

}  // namespace

void LossWeights::validate() const {
  if (lambda1 < 0.0 || lambda2 < 0.0 || feat_weight < 0.0) {
    throw std::invalid_argument("LossWeights: weights must be >= 0");
  }
}

Var loss_feat(Tape& tape, std::span<const Var> zhat, std::span<const Var> z) {
  if (zhat.size() != z.size()) throw std::invalid_argument("loss_feat: sequence length mismatch");
  if (zhat.empty()) throw std::invalid_argument("loss_feat: empty sequence");
  Var total = tape.constant_scalar(0.0);
  for (std::size_t t = 0; t + 1 < z.size(); ++t) {
    total = add(total, squared_distance(zhat[t], detach(z[t + 1])));
  }
  return total;
}

Var loss_cao(Tape& tape, std::span<const Var> yhat, std::span<const BoxPair> gt) {
  if (yhat.size() != gt.size()) throw std::invalid_argument("loss_cao: prediction/target length mismatch");
  Var total = tape.constant_scalar(0.0);
  for (std::size_t t = 0; t < yhat.size(); ++t) {
    if (!gt[t].any_valid()) continue;
    total = add(total, masked_box_error(tape, yhat[t], gt[t]));
  }
  return total;
}

Var loss_nao(Tape& tape, Var yhat_last, const BoxPair& gt) {
  if (!gt.any_valid()) {
    throw std::invalid_argument("loss_nao: ground truth is absent; exclusion is the pipeline's job");
  }
  return masked_box_error(tape, yhat_last, gt);
}

Var combine_loss(Tape& tape, Var feat, Var cao, Var nao, const LossWeights& weights) {
  weights.validate();
  (void)tape;
  return add(scale(feat, weights.feat_weight), add(scale(cao, weights.lambda1), scale(nao, weights.lambda2)));
}

}  // namespace anacto
