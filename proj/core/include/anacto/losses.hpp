#pragma once

#include <span>

#include "anacto/boxes.hpp"
#include "anacto/ops.hpp"
#include "anacto/tape.hpp"

namespace anacto {

struct LossWeights {
  double lambda1 = 0.5;      // current-active-object loss weight
  double lambda2 = 1.0;      // next-active-object loss weight
  double feat_weight = 1.0;  // feature loss weight

  void validate() const;
};

// Sum over t of ||zhat_t - z_{t+1}||^2 for t = 0..T-2; the final step has
// no future frame inside the observed window and is dropped. Targets are
// detached: gradients flow into the predictions only.
Var loss_feat(Tape& tape, std::span<const Var> zhat, std::span<const Var> z);

// Masked squared error against per-frame current-active-object boxes for
// the first T-1 steps, in model pixel units. Invalid slots contribute
// nothing; an all-invalid sequence yields exactly zero.
Var loss_cao(Tape& tape, std::span<const Var> yhat, std::span<const BoxPair> gt);

// Squared error of the final-step prediction against the contact-point
// ground truth over its valid slots. Throws when gt has no valid slot
// (such clips are excluded upstream).
Var loss_nao(Tape& tape, Var yhat_last, const BoxPair& gt);

// feat_weight * feat + lambda1 * cao + lambda2 * nao.
Var combine_loss(Tape& tape, Var feat, Var cao, Var nao, const LossWeights& weights);

}  // namespace anacto
