#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "anacto/dataset.hpp"
#include "anacto/losses.hpp"
#include "anacto/model.hpp"
#include "anacto/sgd.hpp"

namespace anacto {

enum class Ablation { kFull, kNaoOnly };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);

struct TrainConfig {
  LossWeights weights;
  SgdConfig sgd;  // learning rate 1e-5, 50 epochs
  int batch_size = 4;
  std::uint64_t seed = 0;
  std::filesystem::path data_dir;
  std::filesystem::path val_dir;  // empty: no validation pass
  ModelKind model = ModelKind::kTanacto;
  Ablation ablation = Ablation::kFull;
  ModelConfig model_cfg;
  SamplePrepConfig prep;
  long max_steps = -1;  // optional cap on optimizer steps
  std::filesystem::path out_dir;  // empty: keep everything in memory
  bool teacher_forcing = true;

  void validate() const;
  // Ablation applied: nao_only zeroes lambda1 exactly.
  LossWeights effective_weights() const;
};

struct ClipLossTerms {
  Var feat, cao, nao, combined;
  ClipForward forward;
};

// Forward plus the three-term objective for one clip on the given tape.
ClipLossTerms clip_loss(Tape& tape, const AnticipationModel& model, const ModelSample& sample,
                        const LossWeights& weights, bool teacher_forcing);

struct EpochMetrics {
  int epoch = 0;
  double loss_feat = 0.0;
  double loss_cao = 0.0;
  double loss_nao = 0.0;
  double loss_total = 0.0;
  double val_ap_avg = -1.0;  // -1 when no validation set is configured
};

struct TrainResult {
  std::vector<EpochMetrics> metrics;
  double post_step1_loss = 0.0;  // batch-mean combined loss after step 1
  double final_step_loss = 0.0;
  long steps_run = 0;
  int clips_used = 0;
  int clips_excluded = 0;
  int best_epoch = -1;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
};

// Deterministic SGD training: seeded shuffle per epoch, batch gradients
// averaged over clips in clip-index order, per-epoch metrics and
// checkpoints, best checkpoint by validation AP_avg.
class Trainer {
 public:
  explicit Trainer(TrainConfig config);
  Trainer(TrainConfig config, std::vector<ModelSample> train, std::vector<ModelSample> val);

  TrainResult run();

  AnticipationModel& model() { return *model_; }
  const AnticipationModel& model() const { return *model_; }
  const std::vector<ModelSample>& train_samples() const { return train_; }

 private:
  TrainConfig cfg_;
  std::vector<ModelSample> train_;
  std::vector<ModelSample> val_;
  int excluded_ = 0;
  std::unique_ptr<AnticipationModel> model_;
};

TrainResult train(TrainConfig config);

}  // namespace anacto
