#include "anacto/training.hpp"

#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "anacto/checkpoint.hpp"
#include "anacto/errors.hpp"
#include "anacto/eval.hpp"
#include "anacto/version.hpp"

namespace anacto {

std::string to_string(Ablation a) { return a == Ablation::kFull ? "full" : "nao-only"; }

Ablation ablation_from_string(const std::string& s) {
  if (s == "full") return Ablation::kFull;
  if (s == "nao-only" || s == "nao_only") return Ablation::kNaoOnly;
  throw std::invalid_argument("ablation_from_string: unknown ablation '" + s + "'");
}

void TrainConfig::validate() const {
  weights.validate();
  sgd.validate();
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  model_cfg.validate();
  if (prep.num_frames != model_cfg.num_frames) {
    throw std::invalid_argument("TrainConfig: dataset num_frames " + std::to_string(prep.num_frames) +
                                " does not match model num_frames " + std::to_string(model_cfg.num_frames));
  }
}

LossWeights TrainConfig::effective_weights() const {
  LossWeights w = weights;
  if (ablation == Ablation::kNaoOnly) w.lambda1 = 0.0;
  return w;
}

ClipLossTerms clip_loss(Tape& tape, const AnticipationModel& model, const ModelSample& sample,
                        const LossWeights& weights, bool teacher_forcing) {
  ClipLossTerms terms;
  terms.forward = model.forward(tape, sample.frames, sample.dets,
                                teacher_forcing ? &sample.cao_gt : nullptr);
  const std::size_t T = terms.forward.yhat.size();
  terms.feat = loss_feat(tape, terms.forward.zhat, terms.forward.z);
  terms.cao = loss_cao(tape, std::span<const Var>(terms.forward.yhat.data(), T - 1),
                       std::span<const BoxPair>(sample.cao_gt.data(), T - 1));
  terms.nao = loss_nao(tape, terms.forward.yhat.back(), sample.nao_gt);
  terms.combined = combine_loss(tape, terms.feat, terms.cao, terms.nao, weights);
  return terms;
}

Trainer::Trainer(TrainConfig config) : cfg_(std::move(config)) {
  cfg_.validate();
  const auto clips = load_dataset(cfg_.data_dir);
  SampleSet set = prepare_samples(clips, cfg_.model_cfg, cfg_.prep);
  train_ = std::move(set.samples);
  excluded_ = set.excluded;
  if (!cfg_.val_dir.empty()) {
    const auto val_clips = load_dataset(cfg_.val_dir);
    val_ = prepare_samples(val_clips, cfg_.model_cfg, cfg_.prep).samples;
  }
  model_ = make_model(cfg_.model, cfg_.model_cfg, Rng(cfg_.seed).substream("init"));
}

Trainer::Trainer(TrainConfig config, std::vector<ModelSample> train, std::vector<ModelSample> val)
    : cfg_(std::move(config)), train_(std::move(train)), val_(std::move(val)) {
  cfg_.validate();
  model_ = make_model(cfg_.model, cfg_.model_cfg, Rng(cfg_.seed).substream("init"));
}

TrainResult Trainer::run() {
  if (train_.empty()) throw DataError("Trainer: no usable training clips (all excluded or none found)");
  for (const ModelSample& s : train_) {
    if (static_cast<int>(s.frames.size()) != cfg_.model_cfg.num_frames) {
      throw DataError("Trainer: clip " + s.clip_id + " sampled " + std::to_string(s.frames.size()) +
                      " frames, model expects " + std::to_string(cfg_.model_cfg.num_frames));
    }
  }

  const LossWeights weights = cfg_.effective_weights();
  Rng shuffle_rng = Rng(cfg_.seed).substream("shuffle");

  TrainResult result;
  result.clips_used = static_cast<int>(train_.size());
  result.clips_excluded = excluded_;

  std::ofstream metrics_out;
  const bool to_disk = !cfg_.out_dir.empty();
  if (to_disk) {
    std::filesystem::create_directories(cfg_.out_dir);
    metrics_out.open(cfg_.out_dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
    if (!metrics_out) throw DataError("Trainer: cannot write metrics.jsonl in " + cfg_.out_dir.string());
  }

  CheckpointMeta ckpt_meta;
  ckpt_meta.tool_version = kToolVersion;
  ckpt_meta.seed = cfg_.seed;
  ckpt_meta.config_json = model_config_to_json(model_->kind(), cfg_.model_cfg);

  std::vector<Tensor*> param_ptrs;
  for (std::size_t i = 0; i < model_->params().count(); ++i) param_ptrs.push_back(&model_->params().value(i));

  double best_ap = -1.0;
  long step = 0;
  bool stop = false;

  for (int epoch = 1; epoch <= cfg_.sgd.epochs && !stop; ++epoch) {
    std::vector<std::size_t> order(train_.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);

    double ep_feat = 0, ep_cao = 0, ep_nao = 0, ep_total = 0;
    std::size_t ep_clips = 0;

    for (std::size_t begin = 0; begin < order.size() && !stop; begin += static_cast<std::size_t>(cfg_.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg_.batch_size));
      const double batch_n = static_cast<double>(end - begin);

      std::vector<Tensor> grad_acc;
      grad_acc.reserve(param_ptrs.size());
      for (const Tensor* p : param_ptrs) grad_acc.push_back(Tensor::zeros(p->shape()));

      double batch_total = 0.0;
      for (std::size_t bi = begin; bi < end; ++bi) {
        const ModelSample& sample = train_[order[bi]];
        try {
          Tape tape;
          const ClipLossTerms terms = clip_loss(tape, *model_, sample, weights, cfg_.teacher_forcing);
          const auto grads = tape.gradients(terms.combined, terms.forward.param_vars);
          for (std::size_t p = 0; p < grads.size(); ++p) {
            Tensor& acc = grad_acc[p];
            const Tensor& g = grads[p];
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += g[k];
          }
          ep_feat += terms.feat.value().item();
          ep_cao += terms.cao.value().item();
          ep_nao += terms.nao.value().item();
          const double combined = terms.combined.value().item();
          ep_total += combined;
          batch_total += combined;
          ++ep_clips;
        } catch (const NumericError& e) {
          throw NumericError("training diverged at step " + std::to_string(step + 1) + ", clip " +
                             sample.clip_id + ": " + e.what());
        }
      }

      for (Tensor& acc : grad_acc) {
        for (std::size_t k = 0; k < acc.size(); ++k) acc[k] /= batch_n;
      }
      sgd_step(param_ptrs, grad_acc, cfg_.sgd);
      ++step;

      const double batch_mean = batch_total / batch_n;
      if (step == 1) result.post_step1_loss = batch_mean;
      result.final_step_loss = batch_mean;
      if (cfg_.max_steps > 0 && step >= cfg_.max_steps) stop = true;
    }

    EpochMetrics em;
    em.epoch = epoch;
    if (ep_clips > 0) {
      em.loss_feat = ep_feat / static_cast<double>(ep_clips);
      em.loss_cao = ep_cao / static_cast<double>(ep_clips);
      em.loss_nao = ep_nao / static_cast<double>(ep_clips);
      em.loss_total = ep_total / static_cast<double>(ep_clips);
    }

    if (!val_.empty()) {
      const EvalReport report = evaluate_samples(*model_, val_, cfg_.prep.tau_a, to_string(model_->kind()));
      em.val_ap_avg = report.ap_avg;
      if (report.ap_avg > best_ap) {
        best_ap = report.ap_avg;
        result.best_epoch = epoch;
        if (to_disk) {
          result.best_checkpoint = cfg_.out_dir / "best.ckpt";
          save_checkpoint(result.best_checkpoint, model_->params(), ckpt_meta);
        }
      }
    }

    if (to_disk) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt_epoch_%03d.ckpt", epoch);
      save_checkpoint(cfg_.out_dir / name, model_->params(), ckpt_meta);
      result.last_checkpoint = cfg_.out_dir / "last.ckpt";
      save_checkpoint(result.last_checkpoint, model_->params(), ckpt_meta);

      nlohmann::json j;
      j["epoch"] = em.epoch;
      j["loss_feat"] = em.loss_feat;
      j["loss_cao"] = em.loss_cao;
      j["loss_nao"] = em.loss_nao;
      j["loss_total"] = em.loss_total;
      if (em.val_ap_avg >= 0.0) {
        j["val_ap_avg"] = em.val_ap_avg;
      } else {
        j["val_ap_avg"] = nullptr;
      }
      metrics_out << j.dump() << '\n';
      metrics_out.flush();
    }

    result.metrics.push_back(em);
  }

  result.steps_run = step;
  return result;
}

TrainResult train(TrainConfig config) { return Trainer(std::move(config)).run(); }

}  // namespace anacto
