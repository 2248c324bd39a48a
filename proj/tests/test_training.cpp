#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "anacto/errors.hpp"
#include "anacto/eval.hpp"
#include "anacto/rng.hpp"
#include "anacto/training.hpp"
#include "gradcheck.hpp"

using namespace anacto;
using anacto::test::random_tensor;

namespace {

ModelConfig probe_config() {
  ModelConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 8;
  cfg.embed_dim = 8;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  cfg.num_frames = 2;
  return cfg;
}

Raster random_frame(int size, Rng& rng) {
  Raster img(size, size);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

ModelSample random_sample(const ModelConfig& cfg, Rng& rng, double cao_prob = 0.7) {
  ModelSample s;
  s.clip_id = "mem_" + std::to_string(rng.below(1000000));
  for (int t = 0; t < cfg.num_frames; ++t) {
    s.frames.push_back(random_frame(cfg.image_size, rng));
    DetectionSet dets(static_cast<std::size_t>(cfg.num_categories));
    for (auto& slot : dets.slots) {
      if (rng.uniform() < 0.4) continue;
      slot.box = Box{rng.uniform(2, cfg.image_size - 2.0), rng.uniform(2, cfg.image_size - 2.0),
                     rng.uniform(2, 6), rng.uniform(2, 6)};
      slot.score = rng.uniform(0.5, 1.0);
    }
    s.dets.push_back(std::move(dets));
    BoxPair cao;
    if (rng.uniform() < cao_prob) {
      cao = BoxPair::single(Box{rng.uniform(2, cfg.image_size - 2.0), rng.uniform(2, cfg.image_size - 2.0),
                                rng.uniform(2, 6), rng.uniform(2, 6)});
    }
    s.cao_gt.push_back(cao);
  }
  s.nao_gt = BoxPair::single(Box{rng.uniform(2, cfg.image_size - 2.0), rng.uniform(2, cfg.image_size - 2.0),
                                 rng.uniform(2, 6), rng.uniform(2, 6)});
  return s;
}

}  // namespace

TEST_CASE("loss_feat equals the brute-force sum of squared distances") {
  Tape tape;
  Rng rng(3);
  const std::size_t T = 4, D = 6;
  std::vector<Var> zhat, z;
  std::vector<Tensor> zhat_t, z_t;
  for (std::size_t t = 0; t < T; ++t) {
    zhat_t.push_back(random_tensor(Shape{D}, rng));
    z_t.push_back(random_tensor(Shape{D}, rng));
    zhat.push_back(tape.leaf(zhat_t.back(), true));
    z.push_back(tape.leaf(z_t.back(), true));
  }
  const double got = loss_feat(tape, zhat, z).value().item();
  double expect = 0.0;
  for (std::size_t t = 0; t + 1 < T; ++t) {
    for (std::size_t i = 0; i < D; ++i) {
      const double d = zhat_t[t][i] - z_t[t + 1][i];
      expect += d * d;
    }
  }
  CHECK(std::abs(got - expect) < 1e-12);

  SUBCASE("perfect prediction gives zero") {
    std::vector<Var> shifted;
    for (std::size_t t = 0; t + 1 < T; ++t) shifted.push_back(tape.constant(z_t[t + 1]));
    shifted.push_back(tape.constant(z_t[0]));  // last entry unused by the sum
    CHECK(loss_feat(tape, shifted, z).value().item() == doctest::Approx(0.0));
  }
  SUBCASE("one unit coordinate difference gives one") {
    Tensor a(Shape{3}, {1.0, 2.0, 3.0});
    Tensor b = a;
    b[1] += 1.0;
    std::vector<Var> zh{tape.constant(b), tape.constant(a)};
    std::vector<Var> zz{tape.constant(Tensor(Shape{3}, 0.0)), tape.constant(a)};
    CHECK(loss_feat(tape, zh, zz).value().item() == doctest::Approx(1.0));
  }
  SUBCASE("length mismatch errors") {
    std::vector<Var> shorter(zhat.begin(), zhat.end() - 1);
    CHECK_THROWS_AS(loss_feat(tape, shorter, z), std::invalid_argument);
  }
}

TEST_CASE("loss_feat targets are detached") {
  Tape tape;
  Var zhat0 = tape.leaf(Tensor(Shape{2}, {1.0, 2.0}), true);
  Var zhat1 = tape.leaf(Tensor(Shape{2}, {0.5, 0.5}), true);
  Var z0 = tape.leaf(Tensor(Shape{2}, {0.0, 0.0}), true);
  Var z1 = tape.leaf(Tensor(Shape{2}, {3.0, 5.0}), true);
  std::vector<Var> zhat{zhat0, zhat1}, z{z0, z1};
  Var loss = loss_feat(tape, zhat, z);
  const auto grads = tape.gradients(loss, std::vector<Var>{zhat0, z1});
  CHECK(grads[0][0] == doctest::Approx(2.0 * (1.0 - 3.0)));
  // The target z1 receives nothing through the loss.
  CHECK(grads[1][0] == 0.0);
  CHECK(grads[1][1] == 0.0);
}

TEST_CASE("loss_cao masks invalid slots and matches brute force") {
  Tape tape;
  Rng rng(5);
  const std::size_t T = 5;
  std::vector<Var> yhat;
  std::vector<Tensor> yhat_t;
  std::vector<BoxPair> gt(T);
  for (std::size_t t = 0; t < T; ++t) {
    yhat_t.push_back(random_tensor(Shape{8}, rng));
    yhat.push_back(tape.constant(yhat_t.back()));
    if (t % 2 == 0) {
      gt[t].boxes[0] = Box{rng.uniform(0, 32), rng.uniform(0, 32), rng.uniform(1, 8), rng.uniform(1, 8)};
      gt[t].valid[0] = true;
    }
    if (t == 2) {
      gt[t].boxes[1] = Box{rng.uniform(0, 32), rng.uniform(0, 32), rng.uniform(1, 8), rng.uniform(1, 8)};
      gt[t].valid[1] = true;
    }
  }
  const double got = loss_cao(tape, yhat, gt).value().item();
  double expect = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const auto flat = gt[t].flat();
    for (std::size_t slot = 0; slot < 2; ++slot) {
      if (!gt[t].valid[slot]) continue;
      for (std::size_t k = 0; k < 4; ++k) {
        const double d = yhat_t[t][slot * 4 + k] - flat[slot * 4 + k];
        expect += d * d;
      }
    }
  }
  CHECK(std::abs(got - expect) < 1e-12);

  SUBCASE("all-invalid ground truth gives exactly zero") {
    std::vector<BoxPair> none(T);
    CHECK(loss_cao(tape, yhat, none).value().item() == 0.0);
  }
  SUBCASE("a unit error in one coordinate gives one") {
    BoxPair single = BoxPair::single(Box{7.0, 3.0, 2.0, 2.0});
    Tensor pred(Shape{8}, 0.0);
    pred[0] = 8.0;  // +1 on x, exact elsewhere
    pred[1] = 3.0;
    pred[2] = 2.0;
    pred[3] = 2.0;
    std::vector<Var> one{tape.constant(pred)};
    std::vector<BoxPair> gt1{single};
    CHECK(loss_cao(tape, one, gt1).value().item() == doctest::Approx(1.0));
  }
  SUBCASE("adding an invalid slot never changes the value") {
    std::vector<BoxPair> altered = gt;
    altered[1].boxes[1] = Box{5, 5, 3, 3};
    altered[1].valid[1] = false;  // present data, invalid mask
    const double same = loss_cao(tape, yhat, altered).value().item();
    CHECK(same == got);
  }
}

TEST_CASE("loss_nao matches hand computation and rejects absent ground truth") {
  Tape tape;
  BoxPair gt;
  gt.boxes[0] = Box{8, 8, 4, 4};
  gt.valid[0] = true;
  gt.boxes[1] = Box{16, 24, 8, 4};
  gt.valid[1] = true;

  Tensor pred(Shape{8}, {7.7, 8.1, 4.4, 3.9, 15.8, 24.2, 8.3, 4.2});
  Var y = tape.constant(pred);
  const double got = loss_nao(tape, y, gt).value().item();
  double expect = 0.0;
  const auto flat = gt.flat();
  for (std::size_t k = 0; k < 8; ++k) {
    const double d = pred[k] - flat[k];
    expect += d * d;
  }
  CHECK(std::abs(got - expect) < 1e-12);

  SUBCASE("exact prediction gives zero") {
    Tensor exact(Shape{8});
    for (std::size_t k = 0; k < 8; ++k) exact[k] = flat[k];
    CHECK(loss_nao(tape, tape.constant(exact), gt).value().item() == doctest::Approx(0.0));
  }
  SUBCASE("a unit error in one coordinate gives one") {
    Tensor off(Shape{8});
    for (std::size_t k = 0; k < 8; ++k) off[k] = flat[k];
    off[5] += 1.0;
    CHECK(loss_nao(tape, tape.constant(off), gt).value().item() == doctest::Approx(1.0));
  }
  SUBCASE("absent ground truth is an error") {
    CHECK_THROWS_AS(loss_nao(tape, y, BoxPair{}), std::invalid_argument);
  }
}

TEST_CASE("combine_loss applies the configured weights") {
  Tape tape;
  Var feat = tape.constant_scalar(2.0);
  Var cao = tape.constant_scalar(4.0);
  Var nao = tape.constant_scalar(3.0);
  LossWeights defaults;
  CHECK(defaults.lambda1 == 0.5);
  CHECK(defaults.lambda2 == 1.0);
  CHECK(defaults.feat_weight == 1.0);
  CHECK(combine_loss(tape, feat, cao, nao, defaults).value().item() == doctest::Approx(7.0));

  LossWeights feat_only{0.0, 0.0, 1.0};
  CHECK(combine_loss(tape, feat, cao, nao, feat_only).value().item() == doctest::Approx(2.0));
  CHECK_THROWS_AS(combine_loss(tape, feat, cao, nao, LossWeights{-1.0, 1.0, 1.0}), std::invalid_argument);
}

namespace {

// The objective detaches the feature-loss targets, so its gradient is that
// of the loss with targets held at the linearization point. This oracle
// evaluates exactly that function: targets frozen at the base parameters.
double frozen_target_objective(const AnticipationModel& model, const ModelSample& sample,
                               const LossWeights& weights, const std::vector<Tensor>& frozen_z) {
  Tape tape;
  const ClipForward fwd = model.forward(tape, sample.frames, sample.dets, &sample.cao_gt);
  const std::size_t T = fwd.yhat.size();
  Var feat = tape.constant_scalar(0.0);
  for (std::size_t t = 0; t + 1 < T; ++t) {
    feat = add(feat, squared_distance(fwd.zhat[t], tape.constant(frozen_z[t + 1])));
  }
  Var cao = loss_cao(tape, std::span<const Var>(fwd.yhat.data(), T - 1),
                     std::span<const BoxPair>(sample.cao_gt.data(), T - 1));
  Var nao = loss_nao(tape, fwd.yhat.back(), sample.nao_gt);
  return combine_loss(tape, feat, cao, nao, weights).value().item();
}

std::vector<Tensor> capture_z(const AnticipationModel& model, const ModelSample& sample) {
  Tape tape;
  const ClipForward fwd = model.forward(tape, sample.frames, sample.dets, &sample.cao_gt);
  std::vector<Tensor> z;
  for (const Var& v : fwd.z) z.push_back(v.value());
  return z;
}

}  // namespace

TEST_CASE("combined-loss gradients match finite differences on a tiny model") {
  const ModelConfig cfg = probe_config();
  auto model = make_model(ModelKind::kTanacto, cfg, Rng(61).substream("init"));
  Rng rng(21);
  const ModelSample sample = random_sample(cfg, rng);
  const LossWeights weights;

  const std::vector<Tensor> frozen_z = capture_z(*model, sample);
  std::vector<Tensor> ad_grads;
  {
    Tape tape;
    const ClipLossTerms terms = clip_loss(tape, *model, sample, weights, true);
    ad_grads = tape.gradients(terms.combined, terms.forward.param_vars);
  }

  ParamStore& store = model->params();
  Rng pick(31);
  double max_rel = 0.0;
  const double h = 1e-5;
  for (std::size_t p = 0; p < store.count(); ++p) {
    Tensor& value = store.value(p);
    for (int probe = 0; probe < 2; ++probe) {
      const std::size_t k = pick.below(value.size());
      const double orig = value[k];
      value[k] = orig + h;
      const double fp = frozen_target_objective(*model, sample, weights, frozen_z);
      value[k] = orig - h;
      const double fm = frozen_target_objective(*model, sample, weights, frozen_z);
      value[k] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      max_rel = std::max(max_rel, anacto::test::rel_err(ad_grads[p][k], fd));
    }
  }
  CHECK(max_rel < 1e-3);
}

TEST_CASE("every named parameter group participates in the objective") {
  const ModelConfig cfg = probe_config();
  auto model = make_model(ModelKind::kTanacto, cfg, Rng(71).substream("init"));
  Rng rng(22);
  ModelSample sample = random_sample(cfg, rng, 0.5);  // mixed validity
  const LossWeights weights;
  const std::vector<Tensor> frozen_z = capture_z(*model, sample);

  ParamStore& store = model->params();
  Rng pick(41);
  const double h = 1e-4;
  for (std::size_t p = 0; p < store.count(); ++p) {
    Tensor& value = store.value(p);
    bool group_active = false;
    for (int probe = 0; probe < 3 && !group_active; ++probe) {
      const std::size_t k = pick.below(value.size());
      const double orig = value[k];
      value[k] = orig + h;
      const double fp = frozen_target_objective(*model, sample, weights, frozen_z);
      value[k] = orig - h;
      const double fm = frozen_target_objective(*model, sample, weights, frozen_z);
      value[k] = orig;
      group_active = std::abs(fp - fm) / (2.0 * h) > 1e-12;
    }
    CAPTURE(store.name(p));
    CHECK(group_active);
  }
}

TEST_CASE("with lambda1 zero the cao path contributes no gradient") {
  const ModelConfig cfg = probe_config();
  auto model = make_model(ModelKind::kTanacto, cfg, Rng(81).substream("init"));
  Rng rng(23);
  const ModelSample sample = random_sample(cfg, rng);

  auto grads_with = [&](bool include_cao_term) {
    Tape tape;
    const ClipForward fwd = model->forward(tape, sample.frames, sample.dets, &sample.cao_gt);
    const std::size_t T = fwd.yhat.size();
    Var feat = loss_feat(tape, fwd.zhat, fwd.z);
    Var nao = loss_nao(tape, fwd.yhat.back(), sample.nao_gt);
    Var total;
    if (include_cao_term) {
      Var cao = loss_cao(tape, std::span<const Var>(fwd.yhat.data(), T - 1),
                         std::span<const BoxPair>(sample.cao_gt.data(), T - 1));
      total = combine_loss(tape, feat, cao, nao, LossWeights{0.0, 1.0, 1.0});
    } else {
      total = add(feat, nao);
    }
    return tape.gradients(total, fwd.param_vars);
  };

  const auto a = grads_with(true);   // lambda1 = 0, cao term present
  const auto b = grads_with(false);  // cao term absent entirely
  REQUIRE(a.size() == b.size());
  for (std::size_t p = 0; p < a.size(); ++p) {
    for (std::size_t k = 0; k < a[p].size(); ++k) CHECK(a[p][k] == b[p][k]);  // bitwise
  }
}

TEST_CASE("training is deterministic and the single-clip loss is near-monotone") {
  const ModelConfig cfg = probe_config();
  Rng rng(25);
  std::vector<ModelSample> clip{random_sample(cfg, rng)};

  TrainConfig tc;
  tc.model_cfg = cfg;
  tc.prep.num_frames = cfg.num_frames;
  tc.batch_size = 1;
  tc.seed = 5;
  tc.sgd.epochs = 30;  // default learning rate: smooth descent regime

  Trainer t1(tc, clip, {});
  const TrainResult r1 = t1.run();
  Trainer t2(tc, clip, {});
  const TrainResult r2 = t2.run();

  REQUIRE(r1.metrics.size() == r2.metrics.size());
  for (std::size_t e = 0; e < r1.metrics.size(); ++e) {
    CHECK(r1.metrics[e].loss_total == r2.metrics[e].loss_total);  // bitwise
    CHECK(r1.metrics[e].loss_feat == r2.metrics[e].loss_feat);
  }

  int non_increasing = 0;
  for (std::size_t e = 1; e < r1.metrics.size(); ++e) {
    if (r1.metrics[e].loss_total <= r1.metrics[e - 1].loss_total) ++non_increasing;
  }
  const double frac = static_cast<double>(non_increasing) / static_cast<double>(r1.metrics.size() - 1);
  CHECK(frac >= 0.9);
  CHECK(r1.metrics.back().loss_total < r1.metrics.front().loss_total);
}

TEST_CASE("nao-only ablation zeroes lambda1 exactly") {
  TrainConfig tc;
  tc.ablation = Ablation::kNaoOnly;
  CHECK(tc.effective_weights().lambda1 == 0.0);
  CHECK(tc.effective_weights().lambda2 == 1.0);
  tc.ablation = Ablation::kFull;
  CHECK(tc.effective_weights().lambda1 == 0.5);
}

TEST_CASE("config validation catches frame-count mismatches") {
  TrainConfig tc;
  tc.model_cfg = probe_config();
  tc.prep.num_frames = tc.model_cfg.num_frames + 1;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
}

TEST_CASE("attention shifts toward a salient object after overfitting one clip") {
  ModelConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 4;  // 4x4 patch grid
  cfg.embed_dim = 16;
  cfg.enc_layers = 1;
  cfg.dec_layers = 1;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  cfg.num_frames = 3;

  // One clip: an object occupying the lower-right quadrant, which is also
  // the regression target. No detections, so only pixels carry signal.
  Raster with_obj(16, 16, {20, 20, 20});
  for (int y = 8; y < 16; ++y)
    for (int x = 8; x < 16; ++x) {
      auto* p = with_obj.px(x, y);
      p[0] = 230;
      p[1] = 60;
      p[2] = 60;
    }
  const Raster without_obj(16, 16, {20, 20, 20});

  ModelSample sample;
  sample.clip_id = "salient";
  sample.frames.assign(3, with_obj);
  sample.dets.assign(3, DetectionSet(static_cast<std::size_t>(cfg.num_categories)));
  sample.cao_gt.assign(3, BoxPair{});
  sample.nao_gt = BoxPair::single(Box{12, 12, 8, 8});

  TrainConfig tc;
  tc.model_cfg = cfg;
  tc.prep.num_frames = cfg.num_frames;
  tc.batch_size = 1;
  tc.seed = 9;
  tc.sgd.learning_rate = 2e-3;
  tc.sgd.epochs = 120;

  Trainer trainer(tc, {sample}, {});
  const TrainResult result = trainer.run();
  CHECK(result.metrics.back().loss_total < result.metrics.front().loss_total);

  const VitEncoder* enc = trainer.model().vit_encoder();
  REQUIRE(enc != nullptr);
  const DetectionSet no_dets(static_cast<std::size_t>(cfg.num_categories));
  const Tensor map_with = spatial_attention_map(*enc, trainer.model().params(), with_obj, no_dets);
  const Tensor map_without = spatial_attention_map(*enc, trainer.model().params(), without_obj, no_dets);

  std::size_t argmax = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < map_with.size(); ++i) {
    const double d = std::abs(map_with[i] - map_without[i]);
    if (d > best) {
      best = d;
      argmax = i;
    }
  }
  // Lower-right quadrant patches of the 4x4 grid.
  const bool in_object = (argmax % 4 >= 2) && (argmax / 4 >= 2);
  CHECK(in_object);
}
