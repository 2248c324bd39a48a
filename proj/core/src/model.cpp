#include "anacto/model.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "anacto/errors.hpp"

#include <cstdlib>

namespace anacto {

namespace {

using nlohmann::json;

Var mlp_forward(Tape&, const Binder& B, Var x, PRef w1, PRef b1, PRef w2, PRef b2) {
  return linear(gelu(linear(x, B[w1], B[b1])), B[w2], B[b2]);
}

TransformerBlockRefs make_block(const ModelConfig& cfg, ParamStore& store, Rng& init,
                                const std::string& prefix) {
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  const auto hidden = static_cast<std::size_t>(cfg.embed_dim * cfg.mlp_ratio);
  TransformerBlockRefs b;
  b.ln1_g = store.add(prefix + ".ln1.gamma", Tensor(Shape{d}, 1.0));
  b.ln1_b = store.add(prefix + ".ln1.beta", init_zeros(Shape{d}));
  b.wq = store.add(prefix + ".attn.wq", init_linear_weight(d, d, init));
  b.bq = store.add(prefix + ".attn.bq", init_zeros(Shape{d}));
  b.wk = store.add(prefix + ".attn.wk", init_linear_weight(d, d, init));
  b.wv = store.add(prefix + ".attn.wv", init_linear_weight(d, d, init));
  b.bv = store.add(prefix + ".attn.bv", init_zeros(Shape{d}));
  b.wo = store.add(prefix + ".attn.wo", init_linear_weight(d, d, init));
  b.bo = store.add(prefix + ".attn.bo", init_zeros(Shape{d}));
  b.ln2_g = store.add(prefix + ".ln2.gamma", Tensor(Shape{d}, 1.0));
  b.ln2_b = store.add(prefix + ".ln2.beta", init_zeros(Shape{d}));
  b.w1 = store.add(prefix + ".mlp.w1", init_linear_weight(d, hidden, init));
  b.b1 = store.add(prefix + ".mlp.b1", init_zeros(Shape{hidden}));
  b.w2 = store.add(prefix + ".mlp.w2", init_linear_weight(hidden, d, init));
  b.b2 = store.add(prefix + ".mlp.b2", init_zeros(Shape{d}));
  return b;
}

Var transformer_block(Tape& tape, const Binder& B, const TransformerBlockRefs& blk, Var x,
                      const AttnMask& mask, int heads, std::vector<Tensor>* attn_capture) {
  MhaParams p{B[blk.wq], B[blk.bq], B[blk.wk], B[blk.wv], B[blk.bv], B[blk.wo], B[blk.bo]};
  Var normed = layer_norm(x, B[blk.ln1_g], B[blk.ln1_b]);
  Var attended = masked_multi_head_attention(normed, normed, normed, mask,
                                             static_cast<std::size_t>(heads), p, attn_capture);
  Var h = add(x, attended);
  Var normed2 = layer_norm(h, B[blk.ln2_g], B[blk.ln2_b]);
  Var ff = mlp_forward(tape, B, normed2, blk.w1, blk.b1, blk.w2, blk.b2);
  return add(h, ff);
}

}  // namespace

std::string to_string(FusionMode mode) {
  return mode == FusionMode::kSum ? "sum" : "concat_project";
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kTanacto: return "tanacto";
    case ModelKind::kRecurrent: return "recurrent";
    case ModelKind::kFramewise: return "framewise";
  }
  throw std::invalid_argument("to_string: bad ModelKind");
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "sum") return FusionMode::kSum;
  if (s == "concat_project") return FusionMode::kConcatProject;
  throw std::invalid_argument("fusion_mode_from_string: unknown mode '" + s + "'");
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "tanacto") return ModelKind::kTanacto;
  if (s == "recurrent") return ModelKind::kRecurrent;
  if (s == "framewise") return ModelKind::kFramewise;
  throw std::invalid_argument("model_kind_from_string: unknown model '" + s + "'");
}

ModelConfig ModelConfig::paper_scale() {
  ModelConfig cfg;
  cfg.image_size = 224;
  cfg.patch_size = 16;
  cfg.embed_dim = 768;
  cfg.heads = 12;
  return cfg;
}

void ModelConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0) throw std::invalid_argument("ModelConfig: non-positive sizes");
  if (image_size % patch_size != 0) {
    throw std::invalid_argument("ModelConfig: image_size " + std::to_string(image_size) +
                                " not divisible by patch_size " + std::to_string(patch_size));
  }
  if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0) {
    throw std::invalid_argument("ModelConfig: embed_dim must be positive and divisible by heads");
  }
  if (enc_layers < 1 || dec_layers < 1) throw std::invalid_argument("ModelConfig: layers must be >= 1");
  if (mlp_ratio < 1) throw std::invalid_argument("ModelConfig: mlp_ratio must be >= 1");
  if (num_categories < 1) throw std::invalid_argument("ModelConfig: num_categories must be >= 1");
  if (num_frames < 1) throw std::invalid_argument("ModelConfig: num_frames must be >= 1");
}

std::string model_config_to_json(ModelKind kind, const ModelConfig& cfg) {
  json j;
  j["kind"] = to_string(kind);
  j["image_size"] = cfg.image_size;
  j["patch_size"] = cfg.patch_size;
  j["embed_dim"] = cfg.embed_dim;
  j["enc_layers"] = cfg.enc_layers;
  j["dec_layers"] = cfg.dec_layers;
  j["heads"] = cfg.heads;
  j["mlp_ratio"] = cfg.mlp_ratio;
  j["num_categories"] = cfg.num_categories;
  j["num_frames"] = cfg.num_frames;
  j["fusion"] = to_string(cfg.fusion);
  return j.dump();
}

std::pair<ModelKind, ModelConfig> model_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DataError(std::string("model config: JSON parse error: ") + e.what());
  }
  ModelConfig cfg;
  ModelKind kind;
  try {
    kind = model_kind_from_string(j.at("kind").get<std::string>());
    cfg.image_size = j.at("image_size").get<int>();
    cfg.patch_size = j.at("patch_size").get<int>();
    cfg.embed_dim = j.at("embed_dim").get<int>();
    cfg.enc_layers = j.at("enc_layers").get<int>();
    cfg.dec_layers = j.at("dec_layers").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.mlp_ratio = j.at("mlp_ratio").get<int>();
    cfg.num_categories = j.at("num_categories").get<int>();
    cfg.num_frames = j.at("num_frames").get<int>();
    cfg.fusion = fusion_mode_from_string(j.at("fusion").get<std::string>());
  } catch (const json::exception& e) {
    throw DataError(std::string("model config: schema error: ") + e.what());
  }
  cfg.validate();
  return {kind, cfg};
}

Tensor patchify(const Raster& frame, int patch_size) {
  if (patch_size <= 0 || frame.width != frame.height || frame.width % patch_size != 0) {
    throw std::invalid_argument("patchify: frame size " + std::to_string(frame.width) + "x" +
                                std::to_string(frame.height) + " not divisible into " +
                                std::to_string(patch_size) + "-pixel patches");
  }
  const int per_side = frame.width / patch_size;
  const int patch_dim = patch_size * patch_size * 3;
  Tensor out(Shape{static_cast<std::size_t>(per_side * per_side), static_cast<std::size_t>(patch_dim)});
  std::size_t row = 0;
  for (int pi = 0; pi < per_side; ++pi) {
    for (int pj = 0; pj < per_side; ++pj, ++row) {
      std::size_t k = 0;
      for (int r = 0; r < patch_size; ++r) {
        for (int c = 0; c < patch_size; ++c) {
          const auto* px = frame.px(pj * patch_size + c, pi * patch_size + r);
          for (int ch = 0; ch < 3; ++ch, ++k) {
            out[row * static_cast<std::size_t>(patch_dim) + k] = px[ch] / 255.0 - 0.5;
          }
        }
      }
    }
  }
  return out;
}

Raster unpatchify(const Tensor& patches, int image_size, int patch_size) {
  const int per_side = image_size / patch_size;
  const int patch_dim = patch_size * patch_size * 3;
  if (patches.rank() != 2 || patches.extent(0) != static_cast<std::size_t>(per_side * per_side) ||
      patches.extent(1) != static_cast<std::size_t>(patch_dim)) {
    throw std::invalid_argument("unpatchify: patch matrix shape mismatch");
  }
  Raster img(image_size, image_size);
  std::size_t row = 0;
  for (int pi = 0; pi < per_side; ++pi) {
    for (int pj = 0; pj < per_side; ++pj, ++row) {
      std::size_t k = 0;
      for (int r = 0; r < patch_size; ++r) {
        for (int c = 0; c < patch_size; ++c) {
          auto* px = img.px(pj * patch_size + c, pi * patch_size + r);
          for (int ch = 0; ch < 3; ++ch, ++k) {
            const double v = (patches[row * static_cast<std::size_t>(patch_dim) + k] + 0.5) * 255.0;
            px[ch] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
          }
        }
      }
    }
  }
  return img;
}

Tensor detections_to_tensor(const DetectionSet& dets, double image_size) {
  Tensor out(Shape{dets.num_categories(), 5});
  for (std::size_t i = 0; i < dets.num_categories(); ++i) {
    const Detection& d = dets.slots[i];
    if (d.empty()) continue;
    // centered encoding: zero-mean inputs condition SGD much better than
    // all-positive ones; empty slots stay exactly zero
    out[i * 5 + 0] = d.box.x / image_size - 0.5;
    out[i * 5 + 1] = d.box.y / image_size - 0.5;
    out[i * 5 + 2] = d.box.w / image_size - 0.5;
    out[i * 5 + 3] = d.box.h / image_size - 0.5;
    out[i * 5 + 4] = d.score - 0.5;
  }
  return out;
}

Tensor box_pair_feedback(const BoxPair& pair, double image_size) {
  Tensor out(Shape{10});
  const auto flat = pair.flat();
  for (std::size_t slot = 0; slot < 2; ++slot) {
    if (!pair.valid[slot]) continue;  // invalid slots stay exactly zero
    for (std::size_t k = 0; k < 4; ++k) {
      out[slot * 4 + k] = flat[slot * 4 + k] / image_size - 0.5;
    }
  }
  out[8] = pair.valid[0] ? 1.0 : 0.0;
  out[9] = pair.valid[1] ? 1.0 : 0.0;
  return out;
}

BoxPair prediction_to_box_pair(const Tensor& yhat, double image_size, bool clamp_to_bounds) {
  if (yhat.size() != 8) throw std::invalid_argument("prediction_to_box_pair: expected 8 values");
  BoxPair out;
  for (std::size_t slot = 0; slot < 2; ++slot) {
    Box b;
    b.x = yhat[slot * 4 + 0];
    b.y = yhat[slot * 4 + 1];
    b.w = yhat[slot * 4 + 2];
    b.h = yhat[slot * 4 + 3];
    if (clamp_to_bounds) {
      b.w = std::clamp(b.w, 0.0, image_size);
      b.h = std::clamp(b.h, 0.0, image_size);
      b.x = std::clamp(b.x, 0.0, image_size);
      b.y = std::clamp(b.y, 0.0, image_size);
    }
    out.boxes[slot] = b;
    out.valid[slot] = true;
  }
  return out;
}

// --- VitEncoder ----------------------------------------------------------

VitEncoder::VitEncoder(const ModelConfig& cfg, ParamStore& store, Rng& init, const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  const auto pdim = static_cast<std::size_t>(cfg.patch_dim());
  const auto tokens = static_cast<std::size_t>(cfg.patch_count() + 1);

  patch_w_ = store.add(prefix + ".patch.w", init_linear_weight(pdim, d, init));
  patch_b_ = store.add(prefix + ".patch.b", init_zeros(Shape{d}));
  cls_ = store.add(prefix + ".cls", init_embedding(Shape{d}, init));
  pos_ = store.add(prefix + ".pos", init_embedding(Shape{tokens, d}, init));
  for (int l = 0; l < cfg.enc_layers; ++l) {
    blocks_.push_back(make_block(cfg, store, init, prefix + ".block" + std::to_string(l)));
  }
  const char* fg = std::getenv("ANACTO_FEAT_GAMMA");
  lnf_g_ = store.add(prefix + ".lnf.gamma", Tensor(Shape{d}, fg ? std::atof(fg) : 1.0));
  lnf_b_ = store.add(prefix + ".lnf.beta", init_zeros(Shape{d}));

  const auto det_dim = static_cast<std::size_t>(cfg.detection_dim());
  fm_w1_ = store.add(prefix + ".fmlp.w1", init_linear_weight(det_dim, d, init));
  fm_b1_ = store.add(prefix + ".fmlp.b1", init_zeros(Shape{d}));
  fm_w2_ = store.add(prefix + ".fmlp.w2", init_linear_weight(d, d, init));
  fm_b2_ = store.add(prefix + ".fmlp.b2", init_zeros(Shape{d}));
  if (cfg.fusion == FusionMode::kConcatProject) {
    fuse_w_ = store.add(prefix + ".fuse.w", init_linear_weight(2 * d, d, init));
    fuse_b_ = store.add(prefix + ".fuse.b", init_zeros(Shape{d}));
  }
  temporal_ = store.add(prefix + ".temporal", init_embedding(Shape{static_cast<std::size_t>(cfg.num_frames), d}, init));
}

Var VitEncoder::backbone(Tape& tape, const Binder& B, const Raster& frame,
                         std::vector<Tensor>* attn_capture) const {
  if (frame.width != cfg_.image_size || frame.height != cfg_.image_size) {
    throw std::invalid_argument("VitEncoder: frame size " + std::to_string(frame.width) + "x" +
                                std::to_string(frame.height) + " does not match image_size " +
                                std::to_string(cfg_.image_size));
  }
  Var patches = tape.constant(patchify(frame, cfg_.patch_size));
  Var projected = add_rowvec(matmul(patches, B[patch_w_]), B[patch_b_]);
  Var cls_row = reshape(B[cls_], Shape{1, static_cast<std::size_t>(cfg_.embed_dim)});
  std::vector<Var> rows{cls_row, projected};
  Var x = add(concat_rows(rows), B[pos_]);

  const AttnMask mask = AttnMask::full(static_cast<std::size_t>(cfg_.patch_count() + 1),
                                       static_cast<std::size_t>(cfg_.patch_count() + 1));
  for (const TransformerBlockRefs& blk : blocks_) {
    x = transformer_block(tape, B, blk, x, mask, cfg_.heads, attn_capture);
  }
  x = layer_norm(x, B[lnf_g_], B[lnf_b_]);
  return select_row(x, 0);
}

Var VitEncoder::detection_embed(Tape& tape, const Binder& B, const DetectionSet& dets) const {
  if (dets.num_categories() != static_cast<std::size_t>(cfg_.num_categories)) {
    throw std::invalid_argument("VitEncoder: detection set has " + std::to_string(dets.num_categories()) +
                                " slots, expected " + std::to_string(cfg_.num_categories));
  }
  Tensor flat = detections_to_tensor(dets, cfg_.image_size);
  Var v = tape.constant(Tensor(Shape{static_cast<std::size_t>(cfg_.detection_dim())},
                               std::vector<double>(flat.data().begin(), flat.data().end())));
  return linear(gelu(linear(v, B[fm_w1_], B[fm_b1_])), B[fm_w2_], B[fm_b2_]);
}

EncodeResult VitEncoder::encode(Tape& tape, const Binder& B, const Raster& frame, const DetectionSet& dets,
                                bool capture_attention) const {
  EncodeResult result;
  Var cls_out = backbone(tape, B, frame, capture_attention ? &result.attn : nullptr);
  Var det = detection_embed(tape, B, dets);
  if (cfg_.fusion == FusionMode::kSum) {
    result.z = add(cls_out, det);
  } else {
    std::vector<Var> parts{cls_out, det};
    result.z = linear(concat_vec(parts), B[fuse_w_], B[fuse_b_]);
  }
  return result;
}

Var VitEncoder::temporal_code(const Binder& B, int frame_slot) const {
  if (frame_slot < 0 || frame_slot >= cfg_.num_frames) {
    throw std::invalid_argument("VitEncoder: frame slot " + std::to_string(frame_slot) +
                                " outside the configured num_frames");
  }
  return select_row(B[temporal_], static_cast<std::size_t>(frame_slot));
}

// --- CausalDecoder ---------------------------------------------------------

CausalDecoder::CausalDecoder(const ModelConfig& cfg, ParamStore& store, Rng& init, const std::string& prefix)
    : cfg_(cfg) {
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  fb_w_ = store.add(prefix + ".feedback.w", init_linear_weight(10, d, init));
  fb_b_ = store.add(prefix + ".feedback.b", init_zeros(Shape{d}));
  start_ = store.add(prefix + ".start", init_embedding(Shape{d}, init));
  in_w_ = store.add(prefix + ".in.w", init_linear_weight(2 * d, d, init));
  in_b_ = store.add(prefix + ".in.b", init_zeros(Shape{d}));
  for (int l = 0; l < cfg.dec_layers; ++l) {
    blocks_.push_back(make_block(cfg, store, init, prefix + ".block" + std::to_string(l)));
  }
  const char* fg = std::getenv("ANACTO_FEAT_GAMMA");
  lnf_g_ = store.add(prefix + ".lnf.gamma", Tensor(Shape{d}, fg ? std::atof(fg) : 1.0));
  lnf_b_ = store.add(prefix + ".lnf.beta", init_zeros(Shape{d}));
  head_w_ = store.add(prefix + ".head.w", init_linear_weight(d, 8, init));
  head_b_ = store.add(prefix + ".head.b", init_zeros(Shape{8}));
}

Var CausalDecoder::block_stack(Tape& tape, const Binder& B, Var x) const {
  const std::size_t rows = x.value().extent(0);
  const AttnMask mask = AttnMask::causal(rows);
  for (const TransformerBlockRefs& blk : blocks_) {
    x = transformer_block(tape, B, blk, x, mask, cfg_.heads, nullptr);
  }
  return layer_norm(x, B[lnf_g_], B[lnf_b_]);
}

CausalDecoder::Sequence CausalDecoder::decode(Tape& tape, const Binder& B, std::span<const Var> z_seq,
                                              const std::vector<BoxPair>* teacher) const {
  const std::size_t T = z_seq.size();
  if (T == 0) throw std::invalid_argument("CausalDecoder: empty sequence");
  if (teacher && teacher->size() != T) {
    throw std::invalid_argument("CausalDecoder: teacher sequence length mismatch");
  }

  Sequence out;
  std::vector<Var> inputs;
  inputs.reserve(T);
  Var feedback;  // embedded previous active-object location
  for (std::size_t t = 0; t < T; ++t) {
    Var fb = (t == 0) ? B[start_] : feedback;
    std::vector<Var> fuse{z_seq[t], fb};
    inputs.push_back(linear(concat_vec(fuse), B[in_w_], B[in_b_]));

    Var stacked = stack_rows(std::span<const Var>(inputs.data(), t + 1));
    Var decoded = block_stack(tape, B, stacked);
    Var zhat = select_row(decoded, t);
    Var yhat = linear(zhat, B[head_w_], B[head_b_]);
    out.zhat.push_back(zhat);
    out.yhat.push_back(yhat);

    if (t + 1 < T) {
      const bool use_teacher = teacher && (*teacher)[t].any_valid();
      if (use_teacher) {
        Var fb_vec = tape.constant(box_pair_feedback((*teacher)[t], cfg_.image_size));
        feedback = linear(fb_vec, B[fb_w_], B[fb_b_]);
      } else {
        Var encoded = add(scale(yhat, 1.0 / cfg_.image_size),
                          tape.constant(Tensor(Shape{8}, -0.5)));
        std::vector<Var> fb_parts{encoded, tape.constant(Tensor(Shape{2}, 1.0))};
        feedback = linear(concat_vec(fb_parts), B[fb_w_], B[fb_b_]);
      }
    }
  }
  return out;
}

// --- RecurrentHead -----------------------------------------------------------

RecurrentHead::RecurrentHead(const ModelConfig& cfg, ParamStore& store, Rng& init, const std::string& prefix)
    : cfg_(cfg) {
  const auto d = static_cast<std::size_t>(cfg.embed_dim);
  auto make_cell = [&](const std::string& name) {
    CellRefs c;
    c.wz = store.add(name + ".wz", init_linear_weight(2 * d, d, init));
    c.bz = store.add(name + ".bz", init_zeros(Shape{d}));
    c.wr = store.add(name + ".wr", init_linear_weight(2 * d, d, init));
    c.br = store.add(name + ".br", init_zeros(Shape{d}));
    c.wc = store.add(name + ".wc", init_linear_weight(2 * d, d, init));
    c.bc = store.add(name + ".bc", init_zeros(Shape{d}));
    return c;
  };
  roll_ = make_cell(prefix + ".roll");
  unroll_ = make_cell(prefix + ".unroll");
  query_ = store.add(prefix + ".query", init_embedding(Shape{d}, init));
  head_w_ = store.add(prefix + ".head.w", init_linear_weight(d, 8, init));
  head_b_ = store.add(prefix + ".head.b", init_zeros(Shape{8}));
}

Var RecurrentHead::cell_step(Tape& tape, const Binder& B, const CellRefs& cell, Var h, Var x) const {
  std::vector<Var> hx{h, x};
  Var both = concat_vec(hx);
  Var z_gate = sigmoid(linear(both, B[cell.wz], B[cell.bz]));
  Var r_gate = sigmoid(linear(both, B[cell.wr], B[cell.br]));
  std::vector<Var> gated{mul(r_gate, h), x};
  Var candidate = tanh_op(linear(concat_vec(gated), B[cell.wc], B[cell.bc]));
  Var keep = mul(z_gate, h);
  Var ones = tape.constant(Tensor(h.value().shape(), 1.0));
  Var take = mul(sub(ones, z_gate), candidate);
  return add(keep, take);
}

CausalDecoder::Sequence RecurrentHead::roll(Tape& tape, const Binder& B, std::span<const Var> z_seq) const {
  if (z_seq.empty()) throw std::invalid_argument("RecurrentHead: empty sequence");
  CausalDecoder::Sequence out;
  Var h = tape.constant(Tensor(Shape{static_cast<std::size_t>(cfg_.embed_dim)}, 0.0));
  for (const Var& z : z_seq) {
    h = cell_step(tape, B, roll_, h, z);
    Var s = cell_step(tape, B, unroll_, h, B[query_]);
    out.zhat.push_back(s);
    out.yhat.push_back(linear(s, B[head_w_], B[head_b_]));
  }
  return out;
}

// --- concrete models -------------------------------------------------------

namespace {

void check_forward_args(const ModelConfig& cfg, std::span<const Raster> frames,
                        std::span<const DetectionSet> dets) {
  if (frames.empty()) throw std::invalid_argument("model forward: empty frame sequence");
  if (frames.size() != dets.size()) {
    throw std::invalid_argument("model forward: frames and detections differ in length");
  }
  if (frames.size() > static_cast<std::size_t>(cfg.num_frames)) {
    throw std::invalid_argument("model forward: sequence longer than configured num_frames");
  }
}

class TanactoModel final : public AnticipationModel {
 public:
  TanactoModel(const ModelConfig& cfg, Rng init)
      : cfg_(cfg), encoder_(cfg, store_, init, "enc"), decoder_(cfg, store_, init, "dec") {}

  ModelKind kind() const override { return ModelKind::kTanacto; }
  const ModelConfig& config() const override { return cfg_; }
  ParamStore& params() override { return store_; }
  const ParamStore& params() const override { return store_; }

  ClipForward forward(Tape& tape, std::span<const Raster> frames, std::span<const DetectionSet> dets,
                      const std::vector<BoxPair>* teacher) const override {
    check_forward_args(cfg_, frames, dets);
    Binder B(tape, store_);
    ClipForward out;
    out.param_vars.assign(B.all().begin(), B.all().end());
    std::vector<Var> z_dec;
    for (std::size_t t = 0; t < frames.size(); ++t) {
      Var z = encoder_.encode(tape, B, frames[t], dets[t]).z;
      out.z.push_back(z);
      z_dec.push_back(add(z, encoder_.temporal_code(B, static_cast<int>(t))));
    }
    auto seq = decoder_.decode(tape, B, z_dec, teacher);
    out.zhat = std::move(seq.zhat);
    out.yhat = std::move(seq.yhat);
    return out;
  }

  const VitEncoder* vit_encoder() const override { return &encoder_; }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  VitEncoder encoder_;
  CausalDecoder decoder_;
};

class RecurrentModel final : public AnticipationModel {
 public:
  RecurrentModel(const ModelConfig& cfg, Rng init)
      : cfg_(cfg), encoder_(cfg, store_, init, "enc"), head_(cfg, store_, init, "rec") {}

  ModelKind kind() const override { return ModelKind::kRecurrent; }
  const ModelConfig& config() const override { return cfg_; }
  ParamStore& params() override { return store_; }
  const ParamStore& params() const override { return store_; }

  ClipForward forward(Tape& tape, std::span<const Raster> frames, std::span<const DetectionSet> dets,
                      const std::vector<BoxPair>* /*teacher: no feedback path*/) const override {
    check_forward_args(cfg_, frames, dets);
    Binder B(tape, store_);
    ClipForward out;
    out.param_vars.assign(B.all().begin(), B.all().end());
    std::vector<Var> z_seq;
    for (std::size_t t = 0; t < frames.size(); ++t) {
      Var z = encoder_.encode(tape, B, frames[t], dets[t]).z;
      out.z.push_back(z);
      z_seq.push_back(add(z, encoder_.temporal_code(B, static_cast<int>(t))));
    }
    auto seq = head_.roll(tape, B, z_seq);
    out.zhat = std::move(seq.zhat);
    out.yhat = std::move(seq.yhat);
    return out;
  }

  const VitEncoder* vit_encoder() const override { return &encoder_; }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  VitEncoder encoder_;
  RecurrentHead head_;
};

// Framewise baseline: per-frame MLP embedding with no cross-frame mixing,
// detection fusion, then the same causal decoder architecture.
class FramewiseModel final : public AnticipationModel {
 public:
  FramewiseModel(const ModelConfig& cfg, Rng init) : cfg_(cfg), decoder_(cfg, store_, init, "dec") {
    Rng enc_init = init.substream("framewise-enc");
    const auto d = static_cast<std::size_t>(cfg.embed_dim);
    const auto pix = static_cast<std::size_t>(3 * cfg.image_size * cfg.image_size);
    pix_w1_ = store_.add("enc.pix.w1", init_linear_weight(pix, d, enc_init));
    pix_b1_ = store_.add("enc.pix.b1", init_zeros(Shape{d}));
    pix_w2_ = store_.add("enc.pix.w2", init_linear_weight(d, d, enc_init));
    pix_b2_ = store_.add("enc.pix.b2", init_zeros(Shape{d}));
    const auto det_dim = static_cast<std::size_t>(cfg.detection_dim());
    fm_w1_ = store_.add("enc.fmlp.w1", init_linear_weight(det_dim, d, enc_init));
    fm_b1_ = store_.add("enc.fmlp.b1", init_zeros(Shape{d}));
    fm_w2_ = store_.add("enc.fmlp.w2", init_linear_weight(d, d, enc_init));
    fm_b2_ = store_.add("enc.fmlp.b2", init_zeros(Shape{d}));
    temporal_ = store_.add("enc.temporal",
                           init_embedding(Shape{static_cast<std::size_t>(cfg.num_frames), d}, enc_init));
  }

  ModelKind kind() const override { return ModelKind::kFramewise; }
  const ModelConfig& config() const override { return cfg_; }
  ParamStore& params() override { return store_; }
  const ParamStore& params() const override { return store_; }

  Var embed_frame(Tape& tape, const Binder& B, const Raster& frame, const DetectionSet& dets) const {
    if (frame.width != cfg_.image_size || frame.height != cfg_.image_size) {
      throw std::invalid_argument("FramewiseModel: frame size mismatch");
    }
    if (dets.num_categories() != static_cast<std::size_t>(cfg_.num_categories)) {
      throw std::invalid_argument("FramewiseModel: detection slot count mismatch");
    }
    Tensor pixels(Shape{static_cast<std::size_t>(3 * cfg_.image_size * cfg_.image_size)});
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = frame.rgb[i] / 255.0 - 0.5;
    Var pix = tape.constant(std::move(pixels));
    Var emb = linear(gelu(linear(pix, B[pix_w1_], B[pix_b1_])), B[pix_w2_], B[pix_b2_]);
    Tensor det_flat = detections_to_tensor(dets, cfg_.image_size);
    Var det = tape.constant(Tensor(Shape{static_cast<std::size_t>(cfg_.detection_dim())},
                                   std::vector<double>(det_flat.data().begin(), det_flat.data().end())));
    Var det_emb = linear(gelu(linear(det, B[fm_w1_], B[fm_b1_])), B[fm_w2_], B[fm_b2_]);
    return add(emb, det_emb);
  }

  ClipForward forward(Tape& tape, std::span<const Raster> frames, std::span<const DetectionSet> dets,
                      const std::vector<BoxPair>* teacher) const override {
    check_forward_args(cfg_, frames, dets);
    Binder B(tape, store_);
    ClipForward out;
    out.param_vars.assign(B.all().begin(), B.all().end());
    std::vector<Var> z_dec;
    for (std::size_t t = 0; t < frames.size(); ++t) {
      Var z = embed_frame(tape, B, frames[t], dets[t]);
      out.z.push_back(z);
      z_dec.push_back(add(z, select_row(B[temporal_], t)));
    }
    auto seq = decoder_.decode(tape, B, z_dec, teacher);
    out.zhat = std::move(seq.zhat);
    out.yhat = std::move(seq.yhat);
    return out;
  }

 private:
  ModelConfig cfg_;
  ParamStore store_;
  PRef pix_w1_, pix_b1_, pix_w2_, pix_b2_;
  PRef fm_w1_, fm_b1_, fm_w2_, fm_b2_;
  PRef temporal_;
  CausalDecoder decoder_;
};

}  // namespace

BoxPair AnticipationModel::predict_nao(std::span<const Raster> frames,
                                       std::span<const DetectionSet> dets) const {
  Tape tape;
  ClipForward out = forward(tape, frames, dets, nullptr);
  return prediction_to_box_pair(out.yhat.back().value(), config().image_size, /*clamp_to_bounds=*/true);
}

std::unique_ptr<AnticipationModel> make_model(ModelKind kind, const ModelConfig& cfg, Rng init) {
  cfg.validate();
  switch (kind) {
    case ModelKind::kTanacto: return std::make_unique<TanactoModel>(cfg, init);
    case ModelKind::kRecurrent: return std::make_unique<RecurrentModel>(cfg, init);
    case ModelKind::kFramewise: return std::make_unique<FramewiseModel>(cfg, init);
  }
  throw std::invalid_argument("make_model: bad ModelKind");
}

Tensor attention_rollout_map(const std::vector<Tensor>& layer_attns, int grid) {
  if (layer_attns.empty()) throw std::invalid_argument("attention_rollout_map: no layers");
  const std::size_t s = layer_attns[0].extent(0);
  if (static_cast<std::size_t>(grid * grid) + 1 != s) {
    throw std::invalid_argument("attention_rollout_map: grid does not match token count");
  }
  Tensor rolled(Shape{s, s});
  for (std::size_t i = 0; i < s; ++i) rolled[i * s + i] = 1.0;

  for (const Tensor& attn : layer_attns) {
    if (attn.rank() != 2 || attn.extent(0) != s || attn.extent(1) != s) {
      throw std::invalid_argument("attention_rollout_map: layer shape mismatch");
    }
    Tensor mixed(Shape{s, s});
    for (std::size_t i = 0; i < s; ++i) {
      double row_sum = 0.0;
      for (std::size_t j = 0; j < s; ++j) {
        mixed[i * s + j] = 0.5 * attn[i * s + j] + (i == j ? 0.5 : 0.0);
        row_sum += mixed[i * s + j];
      }
      for (std::size_t j = 0; j < s; ++j) mixed[i * s + j] /= row_sum;
    }
    Tensor next(Shape{s, s});
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t k = 0; k < s; ++k) {
        const double m = mixed[i * s + k];
        if (m == 0.0) continue;
        for (std::size_t j = 0; j < s; ++j) next[i * s + j] += m * rolled[k * s + j];
      }
    rolled = std::move(next);
  }

  Tensor map(Shape{static_cast<std::size_t>(grid), static_cast<std::size_t>(grid)});
  for (int i = 0; i < grid * grid; ++i) map[static_cast<std::size_t>(i)] = rolled[1 + static_cast<std::size_t>(i)];
  return map;
}

Tensor spatial_attention_map(const VitEncoder& encoder, const ParamStore& store, const Raster& frame,
                             const DetectionSet& dets) {
  Tape tape;
  Binder B(tape, store);
  EncodeResult result = encoder.encode(tape, B, frame, dets, /*capture_attention=*/true);
  (void)result.z;
  return attention_rollout_map(result.attn, encoder.config().patches_per_side());
}

}  // namespace anacto
