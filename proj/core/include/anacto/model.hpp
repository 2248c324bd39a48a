#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "anacto/boxes.hpp"
#include "anacto/image.hpp"
#include "anacto/ops.hpp"
#include "anacto/params.hpp"
#include "anacto/rng.hpp"
#include "anacto/tape.hpp"

namespace anacto {

enum class FusionMode { kSum, kConcatProject };
enum class ModelKind { kTanacto, kRecurrent, kFramewise };

std::string to_string(FusionMode mode);
std::string to_string(ModelKind kind);
FusionMode fusion_mode_from_string(const std::string& s);
ModelKind model_kind_from_string(const std::string& s);

struct ModelConfig {
  int image_size = 32;
  int patch_size = 8;
  int embed_dim = 64;
  int enc_layers = 2;
  int dec_layers = 2;
  int heads = 4;
  int mlp_ratio = 4;
  int num_categories = 8;
  int num_frames = 10;
  FusionMode fusion = FusionMode::kSum;

  static ModelConfig desk() { return ModelConfig{}; }
  // Dimensional pipeline of the full-scale model: 224x224 frames, 16x16
  // patches (196+1 tokens), 768-dim embeddings, 12 heads. Depths stay at
  // the desk values.
  static ModelConfig paper_scale();

  void validate() const;
  int patches_per_side() const { return image_size / patch_size; }
  int patch_count() const { return patches_per_side() * patches_per_side(); }
  int patch_dim() const { return patch_size * patch_size * 3; }
  int detection_dim() const { return num_categories * 5; }

  bool operator==(const ModelConfig&) const = default;
};

std::string model_config_to_json(ModelKind kind, const ModelConfig& cfg);
std::pair<ModelKind, ModelConfig> model_config_from_json(const std::string& json_text);

// Splits a frame into non-overlapping patches: row-major patch order, each
// row a flattened patch with channels interleaved last, values in [0, 1].
Tensor patchify(const Raster& frame, int patch_size);
Raster unpatchify(const Tensor& patches, int image_size, int patch_size);

// Fixed-slot detection matrix (N, 5): rows [x, y, w, h, score] with box
// coordinates normalized by the model input size. Empty slots stay zero.
Tensor detections_to_tensor(const DetectionSet& dets, double image_size);

// R^8-plus-validity feedback vector (10): normalized box coordinates of
// both slots followed by the two validity flags.
Tensor box_pair_feedback(const BoxPair& pair, double image_size);

struct TransformerBlockRefs {
  PRef ln1_g, ln1_b;
  PRef wq, bq, wk, wv, bv, wo, bo;
  PRef ln2_g, ln2_b;
  PRef w1, b1, w2, b2;
};

struct EncodeResult {
  Var z;                     // Eq.-style frame embedding (no temporal code)
  std::vector<Tensor> attn;  // per-layer head-averaged weights when captured
};

// ViT-style backbone plus detection fusion: patch projection, [cls] token,
// spatial position codes, pre-norm blocks, and the detection MLP whose
// output is summed with (or concatenated to) the [cls] feature.
class VitEncoder {
 public:
  VitEncoder(const ModelConfig& cfg, ParamStore& store, Rng& init, const std::string& prefix = "enc");

  Var backbone(Tape& tape, const Binder& B, const Raster& frame, std::vector<Tensor>* attn_capture) const;
  Var detection_embed(Tape& tape, const Binder& B, const DetectionSet& dets) const;
  EncodeResult encode(Tape& tape, const Binder& B, const Raster& frame, const DetectionSet& dets,
                      bool capture_attention = false) const;
  Var temporal_code(const Binder& B, int frame_slot) const;  // rank-1 embed_dim

  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  PRef patch_w_, patch_b_, cls_, pos_;
  std::vector<TransformerBlockRefs> blocks_;
  PRef lnf_g_, lnf_b_;
  PRef fm_w1_, fm_b1_, fm_w2_, fm_b2_;
  PRef fuse_w_, fuse_b_;  // concat_project mode only
  PRef temporal_;
};

// GPT-2-style causal decoder with active-object feedback: the input at
// step t fuses the frame feature with the embedded previous prediction
// (or the learned start token at t=0), runs masked pre-norm blocks, and
// regresses R^8 through a linear head. Decoding is incremental so that
// self-feedback and teacher forcing share one code path.
class CausalDecoder {
 public:
  CausalDecoder(const ModelConfig& cfg, ParamStore& store, Rng& init, const std::string& prefix = "dec");

  struct Sequence {
    std::vector<Var> zhat;
    std::vector<Var> yhat;  // normalized units, length 8
  };

  // z_seq must already carry temporal position codes. When `teacher` is
  // non-null, frames whose BoxPair has any valid slot feed ground truth
  // back instead of the model's own prediction.
  Sequence decode(Tape& tape, const Binder& B, std::span<const Var> z_seq,
                  const std::vector<BoxPair>* teacher) const;

 private:
  Var block_stack(Tape& tape, const Binder& B, Var x) const;

  ModelConfig cfg_;
  PRef fb_w_, fb_b_;    // feedback embedder, 10 -> D
  PRef start_;          // learned start token, D
  PRef in_w_, in_b_;    // input fusion, 2D -> D
  std::vector<TransformerBlockRefs> blocks_;
  PRef lnf_g_, lnf_b_;
  PRef head_w_, head_b_;  // D -> 8
};

// Rolling/unrolling recurrent aggregator: a gated cell consumes the frame
// features, a second cell takes one predictive unroll step from each
// hidden state, and the shared-style linear head regresses R^8.
class RecurrentHead {
 public:
  RecurrentHead(const ModelConfig& cfg, ParamStore& store, Rng& init, const std::string& prefix = "rec");

  CausalDecoder::Sequence roll(Tape& tape, const Binder& B, std::span<const Var> z_seq) const;

 private:
  struct CellRefs {
    PRef wz, bz, wr, br, wc, bc;
  };
  Var cell_step(Tape& tape, const Binder& B, const CellRefs& cell, Var h, Var x) const;

  ModelConfig cfg_;
  CellRefs roll_, unroll_;
  PRef query_;  // learned unroll input
  PRef head_w_, head_b_;
};

struct ClipForward {
  std::vector<Var> z;     // per-frame embeddings for the feature loss
  std::vector<Var> zhat;  // predicted future-frame features
  std::vector<Var> yhat;  // per-step R^8 predictions (normalized units)
  std::vector<Var> param_vars;  // bound parameter leaves, store order
};

class AnticipationModel {
 public:
  virtual ~AnticipationModel() = default;

  virtual ModelKind kind() const = 0;
  virtual const ModelConfig& config() const = 0;
  virtual ParamStore& params() = 0;
  virtual const ParamStore& params() const = 0;

  // frames/dets must have equal length T with 1 <= T <= num_frames.
  virtual ClipForward forward(Tape& tape, std::span<const Raster> frames,
                              std::span<const DetectionSet> dets,
                              const std::vector<BoxPair>* teacher) const = 0;

  // Non-null for models built on the ViT backbone (attention maps).
  virtual const VitEncoder* vit_encoder() const { return nullptr; }

  // Last-step prediction in model pixel coordinates, clamped to bounds.
  BoxPair predict_nao(std::span<const Raster> frames, std::span<const DetectionSet> dets) const;
};

std::unique_ptr<AnticipationModel> make_model(ModelKind kind, const ModelConfig& cfg, Rng init);

// Converts a normalized R^8 prediction back to model pixels.
BoxPair prediction_to_box_pair(const Tensor& yhat, double image_size, bool clamp_to_bounds);

// Attention rollout: per layer, 0.5*A + 0.5*I row-normalized, accumulated
// by matrix product; returns the [cls]->patch row as a (grid, grid) map.
Tensor attention_rollout_map(const std::vector<Tensor>& layer_attns, int grid);

// Runs the encoder with attention capture on a scratch tape and rolls the
// layers out into a per-patch weight grid.
Tensor spatial_attention_map(const VitEncoder& encoder, const ParamStore& store, const Raster& frame,
                             const DetectionSet& dets);

}  // namespace anacto
