#pragma once

// Vision encoder (conv stack with batch norm, attention pooling over the
// pre-pool feature map) and text encoder (embeddings + transformer blocks with
// CLS pooling), each projected to the shared embedding space and
// L2-normalized. The pre-pool feature map is exposed because the image
// feature perturbation is applied there, before attention pooling.

#include <optional>
#include <utility>
#include <vector>

#include "vlp/common.hpp"
#include "vlp/losses.hpp"
#include "vlp/nn.hpp"
#include "vlp/perturb.hpp"
#include "vlp/tensor.hpp"

namespace vlp {

struct VisionEncoderConfig {
  int image_size = 64;
  int in_channels = 1;
  std::vector<int> channels = {8, 16, 32, 64};  // one stride-2 block per entry
  int embed_dim = 64;

  int map_extent() const;  // spatial extent of the pre-pool feature map
  void validate() const;
};

struct VisionEncoder {
  VisionEncoderConfig cfg;
  std::vector<Conv2d> convs;
  std::vector<BNLayerState> bns;
  AttentionPool pool;
  LayerNormP pooled_ln;  // keeps the projection input at unit scale
  Param proj;            // [C_last, D], bias-free

  VisionEncoder() = default;
  VisionEncoder(const VisionEncoderConfig& cfg, uint64_t seed);

  // conv -> BN -> ReLU per block; output is the pre-pool feature map
  Var trunk(Tape& t, Var images, bool training);
  // attention pooling + projection + L2 normalization
  Var head(Tape& t, Var pre_pool_map);

  void collect(std::vector<Param*>& out);
  std::vector<BNLayerState*> bn_states();
};

struct TextEncoderConfig {
  int vocab_size = 0;
  int max_len = 32;
  int extra_slots = 20;  // learnable tokens appended for the VQA protocol
  int width = 64;
  int heads = 4;
  int blocks = 2;
  int embed_dim = 64;
  void validate() const;
};

struct TextEncoder {
  TextEncoderConfig cfg;
  Param tok_embed;  // [V, width]
  Param pos_embed;  // [max_len + extra_slots, width]
  std::vector<TransformerBlock> blocks;
  LayerNormP final_ln;
  Param proj;  // [width, D], bias-free

  TextEncoder() = default;
  TextEncoder(const TextEncoderConfig& cfg, uint64_t seed);

  // [B,L] ids -> [B,L,width]; extra_tokens, when given, appends that many
  // learnable positions after the ids
  Var token_features(Tape& t, const std::vector<int>& ids, int64_t batch, int64_t len,
                     const Param* extra_tokens = nullptr);
  // pooled CLS feature [B,width]
  Var pooled(Tape& t, Var token_feats);
  // projection + L2 normalization of a pooled feature
  Var project(Tape& t, Var pooled_feats);

  void collect(std::vector<Param*>& out);
};

// ---- spec-level operations ----

// training && !state.frozen updates running statistics; otherwise they are
// read-only. Declared in nn.hpp, re-exported conceptually here.

struct EncodeImageResult {
  std::vector<double> pre_pool_map;  // [B,C,H',W']
  Shape map_shape;
  EmbeddingMatrix embedding;
};

EncodeImageResult encode_image(const std::vector<double>& images, Shape image_shape,
                               VisionEncoder& enc, bool training, bool perturb_features,
                               const PerturbConfig& perturb_cfg, Rng& rng);

struct EncodeTextResult {
  std::vector<double> token_features;  // [B,L,width]
  Shape feature_shape;
  EmbeddingMatrix embedding;
};

EncodeTextResult encode_text(const std::vector<int>& tokens, int64_t batch, int64_t len,
                             TextEncoder& enc, bool training, bool perturb_features,
                             const PerturbConfig& perturb_cfg, Rng& rng);

// features [B,F] x projection [F,D], rows L2-normalized; rejects zero rows
EmbeddingMatrix project_and_normalize(const EmbeddingMatrix& features,
                                      const std::vector<double>& projection, int64_t out_dim);

}  // namespace vlp
