#pragma once

// Token masking and the multimodal fusion module that predicts masked tokens
// from concatenated image and text features.

#include <vector>

#include "vlp/datagen.hpp"
#include "vlp/nn.hpp"
#include "vlp/tensor.hpp"

namespace vlp {

struct MaskingOutcome {
  std::vector<int> masked_tokens;       // [B*L], MASK id at masked positions
  std::vector<uint8_t> mask_positions;  // [B*L]
  std::vector<int> targets;             // [B*L], original ids (valid at masks)
  int64_t batch = 0;
  int64_t len = 0;
};

// Each non-special position is masked independently with probability `rate`
// and replaced by the MASK id (plain replacement, no 80/10/10 split unless
// `bert_style_corruption`). A sequence that draws zero masks gets one eligible
// position masked so the loss is always defined.
MaskingOutcome mask_tokens(const std::vector<int>& tokens, int64_t batch, int64_t len, double rate,
                           const Vocabulary& vocab, Rng& rng, bool bert_style_corruption = false);

struct FusionConfig {
  int image_channels = 64;  // channel dim of the pre-pool feature map
  int image_tokens = 16;    // flattened spatial positions
  int width = 64;
  int heads = 4;
  int layers = 2;
  int max_text_len = 32;
  int vocab_size = 0;
  void validate() const;
};

struct FusionModule {
  FusionConfig cfg;
  Linear img_adapter;  // image channels -> fusion width
  Param pos_embed;     // [image_tokens + max_text_len, width]
  std::vector<TransformerBlock> blocks;
  LayerNormP final_ln;
  Linear head;  // width -> vocab logits at text positions

  FusionModule() = default;
  FusionModule(const FusionConfig& cfg, uint64_t seed);

  // image_map: [B,C,H,W] pre-pool features; text_feats: [B,L,width]
  // returns logits [B,L,V]
  Var fuse_and_predict(Tape& t, Var image_map, Var text_feats);
  // fused features at every position, [B, image_tokens+L, width]; used by the
  // VQA head
  Var fused_features(Tape& t, Var image_map, Var text_feats);

  void collect(std::vector<Param*>& out);
};

}  // namespace vlp
