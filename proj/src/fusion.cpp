#include "vlp/fusion.hpp"

#include <cmath>

namespace vlp {

MaskingOutcome mask_tokens(const std::vector<int>& tokens, int64_t batch, int64_t len, double rate,
                           const Vocabulary& vocab, Rng& rng, bool bert_style_corruption) {
  if (rate <= 0.0 || rate >= 1.0) throw ConfigError("mask rate must be in (0,1)");
  if (static_cast<int64_t>(tokens.size()) != batch * len)
    throw InputError("mask_tokens: token buffer size mismatch");
  MaskingOutcome out;
  out.batch = batch;
  out.len = len;
  out.masked_tokens = tokens;
  out.targets = tokens;
  out.mask_positions.assign(tokens.size(), 0);

  for (int64_t b = 0; b < batch; ++b) {
    std::vector<int64_t> eligible;
    for (int64_t l = 0; l < len; ++l) {
      int id = tokens[b * len + l];
      if (id != vocab.pad_id && id != vocab.cls_id) eligible.push_back(l);
    }
    if (eligible.empty())
      throw DegenerateInputError("mask_tokens: sequence " + std::to_string(b) +
                                 " has no maskable positions");
    int64_t n_masked = 0;
    for (int64_t l : eligible)
      if (rng.bernoulli(rate)) {
        out.mask_positions[b * len + l] = 1;
        ++n_masked;
      }
    if (n_masked == 0) {
      // force one mask so the masked-token expectation stays defined
      int64_t l = eligible[rng.uniform_int(eligible.size())];
      out.mask_positions[b * len + l] = 1;
    }
    for (int64_t l : eligible) {
      if (!out.mask_positions[b * len + l]) continue;
      if (!bert_style_corruption) {
        out.masked_tokens[b * len + l] = vocab.mask_id;
      } else {
        double u = rng.uniform();
        if (u < 0.8)
          out.masked_tokens[b * len + l] = vocab.mask_id;
        else if (u < 0.9)
          out.masked_tokens[b * len + l] = static_cast<int>(rng.uniform_int(vocab.size()));
        // else keep the original token
      }
    }
  }
  return out;
}

void FusionConfig::validate() const {
  if (vocab_size < 5) throw ConfigError("fusion vocab_size too small");
  if (width % heads != 0) throw ConfigError("fusion width must divide by heads");
  if (layers < 1) throw ConfigError("fusion needs at least one layer");
  if (image_tokens < 1 || max_text_len < 1) throw ConfigError("fusion sequence extents invalid");
}

FusionModule::FusionModule(const FusionConfig& c, uint64_t seed)
    : cfg(c),
      img_adapter("fusion.img_adapter", c.image_channels, c.width, seed),
      pos_embed("fusion.pos_embed", Shape{c.image_tokens + c.max_text_len, c.width}),
      final_ln("fusion.final_ln", c.width),
      head("fusion.head", c.width, c.vocab_size, seed) {
  cfg.validate();
  init_normal(pos_embed, 0.02, seed);
  for (int i = 0; i < cfg.layers; ++i)
    blocks.emplace_back("fusion.block" + std::to_string(i), cfg.width, cfg.heads, seed);
}

Var FusionModule::fused_features(Tape& t, Var image_map, Var text_feats) {
  const Shape& sm = t.shape(image_map);
  const Shape& st = t.shape(text_feats);
  if (sm.nd != 4 || sm[1] != cfg.image_channels || sm[2] * sm[3] != cfg.image_tokens)
    throw InputError("fusion: image feature map extent mismatch");
  if (st.nd != 3 || st[2] != cfg.width || st[1] > cfg.max_text_len)
    throw InputError("fusion: text feature extent mismatch");
  if (sm[0] != st[0]) throw InputError("fusion: batch mismatch between modalities");

  Var img_tokens = img_adapter.forward(t, t.spatial_to_seq(image_map));  // [B,S,width]
  Var x = t.concat_seq(img_tokens, text_feats);                          // [B,S+L,width]
  int64_t total = cfg.image_tokens + st[1];
  // image rows first, then the first L text rows of the positional table
  Var pos3 = t.reshape(t.leaf(pos_embed), Shape{1, cfg.image_tokens + cfg.max_text_len, cfg.width});
  Var pos_img = t.slice_seq(pos3, 0, cfg.image_tokens);
  Var pos_txt = t.slice_seq(pos3, cfg.image_tokens, st[1]);
  Var pos = t.concat_seq(pos_img, pos_txt);
  x = t.add_bcast(x, t.reshape(pos, Shape{total, cfg.width}));
  for (auto& blk : blocks) x = blk.forward(t, x);
  return final_ln.forward(t, x);
}

Var FusionModule::fuse_and_predict(Tape& t, Var image_map, Var text_feats) {
  const Shape& st = t.shape(text_feats);
  Var fused = fused_features(t, image_map, text_feats);
  Var text_part = t.slice_seq(fused, cfg.image_tokens, st[1]);  // [B,L,width]
  return head.forward(t, text_part);                            // [B,L,V]
}

void FusionModule::collect(std::vector<Param*>& out) {
  img_adapter.collect(out);
  out.push_back(&pos_embed);
  for (auto& b : blocks) b.collect(out);
  final_ln.collect(out);
  head.collect(out);
}

}  // namespace vlp
