#include "vlp/encoders.hpp"

#include <cmath>

namespace vlp {

int VisionEncoderConfig::map_extent() const {
  int e = image_size;
  for (size_t i = 0; i < channels.size(); ++i) e /= 2;
  return e;
}

void VisionEncoderConfig::validate() const {
  if (channels.empty()) throw ConfigError("vision encoder needs at least one conv block");
  int e = image_size;
  for (size_t i = 0; i < channels.size(); ++i) {
    if (e % 2 != 0) throw ConfigError("image_size must halve cleanly through every block");
    e /= 2;
  }
  if (e < 1) throw ConfigError("too many conv blocks for this image size");
  if (embed_dim < 2) throw ConfigError("embed_dim too small");
}

VisionEncoder::VisionEncoder(const VisionEncoderConfig& c, uint64_t seed)
    : cfg(c), pool("vision.pool", c.channels.back(), seed),
      pooled_ln("vision.pooled_ln", c.channels.back()),
      proj("vision.proj", Shape{c.channels.back(), c.embed_dim}) {
  cfg.validate();
  int cin = cfg.in_channels;
  for (size_t i = 0; i < cfg.channels.size(); ++i) {
    std::string base = "vision.block" + std::to_string(i);
    convs.emplace_back(base + ".conv", cin, cfg.channels[i], 3, /*stride=*/2, /*pad=*/1, seed);
    bns.emplace_back(base + ".bn", cfg.channels[i]);
    cin = cfg.channels[i];
  }
  init_normal(proj, std::sqrt(1.0 / static_cast<double>(cfg.channels.back())), seed);
}

Var VisionEncoder::trunk(Tape& t, Var images, bool training) {
  const Shape& s = t.shape(images);
  if (s.nd != 4 || s[1] != cfg.in_channels || s[2] != cfg.image_size || s[3] != cfg.image_size)
    throw InputError("vision encoder: image extents do not match configuration");
  if (!all_finite(t.val(images))) throw InputError("vision encoder: non-finite image values");
  Var x = images;
  for (size_t i = 0; i < convs.size(); ++i) {
    x = convs[i].forward(t, x);
    x = batchnorm_forward(t, x, bns[i], training);
    // GELU on the pre-pool map keeps it away from exact zeros, which the
    // normalization after attention pooling rejects; ReLU elsewhere is
    // considerably cheaper on the large early maps
    x = i + 1 == convs.size() ? t.gelu(x) : t.relu(x);
  }
  return x;
}

Var VisionEncoder::head(Tape& t, Var pre_pool_map) {
  Var seq = t.spatial_to_seq(pre_pool_map);  // [B,S,C]
  Var pooled = pool.forward(t, seq);         // [B,C]
  Var projected = t.matmul(pooled_ln.forward(t, pooled), t.leaf(proj));
  return t.l2normalize_rows(projected);
}

void VisionEncoder::collect(std::vector<Param*>& out) {
  for (auto& c : convs) c.collect(out);
  for (auto& b : bns) b.collect(out);
  pool.collect(out);
  pooled_ln.collect(out);
  out.push_back(&proj);
}

std::vector<BNLayerState*> VisionEncoder::bn_states() {
  std::vector<BNLayerState*> out;
  for (auto& b : bns) out.push_back(&b);
  return out;
}

// ---------------------------------------------------------------------------

void TextEncoderConfig::validate() const {
  if (vocab_size < 5) throw ConfigError("text encoder vocab_size too small");
  if (max_len < 2) throw ConfigError("text encoder max_len too small");
  if (extra_slots < 0) throw ConfigError("extra_slots must be >= 0");
  if (width % heads != 0) throw ConfigError("text width must divide by heads");
}

TextEncoder::TextEncoder(const TextEncoderConfig& c, uint64_t seed)
    : cfg(c),
      tok_embed("text.tok_embed", Shape{c.vocab_size, c.width}),
      pos_embed("text.pos_embed", Shape{c.max_len + c.extra_slots, c.width}),
      final_ln("text.final_ln", c.width),
      proj("text.proj", Shape{c.width, c.embed_dim}) {
  cfg.validate();
  init_normal(tok_embed, 0.02, seed);
  init_normal(pos_embed, 0.02, seed);
  for (int i = 0; i < cfg.blocks; ++i)
    blocks.emplace_back("text.block" + std::to_string(i), cfg.width, cfg.heads, seed);
  init_normal(proj, std::sqrt(1.0 / static_cast<double>(cfg.width)), seed);
}

Var TextEncoder::token_features(Tape& t, const std::vector<int>& ids, int64_t batch, int64_t len,
                                const Param* extra_tokens) {
  if (static_cast<int64_t>(ids.size()) != batch * len)
    throw InputError("text encoder: ids size mismatch");
  if (len > cfg.max_len) throw InputError("text encoder: sequence longer than max_len");
  for (int id : ids)
    if (id < 0 || id >= cfg.vocab_size)
      throw InputError("text encoder: token id out of range: " + std::to_string(id));
  Var x = t.embedding(ids, Shape{batch, len}, t.leaf(tok_embed));
  int64_t total_len = len;
  if (extra_tokens != nullptr) {
    int64_t n_extra = extra_tokens->shape[0];
    Var extra = t.broadcast0(t.leaf(const_cast<Param&>(*extra_tokens)), batch);
    x = t.concat_seq(x, extra);
    total_len += n_extra;
    if (total_len > cfg.max_len + cfg.extra_slots)
      throw InputError("text encoder: extra tokens exceed positional table");
  }
  // positional rows [0, total_len)
  Var pos_rows =
      t.slice_seq(t.reshape(t.leaf(pos_embed), Shape{1, cfg.max_len + cfg.extra_slots, cfg.width}),
                  0, total_len);
  x = t.add_bcast(x, t.reshape(pos_rows, Shape{total_len, cfg.width}));
  for (auto& blk : blocks) x = blk.forward(t, x);
  return final_ln.forward(t, x);
}

Var TextEncoder::pooled(Tape& t, Var token_feats) {
  Var cls = t.slice_seq(token_feats, 0, 1);  // [B,1,C]
  const Shape& s = t.shape(cls);
  return t.reshape(cls, Shape{s[0], s[2]});
}

Var TextEncoder::project(Tape& t, Var pooled_feats) {
  return t.l2normalize_rows(t.matmul(pooled_feats, t.leaf(proj)));
}

void TextEncoder::collect(std::vector<Param*>& out) {
  out.push_back(&tok_embed);
  out.push_back(&pos_embed);
  for (auto& b : blocks) b.collect(out);
  final_ln.collect(out);
  out.push_back(&proj);
}

// ---------------------------------------------------------------------------
// spec-level operations
// ---------------------------------------------------------------------------

EncodeImageResult encode_image(const std::vector<double>& images, Shape image_shape,
                               VisionEncoder& enc, bool training, bool perturb_features,
                               const PerturbConfig& perturb_cfg, Rng& rng) {
  Tape t;
  Var x = t.input(image_shape, images.data());
  Var premap = enc.trunk(t, x, training);
  EncodeImageResult out;
  out.pre_pool_map = t.val(premap);
  out.map_shape = t.shape(premap);
  Var map_for_head = premap;
  if (perturb_features)
    map_for_head = dropblock(t, premap, perturb_cfg.dropblock_p, perturb_cfg.dropblock_size,
                             perturb_cfg.dropblock_rescale, training, rng);
  Var emb = enc.head(t, map_for_head);
  const Shape& es = t.shape(emb);
  out.embedding = EmbeddingMatrix(es[0], es[1]);
  out.embedding.data = t.val(emb);
  return out;
}

EncodeTextResult encode_text(const std::vector<int>& tokens, int64_t batch, int64_t len,
                             TextEncoder& enc, bool training, bool perturb_features,
                             const PerturbConfig& perturb_cfg, Rng& rng) {
  Tape t;
  Var feats = enc.token_features(t, tokens, batch, len);
  EncodeTextResult out;
  out.token_features = t.val(feats);
  out.feature_shape = t.shape(feats);
  Var pooled = enc.pooled(t, feats);
  if (perturb_features)
    pooled = feature_dropout(t, pooled, perturb_cfg.text_dropout_p, training, rng);
  Var emb = enc.project(t, pooled);
  const Shape& es = t.shape(emb);
  out.embedding = EmbeddingMatrix(es[0], es[1]);
  out.embedding.data = t.val(emb);
  return out;
}

EmbeddingMatrix project_and_normalize(const EmbeddingMatrix& features,
                                      const std::vector<double>& projection, int64_t out_dim) {
  if (features.cols * out_dim != static_cast<int64_t>(projection.size()))
    throw InputError("project_and_normalize: projection extent mismatch");
  Tape t;
  Var x = t.constant(Shape{features.rows, features.cols}, features.data);
  Var p = t.constant(Shape{features.cols, out_dim}, projection);
  Var y = t.l2normalize_rows(t.matmul(x, p));
  EmbeddingMatrix out(features.rows, out_dim);
  out.data = t.val(y);
  return out;
}

}  // namespace vlp
