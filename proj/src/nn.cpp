#include "vlp/nn.hpp"

#include <cmath>

namespace vlp {

void init_normal(Param& p, double stddev, uint64_t seed) {
  Rng rng = param_rng(seed, p.name);
  for (auto& v : p.value) v = rng.normal(0.0, stddev);
}

void init_constant(Param& p, double value) {
  for (auto& v : p.value) v = value;
}

// ---- Linear ----

Linear::Linear(const std::string& name, int64_t in, int64_t out, uint64_t seed, bool bias)
    : w(name + ".weight", Shape{in, out}), b(name + ".bias", Shape{out}), has_bias(bias) {
  init_normal(w, std::sqrt(1.0 / static_cast<double>(in)), seed);
  init_constant(b, 0.0);
}

Var Linear::forward(Tape& t, Var x) const {
  const Shape s = t.shape(x);
  if (s.d[s.nd - 1] != w.shape[0])
    throw InputError("Linear: input dim mismatch for " + w.name);
  Var y = t.matmul_lastdim(x, t.leaf(const_cast<Param&>(w)));
  if (has_bias) y = t.add_bcast(y, t.leaf(const_cast<Param&>(b)));
  return y;
}

void Linear::collect(std::vector<Param*>& out) {
  out.push_back(&w);
  if (has_bias) out.push_back(&b);
}

// ---- Conv2d ----

Conv2d::Conv2d(const std::string& name, int64_t cin, int64_t cout, int k, int stride_, int pad_,
               uint64_t seed)
    : w(name + ".weight", Shape{cout, cin, k, k}),
      b(name + ".bias", Shape{cout}),
      stride(stride_),
      pad(pad_) {
  init_normal(w, std::sqrt(2.0 / static_cast<double>(cin * k * k)), seed);
  init_constant(b, 0.0);
}

Var Conv2d::forward(Tape& t, Var x) const {
  return t.conv2d(x, t.leaf(const_cast<Param&>(w)), t.leaf(const_cast<Param&>(b)), stride, pad);
}

void Conv2d::collect(std::vector<Param*>& out) {
  out.push_back(&w);
  out.push_back(&b);
}

// ---- BatchNorm ----

BNLayerState::BNLayerState(const std::string& name, int64_t channels)
    : weight(name + ".weight", Shape{channels}),
      bias(name + ".bias", Shape{channels}),
      running_mean(channels, 0.0),
      running_var(channels, 1.0) {
  init_constant(weight, 1.0);
  init_constant(bias, 0.0);
}

void BNLayerState::collect(std::vector<Param*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

Var batchnorm_forward(Tape& t, Var x, BNLayerState& bn, bool training) {
  bool use_batch_stats = training && !bn.frozen;
  return t.batchnorm2d(x, t.leaf(bn.weight), t.leaf(bn.bias), bn.running_mean, bn.running_var,
                       bn.momentum, bn.epsilon, use_batch_stats);
}

// ---- LayerNorm ----

LayerNormP::LayerNormP(const std::string& name, int64_t dim)
    : gamma(name + ".gamma", Shape{dim}), beta(name + ".beta", Shape{dim}) {
  init_constant(gamma, 1.0);
  init_constant(beta, 0.0);
}

Var LayerNormP::forward(Tape& t, Var x) const {
  return t.layernorm(x, t.leaf(const_cast<Param&>(gamma)), t.leaf(const_cast<Param&>(beta)));
}

void LayerNormP::collect(std::vector<Param*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

// ---- Multi-head attention ----

MultiheadAttention::MultiheadAttention(const std::string& name, int64_t dim, int heads_,
                                       uint64_t seed)
    : q(name + ".q", dim, dim, seed),
      k(name + ".k", dim, dim, seed),
      v(name + ".v", dim, dim, seed),
      o(name + ".o", dim, dim, seed),
      heads(heads_) {
  if (dim % heads_ != 0) throw ConfigError("attention dim not divisible by head count");
}

Var MultiheadAttention::forward(Tape& t, Var x) const {
  const Shape s = t.shape(x);
  if (s.nd != 3) throw InputError("MultiheadAttention: expects [B,L,C]");
  Var qs = q.forward(t, x);
  Var ks = k.forward(t, x);
  Var vs = v.forward(t, x);
  Var attended = t.attention_qkv(qs, ks, vs, heads);
  return o.forward(t, attended);
}

void MultiheadAttention::collect(std::vector<Param*>& out) {
  q.collect(out);
  k.collect(out);
  v.collect(out);
  o.collect(out);
}

// ---- Transformer block ----

TransformerBlock::TransformerBlock(const std::string& name, int64_t dim, int heads, uint64_t seed)
    : ln1(name + ".ln1", dim),
      ln2(name + ".ln2", dim),
      attn(name + ".attn", dim, heads, seed),
      fc1(name + ".fc1", dim, 4 * dim, seed),
      fc2(name + ".fc2", 4 * dim, dim, seed) {}

Var TransformerBlock::forward(Tape& t, Var x) const {
  x = t.add(x, attn.forward(t, ln1.forward(t, x)));
  Var h = fc2.forward(t, t.gelu(fc1.forward(t, ln2.forward(t, x))));
  return t.add(x, h);
}

void TransformerBlock::collect(std::vector<Param*>& out) {
  ln1.collect(out);
  ln2.collect(out);
  attn.collect(out);
  fc1.collect(out);
  fc2.collect(out);
}

// ---- Attention pooling ----

AttentionPool::AttentionPool(const std::string& name, int64_t dim, uint64_t seed)
    : query(name + ".query", Shape{dim}) {
  init_normal(query, std::sqrt(1.0 / static_cast<double>(dim)), seed);
}

Var AttentionPool::forward(Tape& t, Var x) const {
  const Shape& s = t.shape(x);
  if (s.nd != 3) throw InputError("AttentionPool: expects [B,S,C]");
  int64_t b = s[0], sq = s[1], c = s[2];
  Var qcol = t.reshape(t.leaf(const_cast<Param&>(query)), Shape{c, 1});
  Var scores = t.matmul(t.reshape(x, Shape{b * sq, c}), qcol);  // [B*S,1]
  scores = t.scale(t.reshape(scores, Shape{b, sq}), 1.0 / std::sqrt(static_cast<double>(c)));
  Var alpha = t.softmax_lastdim(scores);                 // [B,S]
  Var pooled = t.bmm(t.reshape(alpha, Shape{b, 1, sq}), x);  // [B,1,C]
  return t.reshape(pooled, Shape{b, c});
}

void AttentionPool::collect(std::vector<Param*>& out) { out.push_back(&query); }

// ---- AdamW ----

void AdamW::step(const std::vector<Param*>& params, const Tape& t, double lr) {
  ++step_count_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  for (Param* p : params) {
    const std::vector<double>* g = t.param_grad(*p);
    if (p->m.empty()) {
      p->m.assign(p->numel(), 0.0);
      p->v.assign(p->numel(), 0.0);
    }
    for (int64_t i = 0; i < p->numel(); ++i) {
      double gi = g ? (*g)[i] : 0.0;
      p->m[i] = cfg_.beta1 * p->m[i] + (1.0 - cfg_.beta1) * gi;
      p->v[i] = cfg_.beta2 * p->v[i] + (1.0 - cfg_.beta2) * gi * gi;
      double mhat = p->m[i] / bc1;
      double vhat = p->v[i] / bc2;
      p->value[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.epsilon) + cfg_.weight_decay * p->value[i]);
    }
  }
}

}  // namespace vlp
