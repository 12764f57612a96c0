#pragma once

// Layers over the autodiff tape, parameter initialization, and AdamW.

#include <vector>

#include "vlp/common.hpp"
#include "vlp/tensor.hpp"

namespace vlp {

// Deterministic per-parameter init stream: independent of construction order.
inline Rng param_rng(uint64_t seed, const std::string& name) {
  return Rng(hash_combine(splitmix64(seed), fnv1a(name)));
}

void init_normal(Param& p, double stddev, uint64_t seed);
void init_constant(Param& p, double value);

struct Linear {
  Param w;  // [in, out]
  Param b;  // [out]
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, int64_t in, int64_t out, uint64_t seed, bool bias = true);
  // x: [.., in] -> [.., out]
  Var forward(Tape& t, Var x) const;
  void collect(std::vector<Param*>& out);
};

struct Conv2d {
  Param w;  // [out, in, k, k]
  Param b;  // [out]
  int stride = 1;
  int pad = 1;

  Conv2d() = default;
  Conv2d(const std::string& name, int64_t cin, int64_t cout, int k, int stride, int pad,
         uint64_t seed);
  Var forward(Tape& t, Var x) const;
  void collect(std::vector<Param*>& out);
};

// Batch-norm layer state: learnable affine plus running statistics and the
// freeze flag. When frozen, running statistics are never touched; weight and
// bias stay trainable.
struct BNLayerState {
  Param weight;  // gamma
  Param bias;    // beta
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
  bool frozen = false;

  BNLayerState() = default;
  BNLayerState(const std::string& name, int64_t channels);
  int64_t channels() const { return weight.numel(); }
  void collect(std::vector<Param*>& out);
};

// training && !frozen -> batch statistics + running update;
// otherwise -> running statistics, no update.
Var batchnorm_forward(Tape& t, Var x, BNLayerState& bn, bool training);

struct LayerNormP {
  Param gamma;
  Param beta;
  LayerNormP() = default;
  LayerNormP(const std::string& name, int64_t dim);
  Var forward(Tape& t, Var x) const;
  void collect(std::vector<Param*>& out);
};

struct MultiheadAttention {
  Linear q, k, v, o;
  int heads = 4;
  MultiheadAttention() = default;
  MultiheadAttention(const std::string& name, int64_t dim, int heads, uint64_t seed);
  Var forward(Tape& t, Var x) const;  // [B,L,C] -> [B,L,C]
  void collect(std::vector<Param*>& out);
};

// Pre-LN transformer block with GELU MLP (4x expansion).
struct TransformerBlock {
  LayerNormP ln1, ln2;
  MultiheadAttention attn;
  Linear fc1, fc2;
  TransformerBlock() = default;
  TransformerBlock(const std::string& name, int64_t dim, int heads, uint64_t seed);
  Var forward(Tape& t, Var x) const;
  void collect(std::vector<Param*>& out);
};

// Single learned query attending over sequence positions: [B,S,C] -> [B,C].
struct AttentionPool {
  Param query;  // [C]
  AttentionPool() = default;
  AttentionPool(const std::string& name, int64_t dim, uint64_t seed);
  Var forward(Tape& t, Var x) const;
  void collect(std::vector<Param*>& out);
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

// One decoupled-weight-decay Adam update over params whose leaf on the tape
// accumulated a gradient. Params never touched by the step get no update.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}
  void step(const std::vector<Param*>& params, const Tape& t, double lr);
  int64_t step_count() const { return step_count_; }
  void set_step_count(int64_t s) { step_count_ = s; }
  const AdamWConfig& config() const { return cfg_; }
  void set_config(AdamWConfig c) { cfg_ = c; }

 private:
  AdamWConfig cfg_;
  int64_t step_count_ = 0;
};

}  // namespace vlp
