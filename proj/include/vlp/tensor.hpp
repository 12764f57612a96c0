#pragma once

// Eager tape-based reverse-mode autodiff over dense double tensors.
// Ops compute forward immediately and record a backward closure; the tape's
// creation order is a valid topological order, so backward() is a single
// reverse sweep. Everything is row-major, double precision.

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "vlp/common.hpp"

namespace vlp {

// Learnable parameter. Values persist across steps; AdamW moments live here
// so a checkpoint can capture the full optimizer state.
struct Param {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> m;  // Adam first moment (lazily sized)
  std::vector<double> v;  // Adam second moment

  Param() = default;
  Param(std::string n, Shape s) : name(std::move(n)), shape(s), value(s.numel(), 0.0) {}
  int64_t numel() const { return shape.numel(); }
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;  // allocated on demand during backward
    std::function<void(Tape&)> back;
    Param* param = nullptr;
    bool needs_grad = false;
  };

  Tape() { nodes_.reserve(4096); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- node construction ----

  Var constant(Shape s, std::vector<double> v) {
    check_size(s, v.size(), "constant");
    return make(s, std::move(v), false);
  }
  Var constant_scalar(double x) { return constant(Shape{1}, {x}); }

  // external data, not differentiated (images, token masks, ...)
  Var input(Shape s, const double* src) {
    std::vector<double> v(src, src + s.numel());
    return make(s, std::move(v), false);
  }

  // leaf bound to a Param; memoized so repeated use shares one node and
  // gradients from all uses accumulate there
  Var leaf(Param& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var{this, it->second};
    Var v = make(p.shape, p.value, true);
    nodes_[v.id].param = &p;
    param_nodes_[&p] = v.id;
    return v;
  }

  // ---- access ----

  const Node& node(int id) const { return nodes_[id]; }
  Node& node(int id) { return nodes_[id]; }
  // by value: node storage reallocates as ops append, so references into it
  // must not be held across op calls
  Shape shape(Var v) const { return nodes_[v.id].shape; }
  const std::vector<double>& val(Var v) const { return nodes_[v.id].val; }
  double scalar(Var v) const {
    if (nodes_[v.id].shape.numel() != 1) throw InputError("scalar() on non-scalar node");
    return nodes_[v.id].val[0];
  }
  // gradient of the last backward() w.r.t. v (zeros if v not on the path)
  std::vector<double> grad_of(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.empty()) return std::vector<double>(n.shape.numel(), 0.0);
    return n.grad;
  }
  // gradient accumulated into a Param's leaf during backward, or nullptr
  const std::vector<double>* param_grad(const Param& p) const {
    auto it = param_nodes_.find(const_cast<Param*>(&p));
    if (it == param_nodes_.end()) return nullptr;
    const Node& n = nodes_[it->second];
    if (n.grad.empty()) return nullptr;
    return &n.grad;
  }

  // ---- backward ----

  void backward(Var loss) {
    if (nodes_[loss.id].shape.numel() != 1) throw InputError("backward() requires scalar loss");
    if (ran_backward_) throw InputError("backward() may run once per tape");
    ran_backward_ = true;
    grad_ref(loss.id).assign(1, 1.0);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.back && !n.grad.empty()) n.back(*this);
    }
  }

  std::vector<double>& grad_ref(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.shape.numel(), 0.0);
    return n.grad;
  }

  // ------------------------------------------------------------------
  // Primitive ops
  // ------------------------------------------------------------------

  Var add(Var a, Var b);
  // X:[.., M] + b:[M'] broadcast over leading dims; M must be a multiple of
  // b.numel() == the trailing chunk (covers bias over last dim and positional
  // tables over last two dims)
  Var add_bcast(Var x, Var b);
  Var sub(Var a, Var b);
  Var scale(Var x, double c);
  Var mul(Var a, Var b);  // elementwise, same shape
  // elementwise multiply by a constant mask (dropout/dropblock application)
  Var mul_mask(Var x, std::shared_ptr<const std::vector<double>> mask);
  Var mul_scalar_var(Var x, Var s);  // s: 1-element node
  Var expv(Var x);                   // elementwise exp
  Var relu(Var x);
  Var gelu(Var x);  // exact erf form
  Var tanhv(Var x);

  // A:[M,K] (or [K,M] if ta) x B:[K,N] (or [N,K] if tb) -> [M,N]
  Var matmul(Var a, Var b, bool ta = false, bool tb = false);
  // x:[..., K] x w:[K, N] -> [..., N]; leading dims flattened in place
  Var matmul_lastdim(Var x, Var w);
  // batched: A:[B,M,K], B:[B,K,N] -> [B,M,N] (transpose flags apply per slice)
  Var bmm(Var a, Var b, bool ta = false, bool tb = false);
  Var transpose2d(Var x);       // [M,N] -> [N,M]
  Var transpose_last2(Var x);   // [B,M,N] -> [B,N,M]
  Var reshape(Var x, Shape s);  // numel-preserving copy

  // slice along the last dim: [.., F] -> [.., len]
  Var slice_lastdim(Var x, int64_t offset, int64_t len);
  // concat along the last dim
  Var concat_lastdim(const std::vector<Var>& xs);
  // slice/concat along dim 1 of a 3-D tensor [B,L,C]
  Var slice_seq(Var x, int64_t offset, int64_t len);
  Var concat_seq(Var a, Var b);
  // slice along dim 0 (contiguous rows of any-rank tensor)
  Var slice_dim0(Var x, int64_t offset, int64_t len);
  // [any shape S] -> [B, S] by replication; grad sums over copies
  Var broadcast0(Var x, int64_t b);

  // [B,C,H,W] -> [B,H*W,C]
  Var spatial_to_seq(Var x);

  Var conv2d(Var x, Var w, Var bias, int stride, int pad);

  // Batch normalization over [B,C,H,W]; per-channel gamma/beta.
  // mode "batch": normalize with batch stats and update running stats
  //   (running buffers are mutated as a forward side effect);
  // mode "running": normalize with the provided running stats, no update.
  Var batchnorm2d(Var x, Var gamma, Var beta, std::vector<double>& running_mean,
                  std::vector<double>& running_var, double momentum, double epsilon,
                  bool use_batch_stats);

  Var layernorm(Var x, Var gamma, Var beta, double epsilon = 1e-5);
  Var softmax_lastdim(Var x);
  // fused scaled-dot-product attention over [B,L,C] q/k/v split into heads
  Var attention_qkv(Var q, Var k, Var v, int heads);
  Var embedding(const std::vector<int>& ids, Shape ids_shape, Var table);
  Var l2normalize_rows(Var x, double min_norm = 1e-12);

  // mean cross-entropy over rows of [N,V] against integer targets
  Var cross_entropy_rows(Var logits, const std::vector<int>& targets);
  // mean cross-entropy over masked positions of [B,L,V]
  Var masked_cross_entropy(Var logits, const std::vector<int>& targets,
                           const std::vector<uint8_t>& mask);

  Var sum_all(Var x);
  Var mean_all(Var x);
  // sum_i w_i * s_i over scalar nodes
  Var weighted_sum(const std::vector<Var>& xs, const std::vector<double>& ws);

 private:
  std::vector<Node> nodes_;
  std::unordered_map<Param*, int> param_nodes_;
  bool ran_backward_ = false;

  Var make(Shape s, std::vector<double> v, bool needs_grad) {
    check_size(s, v.size(), "node");
    Node n;
    n.shape = s;
    n.val = std::move(v);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  static void check_size(const Shape& s, size_t n, const char* what) {
    if (static_cast<int64_t>(n) != s.numel())
      throw InputError(std::string(what) + ": data size does not match shape " + s.str());
  }

  bool ng(Var v) const { return nodes_[v.id].needs_grad; }
};

// dense GEMM on row-major buffers: C (+)= op(A) * op(B)
void gemm(const double* a, const double* b, double* c, int64_t m, int64_t n, int64_t k, bool ta,
          bool tb, bool accumulate);

}  // namespace vlp
