#include "vlp/losses.hpp"

#include <cmath>

namespace vlp {

Temperature::Temperature(double init_tau, bool shared_across_losses)
    : log_tau("temperature.log_tau", Shape{shared_across_losses ? 1 : 4}),
      shared(shared_across_losses) {
  if (init_tau <= 0.0) throw ConfigError("temperature must be positive");
  for (auto& v : log_tau.value) v = std::log(init_tau);
}

double Temperature::tau(int index) const {
  int i = shared ? 0 : index;
  return std::exp(log_tau.value[i]);
}

Var Temperature::inv_tau(Tape& t, int index) {
  int i = shared ? 0 : index;
  Var full = t.leaf(log_tau);
  Var one = shared ? full : t.slice_lastdim(full, i, 1);
  return t.expv(t.scale(one, -1.0));
}

void Temperature::clamp() {
  const double lo = std::log(1e-3), hi = std::log(100.0);
  for (auto& v : log_tau.value) v = std::clamp(v, lo, hi);
}

namespace {

void check_unit_rows(const Tape& t, Var m, const char* what) {
  const Shape& s = t.shape(m);
  if (s.nd != 2) throw InputError(std::string(what) + ": embeddings must be [B,D]");
  const auto& v = t.val(m);
  for (int64_t i = 0; i < s[0]; ++i) {
    double n2 = 0.0;
    for (int64_t j = 0; j < s[1]; ++j) n2 += v[i * s[1] + j] * v[i * s[1] + j];
    if (std::fabs(std::sqrt(n2) - 1.0) > 1e-3)
      throw InputError(std::string(what) + ": row " + std::to_string(i) +
                       " is not unit-norm");
  }
}

std::vector<int> iota_targets(int64_t n) {
  std::vector<int> t(n);
  for (int64_t i = 0; i < n; ++i) t[i] = static_cast<int>(i);
  return t;
}

Var symmetric_ntxent(Tape& t, Var a, Var b, Var inv_tau) {
  const Shape& sa = t.shape(a);
  const Shape& sb = t.shape(b);
  if (sa != sb) throw InputError("contrastive loss: extent mismatch");
  int64_t batch = sa[0];
  Var sims = t.mul_scalar_var(t.matmul(a, b, false, true), inv_tau);  // [B,B]
  std::vector<int> targets = iota_targets(batch);
  Var fwd = t.cross_entropy_rows(sims, targets);
  Var bwd = t.cross_entropy_rows(t.transpose2d(sims), targets);
  return t.weighted_sum({fwd, bwd}, {0.5, 0.5});
}

}  // namespace

Var itc_loss_graph(Tape& t, Var image_embs, Var text_embs, Var inv_tau) {
  check_unit_rows(t, image_embs, "itc_loss");
  check_unit_rows(t, text_embs, "itc_loss");
  return symmetric_ntxent(t, image_embs, text_embs, inv_tau);
}

Var ntxent_i2i_graph(Tape& t, Var view_a, Var view_b, Var inv_tau) {
  check_unit_rows(t, view_a, "ntxent_i2i");
  check_unit_rows(t, view_b, "ntxent_i2i");
  return symmetric_ntxent(t, view_a, view_b, inv_tau);
}

Var mlm_loss_graph(Tape& t, Var logits, const std::vector<int>& targets,
                   const std::vector<uint8_t>& mask_positions) {
  return t.masked_cross_entropy(logits, targets, mask_positions);
}

// ---------------------------------------------------------------------------
// plain-value wrappers
// ---------------------------------------------------------------------------

void validate_embedding_pair(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw InputError("embedding matrices must share extents");
  if (a.rows < 1) throw InputError("embedding matrices must be non-empty");
  auto check = [](const EmbeddingMatrix& m, const char* what) {
    for (int64_t i = 0; i < m.rows; ++i) {
      double n2 = 0.0;
      for (int64_t j = 0; j < m.cols; ++j) n2 += m.row(i)[j] * m.row(i)[j];
      if (std::fabs(std::sqrt(n2) - 1.0) > 1e-3)
        throw InputError(std::string(what) + ": row " + std::to_string(i) + " is not unit-norm");
    }
  };
  check(a, "embeddings");
  check(b, "embeddings");
}

namespace {

double plain_pair_loss(const EmbeddingMatrix& a, const EmbeddingMatrix& b, double tau) {
  validate_embedding_pair(a, b);
  if (tau <= 0.0) throw InputError("tau must be positive");
  Tape t;
  Var va = t.constant(Shape{a.rows, a.cols}, a.data);
  Var vb = t.constant(Shape{b.rows, b.cols}, b.data);
  Var it = t.constant_scalar(1.0 / tau);
  return t.scalar(symmetric_ntxent(t, va, vb, it));
}

}  // namespace

double itc_loss(const EmbeddingMatrix& image_embs, const EmbeddingMatrix& text_embs, double tau) {
  return plain_pair_loss(image_embs, text_embs, tau);
}

double ntxent_i2i(const EmbeddingMatrix& view_a, const EmbeddingMatrix& view_b, double tau) {
  return plain_pair_loss(view_a, view_b, tau);
}

double mlm_loss(const std::vector<double>& logits, int64_t batch, int64_t len, int64_t vocab,
                const std::vector<int>& targets, const std::vector<uint8_t>& mask_positions) {
  Tape t;
  Var lv = t.constant(Shape{batch, len, vocab}, logits);
  return t.scalar(t.masked_cross_entropy(lv, targets, mask_positions));
}

double total_loss(double itc, double itc_pert_image, double itc_pert_text, double i2i, double mlm,
                  const LossWeights& weights) {
  weights.validate();
  const double comps[5] = {itc, itc_pert_image, itc_pert_text, i2i, mlm};
  const char* names[5] = {"itc", "itc_pert_image", "itc_pert_text", "i2i", "mlm"};
  for (int i = 0; i < 5; ++i)
    if (!std::isfinite(comps[i]))
      throw NumericError(std::string("total_loss: component ") + names[i] + " is non-finite");
  return weights.lambda_cm * (itc + itc_pert_image + itc_pert_text) + weights.lambda_um * i2i +
         weights.lambda_fm * mlm;
}

}  // namespace vlp
