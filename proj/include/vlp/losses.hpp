#pragma once

// The five training objectives: symmetric image-text NT-Xent (clean and with
// perturbed image or text embeddings), the image-only two-view NT-Xent, masked
// language modeling cross-entropy, and their weighted total.

#include <vector>

#include "vlp/common.hpp"
#include "vlp/tensor.hpp"

namespace vlp {

// B x D matrix of unit-L2-normalized modality embeddings.
struct EmbeddingMatrix {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> data;

  EmbeddingMatrix() = default;
  EmbeddingMatrix(int64_t r, int64_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double* row(int64_t i) { return data.data() + i * cols; }
  const double* row(int64_t i) const { return data.data() + i * cols; }
};

// Learnable temperature, tau = exp(log_tau), clamped to [1e-3, 100] after each
// optimizer update. One shared value by default; optionally one per
// contrastive loss term.
struct Temperature {
  Param log_tau;
  bool shared = true;

  enum Index { kItc = 0, kItcPertImage = 1, kItcPertText = 2, kI2I = 3 };

  explicit Temperature(double init_tau = 0.07, bool shared_across_losses = true);
  double tau(int index = 0) const;
  // exp(-log_tau[index]) as a differentiable scalar node
  Var inv_tau(Tape& t, int index = 0);
  void clamp();
  void collect(std::vector<Param*>& out) { out.push_back(&log_tau); }
};

struct LossWeights {
  double lambda_cm = 0.167;
  double lambda_um = 0.5;
  double lambda_fm = 0.5;
  void validate() const {
    if (lambda_cm < 0 || lambda_um < 0 || lambda_fm < 0)
      throw ConfigError("loss weights must be >= 0");
  }
};

struct LossReport {
  double itc = 0.0;
  double itc_pert_image = 0.0;  // perturbed image embeddings against clean text
  double itc_pert_text = 0.0;   // clean image embeddings against perturbed text
  double i2i = 0.0;
  double mlm = 0.0;
  double total = 0.0;
};

inline constexpr const char* kLossFieldNames[6] = {"itc",  "itc_pert_image", "itc_pert_text",
                                                   "i2i",  "mlm",            "total"};

// ---- graph-level (differentiable) losses ----

// Symmetric NT-Xent over matched rows of I and T; inv_tau is a positive
// scalar node. Also computes the perturbed variants by substituting the
// perturbed embedding matrix for I or T.
Var itc_loss_graph(Tape& t, Var image_embs, Var text_embs, Var inv_tau);

// Two-view image NT-Xent; negatives are the opposite view's batch only, so
// each softmax denominator has exactly B terms.
Var ntxent_i2i_graph(Tape& t, Var view_a, Var view_b, Var inv_tau);

// Mean cross-entropy over masked positions of [B,L,V] logits.
Var mlm_loss_graph(Tape& t, Var logits, const std::vector<int>& targets,
                   const std::vector<uint8_t>& mask_positions);

// ---- plain-value entry points (validate inputs, no gradients) ----

double itc_loss(const EmbeddingMatrix& image_embs, const EmbeddingMatrix& text_embs, double tau);
double ntxent_i2i(const EmbeddingMatrix& view_a, const EmbeddingMatrix& view_b, double tau);
double mlm_loss(const std::vector<double>& logits, int64_t batch, int64_t len, int64_t vocab,
                const std::vector<int>& targets, const std::vector<uint8_t>& mask_positions);

double total_loss(double itc, double itc_pert_image, double itc_pert_text, double i2i, double mlm,
                  const LossWeights& weights);

// throws InputError unless both matrices have identical extents and rows
// within 1e-3 of unit norm
void validate_embedding_pair(const EmbeddingMatrix& a, const EmbeddingMatrix& b);

}  // namespace vlp
