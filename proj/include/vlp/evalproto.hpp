#pragma once

// Downstream protocols: inner-product retrieval recall@K, linear-probe
// classification scored by macro AUC, and VQA-as-classification with learnable
// prompt tokens and a small fusion head.

#include <string>
#include <utility>
#include <vector>

#include "vlp/datagen.hpp"
#include "vlp/losses.hpp"
#include "vlp/trainer.hpp"

namespace vlp {

// ---- retrieval ----

struct RecallReport {
  std::string direction;  // "I2T" or "T2I"
  std::vector<int> k_values;
  std::vector<double> recall_at_k;
  int64_t n_queries = 0;
};

// Matched rows are ground truth; ties in the inner product rank by lower
// candidate index.
std::pair<RecallReport, RecallReport> retrieval_recall(const EmbeddingMatrix& image_embs,
                                                       const EmbeddingMatrix& text_embs,
                                                       const std::vector<int>& ks);

// eval-mode batched embeddings (no perturbation, BN running statistics)
EmbeddingMatrix embed_images_eval(VisionEncoder& enc, const std::vector<Sample>& samples,
                                  int batch_size = 128);
EmbeddingMatrix embed_texts_eval(TextEncoder& enc, const std::vector<Sample>& samples,
                                 int batch_size = 128);

// ---- linear probe ----

struct ProbeConfig {
  int epochs = 300;
  double lr = 0.1;
  uint64_t seed = 0;
};

struct ProbeReport {
  std::vector<int> class_ids;         // classes with both positives and negatives
  std::vector<double> per_class_auc;  // aligned with class_ids
  double macro_auc = 0.0;
};

// Mann-Whitney rank AUC; tied scores contribute 0.5.
double mann_whitney_auc(const std::vector<double>& scores, const std::vector<uint8_t>& positive);

// Trains only a softmax linear layer on frozen features.
ProbeReport train_probe_and_auc(const EmbeddingMatrix& train_x, const std::vector<int>& train_y,
                                const EmbeddingMatrix& test_x, const std::vector<int>& test_y,
                                int n_classes, const ProbeConfig& cfg);

// Embeds via the frozen encoder (asserted byte-identical afterwards).
ProbeReport linear_probe_auc(VisionEncoder& enc, const std::vector<Sample>& train_split,
                             const std::vector<Sample>& test_split, const ProbeConfig& cfg);

// ---- VQA ----

// fixed answer vocabulary: yes/no plus every attribute value
const std::vector<std::string>& vqa_answer_vocab();

struct VQAPair {
  int64_t sample_index = 0;
  std::string question;
  std::vector<int> tokens;  // [max_len], before the learnable prompt tokens
  int answer = 0;           // index into vqa_answer_vocab()
  bool closed = false;
};

// One open and one closed question per sample, deterministic in (seed, id).
std::vector<VQAPair> make_vqa_pairs(const std::vector<Sample>& samples, const Vocabulary& vocab,
                                    int max_len, uint64_t seed);

struct VQAConfig {
  int epochs = 3;
  int batch_size = 32;
  double lr_heads = 5e-4;     // fusion + classifier
  double lr_encoders = 5e-5;  // pretrained encoders
  int n_learnable_tokens = 20;
  uint64_t seed = 0;
};

struct VQAReport {
  double open_acc = 0.0;
  double closed_acc = 0.0;
  double overall_acc = 0.0;
  int64_t n_open = 0;
  int64_t n_closed = 0;
};

// question-count-weighted accuracies from per-pair predictions
VQAReport score_vqa(const std::vector<int>& predictions, const std::vector<VQAPair>& pairs);

// Fine-tunes from `init_state` (pretrained or fresh): encoders at the low
// rate, a one-layer fusion transformer + two-layer MLP head + the learnable
// prompt tokens at the high rate. Returns held-out accuracy.
VQAReport vqa_finetune_eval(const TrainState& init_state, const TrainConfig& model_cfg,
                            const std::vector<Sample>& train_samples,
                            const std::vector<Sample>& test_samples, const VQAConfig& cfg);

}  // namespace vlp
