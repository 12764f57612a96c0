#pragma once

// Run configuration: a flat, sectioned, human-readable key=value file.
// Unknown keys are rejected; the fully resolved config is echoed into every
// run directory so ablation deltas stay diff-able.

#include <array>
#include <string>
#include <vector>

#include "vlp/datagen.hpp"
#include "vlp/evalproto.hpp"
#include "vlp/trainer.hpp"

namespace vlp {

struct RunConfig {
  // [data]
  int64_t data_n_samples = 2200;
  int data_image_size = 64;
  int data_n_channels = 1;
  int data_max_len = 32;
  uint64_t data_seed = 7;
  double data_frac_train = 10.0 / 11.0;
  double data_frac_val = 0.0;
  double data_frac_test = 1.0 / 11.0;

  // [model]
  int model_embed_dim = 64;
  std::vector<int> model_vision_channels = {8, 16, 32, 64};
  int model_text_width = 64;
  int model_text_heads = 4;
  int model_text_blocks = 2;
  int model_fusion_layers = 2;
  int model_fusion_heads = 4;
  bool model_shared_temperature = true;
  double model_init_tau = 0.07;
  int model_extra_token_slots = 20;

  // [perturb]
  PerturbConfig perturb;

  // [train]
  int train_phase1_epochs = 20;
  int train_phase2_epochs = 20;
  int train_batch_size = 64;
  double train_base_lr = 1e-4;
  double train_weight_decay = 0.0;
  double train_lambda_cm = 0.167;
  double train_lambda_um = 0.5;
  double train_lambda_fm = 0.5;
  double train_mask_rate = 0.15;
  bool train_bert_style_masking = false;
  uint64_t train_seed = 7;
  int train_checkpoint_every_epochs = 0;
  bool train_use_itc_pert_image = true;
  bool train_use_itc_pert_text = true;
  bool train_use_i2i = true;
  bool train_forward_strong_views = true;
  bool train_freeze_bn_phase2 = true;

  // [eval]
  std::vector<int> eval_recall_ks = {1, 5, 10};
  int eval_probe_epochs = 300;
  double eval_probe_lr = 0.1;
  int eval_vqa_epochs = 3;
  int eval_vqa_batch_size = 32;
  double eval_vqa_lr_heads = 5e-4;
  double eval_vqa_lr_encoders = 5e-5;
  int eval_vqa_learnable_tokens = 20;

  // [ablate]
  std::vector<uint64_t> ablate_seeds = {0, 1, 2};

  CorpusSpec corpus_spec() const;
  std::array<double, 3> split_fractions() const;
  TrainConfig train_config(int vocab_size) const;
  ProbeConfig probe_config() const;
  VQAConfig vqa_config() const;
};

// Parse `section.key = value` under [section] headers; '#' starts a comment.
RunConfig parse_config_file(const std::string& path);
// `key=value` with dotted section prefix, e.g. data.n_samples=100
void apply_override(RunConfig& cfg, const std::string& assignment);
// canonical echo of every key (also serves as the default-config reference)
std::string render_config(const RunConfig& cfg);

}  // namespace vlp
