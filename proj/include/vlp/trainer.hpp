#pragma once

// Two-phase optimization schedule: phase 1 trains the contrastive and MLM
// objectives on weakly augmented views only; phase 2 freezes BN running
// statistics (by default) and adds the strongly augmented two-view image
// objective.

#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vlp/datagen.hpp"
#include "vlp/encoders.hpp"
#include "vlp/fusion.hpp"
#include "vlp/losses.hpp"
#include "vlp/nn.hpp"
#include "vlp/perturb.hpp"
#include "vlp/serialize.hpp"

namespace vlp {

struct TrainConfig {
  int phase1_epochs = 20;
  int phase2_epochs = 20;
  int batch_size = 64;
  double base_lr = 1e-4;
  double weight_decay = 0.0;
  LossWeights weights;
  uint64_t seed = 0;
  PerturbConfig perturb;
  double mask_rate = 0.15;
  bool bert_style_masking = false;
  bool shared_temperature = true;
  double init_tau = 0.07;

  // objective toggles; the ablation harness flips these
  bool use_itc_pert_image = true;
  bool use_itc_pert_text = true;
  bool use_i2i = true;
  bool forward_strong_views = true;  // strong views enter the encoder in phase 2
  bool freeze_bn_phase2 = true;

  VisionEncoderConfig vision;
  TextEncoderConfig text;
  int fusion_layers = 2;
  int fusion_heads = 4;

  int checkpoint_every_epochs = 0;  // 0 = phase boundaries only

  void validate() const;
};

struct ModelBundle {
  VisionEncoder vision;
  TextEncoder text;
  FusionModule fusion;
  Temperature temperature;

  ModelBundle() : temperature(0.07, true) {}
  ModelBundle(const TrainConfig& cfg, uint64_t seed);

  std::vector<Param*> params();
  std::vector<BNLayerState*> bn_states();
};

struct TrainState {
  ModelBundle model;
  AdamW opt;
  Vocabulary vocab;
  int phase = 0;  // 0 = fresh, then the last phase entered
  int64_t global_step = 0;
  int64_t total_steps = 0;  // cosine horizon, fixed when training starts
  int64_t strong_view_forwards = 0;
  Rng rng;
};

TrainState init_train_state(const TrainConfig& cfg, const Vocabulary& vocab);

// lr(0) = base, lr(total) = 0, cosine in between
double cosine_lr(int64_t step, int64_t total_steps, double base_lr);

// Metrics log: line-delimited JSON with a schema header line. Deterministic
// given (config, seed); wall-clock timings go to a separate sidecar file.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path);
  void write_step(int64_t step, int phase, double lr, const LossReport& r, double tau);
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

struct MetricsRecord {
  int64_t step = 0;
  int phase = 0;
  double lr = 0.0;
  LossReport losses;
  double tau = 0.0;
};

std::vector<MetricsRecord> read_metrics(const std::string& path);

// One optimizer update. `phase` selects the objective set; strong views are
// never forwarded in phase 1.
LossReport train_step(const std::vector<const Sample*>& batch, TrainState& state,
                      const TrainConfig& cfg, int phase);

struct RunPhaseOptions {
  MetricsWriter* metrics = nullptr;
  std::ostream* timings = nullptr;
  // checkpoints written as <dir>/ckpt_epoch<N>.bin when configured
  std::string checkpoint_dir;
};

std::vector<LossReport> run_phase(TrainState& state, const TrainConfig& cfg, int phase,
                                  const std::vector<Sample>& data,
                                  const RunPhaseOptions& opts = {});

void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path, const TrainConfig& cfg);

// total optimizer steps for the cosine horizon given this config and data size
int64_t planned_total_steps(const TrainConfig& cfg, int64_t n_train);

}  // namespace vlp
