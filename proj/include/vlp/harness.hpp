#pragma once

// Command implementations shared by the CLI and the acceptance suite: corpus
// generation, pretraining with metrics/checkpoints, the three downstream
// evaluations, the ablation matrix, and run-directory reporting.

#include <optional>
#include <string>
#include <vector>

#include "vlp/config.hpp"
#include "vlp/evalproto.hpp"

namespace vlp {

void write_resolved_config(const RunConfig& cfg, const std::string& run_dir);

void cmd_gen_data(const RunConfig& cfg, const std::string& corpus_dir);

struct PretrainArtifacts {
  std::string metrics_path;
  std::string timings_path;
  std::string ckpt_phase1_path;
  std::string ckpt_final_path;
};

PretrainArtifacts cmd_pretrain(const RunConfig& cfg, const std::string& corpus_dir,
                               const std::string& run_dir);

struct RetrievalResult {
  RecallReport i2t;
  RecallReport t2i;
};

// checkpoint_path must exist (sequencing error otherwise)
RetrievalResult cmd_eval_retrieval(const RunConfig& cfg, const std::string& corpus_dir,
                                   const std::string& checkpoint_path,
                                   const std::string& run_dir);

ProbeReport cmd_probe(const RunConfig& cfg, const std::string& corpus_dir,
                      const std::string& checkpoint_path, const std::string& run_dir);

VQAReport cmd_vqa(const RunConfig& cfg, const std::string& corpus_dir,
                  const std::string& checkpoint_path, const std::string& run_dir,
                  bool random_init = false);

// ---- ablation ----

struct AblationVariantSpec {
  std::string name;
  std::string inputs;      // "V" or "V,Va,Vb"
  std::string objectives;  // rendered objective set
  bool freeze_bn = false;
  // deltas applied to the base config
  bool use_itc_pert_image = false;
  bool use_itc_pert_text = false;
  bool use_i2i = false;
  bool forward_strong_views = false;
};

const std::vector<AblationVariantSpec>& ablation_matrix();

struct AblationRow {
  std::string name;
  std::vector<double> i2t_r1;  // per seed
  std::vector<double> t2i_r1;
  double median_i2t = 0.0;
  double median_t2i = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::string table_text;
};

// Trains every variant on one shared corpus with the shared seed list and
// reports held-out R@1 medians; when run_dir is non-empty, per-variant metrics
// logs and the comparison table are written beneath it. `progress`, when
// given, receives one line per variant x seed as results come in.
AblationResult run_ablation(const RunConfig& base_cfg, const std::string& corpus_dir,
                            const std::string& run_dir, std::ostream* progress = nullptr);

// pure function of the run directory contents
std::string make_report(const std::string& run_dir);

double median(std::vector<double> xs);

}  // namespace vlp
