// vlpkit: synthetic-corpus vision-language pretraining toolkit.
// Subcommands: gen-data, pretrain, eval-retrieval, probe, vqa, ablate, report.

#include <CLI11.hpp>

#include <iostream>

#include "vlp/harness.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string run_dir = "run";
  int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "config file (flat sectioned key=value)");
  cmd->add_option("--set", args.overrides, "override, e.g. --set train.base_lr=2e-4")
      ->take_all();
  cmd->add_option("--run-dir", args.run_dir, "output directory for this command's artifacts");
  cmd->add_option("--seed", args.seed, "override data.seed and train.seed together");
}

vlp::RunConfig resolve(const CommonArgs& args) {
  vlp::RunConfig cfg;
  if (!args.config_path.empty()) cfg = vlp::parse_config_file(args.config_path);
  for (const auto& o : args.overrides) vlp::apply_override(cfg, o);
  if (args.seed >= 0) {
    cfg.data_seed = static_cast<uint64_t>(args.seed);
    cfg.train_seed = static_cast<uint64_t>(args.seed);
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  vlp::tune_allocator();
  CLI::App app{"vlpkit: desk-scale vision-language pretraining on a synthetic corpus"};
  app.require_subcommand(1);

  CommonArgs gen_args, pre_args, ret_args, probe_args, vqa_args, abl_args;
  std::string corpus_dir = "corpus";
  std::string checkpoint;
  std::string report_dir;
  bool vqa_random_init = false;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic image-caption corpus");
  add_common(gen, gen_args);
  gen->add_option("--corpus-dir", corpus_dir, "where to write the corpus");

  auto* pre = app.add_subcommand("pretrain", "run the two-phase pretraining schedule");
  add_common(pre, pre_args);
  pre->add_option("--corpus-dir", corpus_dir, "corpus directory from gen-data")->required();

  auto* ret = app.add_subcommand("eval-retrieval", "recall@K on the held-out split");
  add_common(ret, ret_args);
  ret->add_option("--corpus-dir", corpus_dir)->required();
  ret->add_option("--checkpoint", checkpoint, "pretraining checkpoint")->required();

  auto* probe = app.add_subcommand("probe", "linear probe macro AUC on frozen image features");
  add_common(probe, probe_args);
  probe->add_option("--corpus-dir", corpus_dir)->required();
  probe->add_option("--checkpoint", checkpoint)->required();

  auto* vqa = app.add_subcommand("vqa", "fine-tune and score VQA-as-classification");
  add_common(vqa, vqa_args);
  vqa->add_option("--corpus-dir", corpus_dir)->required();
  vqa->add_option("--checkpoint", checkpoint);
  vqa->add_flag("--random-init", vqa_random_init, "skip the checkpoint and start from scratch");

  auto* abl = app.add_subcommand("ablate", "train and compare the objective/freezing variants");
  add_common(abl, abl_args);
  abl->add_option("--corpus-dir", corpus_dir)->required();

  auto* rep = app.add_subcommand("report", "summarize a finished run directory");
  rep->add_option("--run-dir", report_dir, "run directory to summarize")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      vlp::RunConfig cfg = resolve(gen_args);
      vlp::cmd_gen_data(cfg, corpus_dir);
      vlp::write_resolved_config(cfg, corpus_dir);
      std::cout << "corpus written to " << corpus_dir << "\n";
    } else if (pre->parsed()) {
      vlp::RunConfig cfg = resolve(pre_args);
      auto art = vlp::cmd_pretrain(cfg, corpus_dir, pre_args.run_dir);
      std::cout << "metrics: " << art.metrics_path << "\n"
                << "final checkpoint: " << art.ckpt_final_path << "\n";
    } else if (ret->parsed()) {
      vlp::RunConfig cfg = resolve(ret_args);
      vlp::write_resolved_config(cfg, ret_args.run_dir);
      auto res = vlp::cmd_eval_retrieval(cfg, corpus_dir, checkpoint, ret_args.run_dir);
      for (const auto* r : {&res.i2t, &res.t2i}) {
        std::cout << r->direction << ":";
        for (size_t i = 0; i < r->k_values.size(); ++i)
          std::cout << "  R@" << r->k_values[i] << "=" << r->recall_at_k[i];
        std::cout << "\n";
      }
    } else if (probe->parsed()) {
      vlp::RunConfig cfg = resolve(probe_args);
      vlp::write_resolved_config(cfg, probe_args.run_dir);
      auto repres = vlp::cmd_probe(cfg, corpus_dir, checkpoint, probe_args.run_dir);
      std::cout << "macro AUC: " << repres.macro_auc << "\n";
    } else if (vqa->parsed()) {
      vlp::RunConfig cfg = resolve(vqa_args);
      vlp::write_resolved_config(cfg, vqa_args.run_dir);
      if (!vqa_random_init && checkpoint.empty())
        throw vlp::ConfigError("vqa requires --checkpoint unless --random-init is given");
      auto r = vlp::cmd_vqa(cfg, corpus_dir, checkpoint, vqa_args.run_dir, vqa_random_init);
      std::cout << "open: " << r.open_acc << "  closed: " << r.closed_acc
                << "  overall: " << r.overall_acc << "\n";
    } else if (abl->parsed()) {
      vlp::RunConfig cfg = resolve(abl_args);
      vlp::write_resolved_config(cfg, abl_args.run_dir);
      auto res = vlp::run_ablation(cfg, corpus_dir, abl_args.run_dir, &std::cout);
      std::cout << res.table_text;
    } else if (rep->parsed()) {
      std::string text = vlp::make_report(report_dir);
      std::ofstream(report_dir + "/report.txt") << text;
      std::cout << text;
    }
  } catch (const vlp::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const vlp::SequencingError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
