#include "vlp/harness.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <map>
#include <tuple>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace vlp {

namespace fs = std::filesystem;
using nlohmann::json;

double median(std::vector<double> xs) {
  if (xs.empty()) throw InputError("median of empty list");
  std::sort(xs.begin(), xs.end());
  size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

void write_resolved_config(const RunConfig& cfg, const std::string& run_dir) {
  fs::create_directories(run_dir);
  std::ofstream f(run_dir + "/config.resolved.ini");
  if (!f) throw InputError("cannot write resolved config in " + run_dir);
  f << render_config(cfg);
}

void cmd_gen_data(const RunConfig& cfg, const std::string& corpus_dir) {
  CorpusSpec spec = cfg.corpus_spec();
  std::vector<Sample> corpus = generate_corpus(spec);
  CorpusSplits splits = split_corpus(corpus, cfg.split_fractions(), spec.seed);
  save_corpus(corpus_dir, splits, spec, build_vocabulary());
}

namespace {

LoadedCorpus load_corpus_checked(const std::string& corpus_dir) {
  if (!fs::exists(corpus_dir + "/meta.json"))
    throw SequencingError("no corpus at " + corpus_dir + " (run gen-data first)");
  return load_corpus(corpus_dir);
}

TrainState load_state_checked(const std::string& checkpoint_path, const TrainConfig& tc) {
  if (!fs::exists(checkpoint_path))
    throw SequencingError("no checkpoint at " + checkpoint_path + " (run pretrain first)");
  return load_checkpoint(checkpoint_path, tc);
}

}  // namespace

PretrainArtifacts cmd_pretrain(const RunConfig& cfg, const std::string& corpus_dir,
                               const std::string& run_dir) {
  LoadedCorpus corpus = load_corpus_checked(corpus_dir);
  fs::create_directories(run_dir + "/checkpoints");
  write_resolved_config(cfg, run_dir);

  PretrainArtifacts art;
  art.metrics_path = run_dir + "/metrics.jsonl";
  art.timings_path = run_dir + "/timings.log";
  art.ckpt_phase1_path = run_dir + "/checkpoints/ckpt_phase1.bin";
  art.ckpt_final_path = run_dir + "/checkpoints/ckpt_final.bin";

  TrainConfig tc = cfg.train_config(corpus.vocab.size());
  TrainState state = init_train_state(tc, corpus.vocab);
  state.total_steps = planned_total_steps(tc, corpus.splits.train.size());

  MetricsWriter metrics(art.metrics_path);
  std::ofstream timings(art.timings_path);
  RunPhaseOptions opts;
  opts.metrics = &metrics;
  opts.timings = &timings;
  opts.checkpoint_dir = run_dir + "/checkpoints";

  run_phase(state, tc, 1, corpus.splits.train, opts);
  save_checkpoint(state, art.ckpt_phase1_path);
  run_phase(state, tc, 2, corpus.splits.train, opts);
  save_checkpoint(state, art.ckpt_final_path);
  metrics.flush();
  return art;
}

namespace {

RetrievalResult eval_retrieval_for_state(TrainState& state, const RunConfig& cfg,
                                         const std::vector<Sample>& test_split) {
  EmbeddingMatrix img = embed_images_eval(state.model.vision, test_split);
  EmbeddingMatrix txt = embed_texts_eval(state.model.text, test_split);
  auto [i2t, t2i] = retrieval_recall(img, txt, cfg.eval_recall_ks);
  return RetrievalResult{i2t, t2i};
}

json recall_to_json(const RecallReport& r) {
  json j;
  j["direction"] = r.direction;
  j["k_values"] = r.k_values;
  j["recall_at_k"] = r.recall_at_k;
  j["n_queries"] = r.n_queries;
  return j;
}

std::string recall_table(const RetrievalResult& r) {
  std::ostringstream os;
  os << "direction";
  for (int k : r.i2t.k_values) os << "  R@" << k;
  os << "\n";
  auto row = [&](const RecallReport& rep) {
    os << rep.direction << "      ";
    os << std::fixed << std::setprecision(4);
    for (double v : rep.recall_at_k) os << "  " << v;
    os << "\n";
  };
  row(r.i2t);
  row(r.t2i);
  return os.str();
}

}  // namespace

RetrievalResult cmd_eval_retrieval(const RunConfig& cfg, const std::string& corpus_dir,
                                   const std::string& checkpoint_path,
                                   const std::string& run_dir) {
  LoadedCorpus corpus = load_corpus_checked(corpus_dir);
  TrainConfig tc = cfg.train_config(corpus.vocab.size());
  TrainState state = load_state_checked(checkpoint_path, tc);
  const std::vector<Sample>& test = corpus.splits.test.empty() ? corpus.splits.val
                                                               : corpus.splits.test;
  if (test.empty()) throw SequencingError("corpus has no held-out split for retrieval");
  RetrievalResult res = eval_retrieval_for_state(state, cfg, test);
  if (!run_dir.empty()) {
    fs::create_directories(run_dir);
    json j;
    j["i2t"] = recall_to_json(res.i2t);
    j["t2i"] = recall_to_json(res.t2i);
    std::ofstream(run_dir + "/retrieval.json") << j.dump(2) << "\n";
    std::ofstream(run_dir + "/retrieval.txt") << recall_table(res);
  }
  return res;
}

ProbeReport cmd_probe(const RunConfig& cfg, const std::string& corpus_dir,
                      const std::string& checkpoint_path, const std::string& run_dir) {
  LoadedCorpus corpus = load_corpus_checked(corpus_dir);
  TrainConfig tc = cfg.train_config(corpus.vocab.size());
  TrainState state = load_state_checked(checkpoint_path, tc);
  const std::vector<Sample>& test = corpus.splits.test.empty() ? corpus.splits.val
                                                               : corpus.splits.test;
  if (test.empty()) throw SequencingError("corpus has no held-out split for the probe");
  ProbeReport rep = linear_probe_auc(state.model.vision, corpus.splits.train, test,
                                     cfg.probe_config());
  if (!run_dir.empty()) {
    fs::create_directories(run_dir);
    json j;
    j["class_ids"] = rep.class_ids;
    j["per_class_auc"] = rep.per_class_auc;
    j["macro_auc"] = rep.macro_auc;
    std::ofstream(run_dir + "/probe.json") << j.dump(2) << "\n";
  }
  return rep;
}

VQAReport cmd_vqa(const RunConfig& cfg, const std::string& corpus_dir,
                  const std::string& checkpoint_path, const std::string& run_dir,
                  bool random_init) {
  LoadedCorpus corpus = load_corpus_checked(corpus_dir);
  TrainConfig tc = cfg.train_config(corpus.vocab.size());
  TrainState state = random_init ? init_train_state(tc, corpus.vocab)
                                 : load_state_checked(checkpoint_path, tc);
  const std::vector<Sample>& test = corpus.splits.test.empty() ? corpus.splits.val
                                                               : corpus.splits.test;
  if (test.empty()) throw SequencingError("corpus has no held-out split for VQA");
  VQAReport rep = vqa_finetune_eval(state, tc, corpus.splits.train, test, cfg.vqa_config());
  if (!run_dir.empty()) {
    fs::create_directories(run_dir);
    json j;
    j["open_acc"] = rep.open_acc;
    j["closed_acc"] = rep.closed_acc;
    j["overall_acc"] = rep.overall_acc;
    j["n_open"] = rep.n_open;
    j["n_closed"] = rep.n_closed;
    j["random_init"] = random_init;
    std::ofstream(run_dir + "/vqa.json") << j.dump(2) << "\n";
  }
  return rep;
}

// ---------------------------------------------------------------------------
// ablation
// ---------------------------------------------------------------------------

const std::vector<AblationVariantSpec>& ablation_matrix() {
  static const std::vector<AblationVariantSpec> rows = [] {
    std::vector<AblationVariantSpec> r;
    auto add = [&r](std::string name, bool pi, bool pt, bool i2i, bool fwd, bool freeze) {
      AblationVariantSpec v;
      v.name = std::move(name);
      v.use_itc_pert_image = pi;
      v.use_itc_pert_text = pt;
      v.use_i2i = i2i;
      v.forward_strong_views = fwd;
      v.freeze_bn = freeze;
      v.inputs = fwd ? "V,Va,Vb" : "V";
      std::string obj = "ITC,MLM";
      if (pt) obj += ",ITC-pert-text";
      if (pi) obj += ",ITC-pert-image";
      if (i2i) obj += ",I2I";
      v.objectives = obj;
      return r.push_back(v);
    };
    //   name                         pert_img pert_txt i2i   fwd   freeze
    add("baseline-itc-mlm",           false,   false,   false, false, false);
    add("plus-itc-pert-text",         false,   true,    false, false, false);
    add("plus-itc-pert-image",        true,    false,   false, false, false);
    add("plus-i2i-frozen-bn",         false,   false,   true,  true,  true);
    add("naive-i2i-unfrozen",         false,   false,   true,  true,  false);
    add("strong-views-lambda0-unfrozen", false, false,  false, true,  false);
    add("full",                       true,    true,    true,  true,  true);
    return r;
  }();
  return rows;
}

namespace {

RunConfig apply_variant(RunConfig cfg, const AblationVariantSpec& v) {
  cfg.train_use_itc_pert_image = v.use_itc_pert_image;
  cfg.train_use_itc_pert_text = v.use_itc_pert_text;
  cfg.train_use_i2i = v.use_i2i;
  cfg.train_forward_strong_views = v.forward_strong_views;
  cfg.train_freeze_bn_phase2 = v.freeze_bn;
  return cfg;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(34) << "variant" << std::setw(10) << "inputs" << std::setw(44)
     << "objectives" << std::setw(10) << "freeze_bn"
     << "I2T_R@1  T2I_R@1\n";
  const auto& specs = ablation_matrix();
  for (size_t i = 0; i < rows.size(); ++i) {
    os << std::left << std::setw(34) << rows[i].name << std::setw(10) << specs[i].inputs
       << std::setw(44) << specs[i].objectives << std::setw(10)
       << (specs[i].freeze_bn ? "yes" : "no") << std::fixed << std::setprecision(4)
       << rows[i].median_i2t << "   " << rows[i].median_t2i << "\n";
  }
  return os.str();
}

}  // namespace

AblationResult run_ablation(const RunConfig& base_cfg, const std::string& corpus_dir,
                            const std::string& run_dir, std::ostream* progress) {
  LoadedCorpus corpus = load_corpus_checked(corpus_dir);
  const std::vector<Sample>& test = corpus.splits.test.empty() ? corpus.splits.val
                                                               : corpus.splits.test;
  if (test.empty()) throw SequencingError("corpus has no held-out split for the ablation");
  if (base_cfg.ablate_seeds.empty()) throw ConfigError("ablate.seeds must not be empty");

  // Variants whose phase-1-active toggles agree share bitwise-identical
  // phase-1 trajectories (strong views and L_I2I only exist in phase 2), so
  // phase 1 is trained once per (seed, pert flags) and the state is reused.
  std::map<std::tuple<uint64_t, bool, bool>, TrainState> phase1_cache;

  AblationResult out;
  for (const auto& variant : ablation_matrix()) {
    AblationRow row;
    row.name = variant.name;
    for (uint64_t seed : base_cfg.ablate_seeds) {
      RunConfig cfg = apply_variant(base_cfg, variant);
      cfg.train_seed = seed;
      TrainConfig tc = cfg.train_config(corpus.vocab.size());

      std::unique_ptr<MetricsWriter> metrics;
      RunPhaseOptions opts;
      if (!run_dir.empty()) {
        std::string vdir = run_dir + "/ablate/" + variant.name + "/seed" + std::to_string(seed);
        fs::create_directories(vdir);
        write_resolved_config(cfg, vdir);
        metrics = std::make_unique<MetricsWriter>(vdir + "/metrics.jsonl");
        opts.metrics = metrics.get();
      }

      auto key = std::make_tuple(seed, variant.use_itc_pert_image, variant.use_itc_pert_text);
      auto it = phase1_cache.find(key);
      if (it == phase1_cache.end()) {
        TrainState fresh = init_train_state(tc, corpus.vocab);
        fresh.total_steps = planned_total_steps(tc, corpus.splits.train.size());
        run_phase(fresh, tc, 1, corpus.splits.train, opts);
        it = phase1_cache.emplace(key, std::move(fresh)).first;
      }
      TrainState state = it->second;  // continue from the shared phase-1 snapshot
      run_phase(state, tc, 2, corpus.splits.train, opts);

      RetrievalResult res = eval_retrieval_for_state(state, cfg, test);
      // R@1 is the first entry (ks sorted ascending, 1 required)
      if (res.i2t.k_values.front() != 1)
        throw ConfigError("ablation requires eval.recall_ks to include 1");
      row.i2t_r1.push_back(res.i2t.recall_at_k.front());
      row.t2i_r1.push_back(res.t2i.recall_at_k.front());
      if (progress)
        (*progress) << "  [ablate] " << variant.name << " seed " << seed
                    << ": I2T R@1 = " << res.i2t.recall_at_k.front()
                    << ", T2I R@1 = " << res.t2i.recall_at_k.front() << "\n"
                    << std::flush;
    }
    row.median_i2t = median(row.i2t_r1);
    row.median_t2i = median(row.t2i_r1);
    out.rows.push_back(std::move(row));
  }
  out.table_text = ablation_table(out.rows);

  if (!run_dir.empty()) {
    fs::create_directories(run_dir);
    json j = json::array();
    for (const auto& row : out.rows) {
      json r;
      r["name"] = row.name;
      r["i2t_r1"] = row.i2t_r1;
      r["t2i_r1"] = row.t2i_r1;
      r["median_i2t_r1"] = row.median_i2t;
      r["median_t2i_r1"] = row.median_t2i;
      j.push_back(r);
    }
    std::ofstream(run_dir + "/ablation.json") << j.dump(2) << "\n";
    std::ofstream(run_dir + "/ablation.txt") << out.table_text;
  }
  return out;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

std::string make_report(const std::string& run_dir) {
  std::ostringstream os;
  os << "vlpkit run report: " << run_dir << "\n";
  os << std::string(72, '=') << "\n";

  if (fs::exists(run_dir + "/config.resolved.ini")) {
    RunConfig cfg = parse_config_file(run_dir + "/config.resolved.ini");
    os << "data seed: " << cfg.data_seed << "   train seed: " << cfg.train_seed << "\n";
  }

  if (fs::exists(run_dir + "/metrics.jsonl")) {
    auto records = read_metrics(run_dir + "/metrics.jsonl");
    os << "steps logged: " << records.size() << "\n\n";
    os << "loss summary (median over the last 10% of each phase)\n";
    os << std::left << std::setw(7) << "phase" << std::setw(12) << "itc" << std::setw(16)
       << "itc_pert_image" << std::setw(15) << "itc_pert_text" << std::setw(12) << "i2i"
       << std::setw(12) << "mlm" << std::setw(12) << "total" << "\n";
    for (int phase : {1, 2}) {
      std::vector<const MetricsRecord*> in_phase;
      for (const auto& r : records)
        if (r.phase == phase) in_phase.push_back(&r);
      if (in_phase.empty()) continue;
      size_t tail = std::max<size_t>(1, in_phase.size() / 10);
      auto med_of = [&](auto field) {
        std::vector<double> xs;
        for (size_t i = in_phase.size() - tail; i < in_phase.size(); ++i)
          xs.push_back(field(*in_phase[i]));
        return median(xs);
      };
      os << std::left << std::setw(7) << phase << std::fixed << std::setprecision(4)
         << std::setw(12) << med_of([](const MetricsRecord& r) { return r.losses.itc; })
         << std::setw(16) << med_of([](const MetricsRecord& r) { return r.losses.itc_pert_image; })
         << std::setw(15) << med_of([](const MetricsRecord& r) { return r.losses.itc_pert_text; })
         << std::setw(12) << med_of([](const MetricsRecord& r) { return r.losses.i2i; })
         << std::setw(12) << med_of([](const MetricsRecord& r) { return r.losses.mlm; })
         << std::setw(12) << med_of([](const MetricsRecord& r) { return r.losses.total; }) << "\n";
    }
    os << "final tau: " << records.back().tau << "\n";
  }

  for (const char* name : {"retrieval.txt", "ablation.txt"}) {
    if (fs::exists(run_dir + "/" + name)) {
      os << "\n[" << name << "]\n";
      std::ifstream f(run_dir + "/" + name);
      os << f.rdbuf();
    }
  }
  for (const char* name : {"probe.json", "vqa.json"}) {
    if (fs::exists(run_dir + "/" + name)) {
      std::ifstream f(run_dir + "/" + name);
      os << "\n[" << name << "]\n" << f.rdbuf();
    }
  }
  return os.str();
}

}  // namespace vlp
