// Acceptance suite: runs every acceptance criterion end to end and prints one
// PASS/FAIL line per criterion. Exits nonzero if any criterion fails.
//
// The heavyweight criteria (end-to-end learning signal, the ablation matrix,
// pretrained-vs-random VQA) train real models and dominate the runtime; the
// artifacts they produce are shared across criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "oracles.hpp"
#include "vlp/harness.hpp"

using namespace vlp;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct CriterionResult {
  int id;
  std::string name;
  bool pass = false;
  bool warn_only = false;
  std::string detail;
};

std::vector<CriterionResult> g_results;

void report(int id, const std::string& name, bool pass, const std::string& detail,
            bool warn_only = false) {
  g_results.push_back({id, name, pass, warn_only, detail});
  const char* tag = pass ? "PASS" : (warn_only ? "WARN" : "FAIL");
  std::printf("%s criterion-%d (%s): %s\n", tag, id, name.c_str(), detail.c_str());
  std::fflush(stdout);
}

double elapsed_s(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << std::fixed << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// criterion 1: loss-oracle equivalence
// ---------------------------------------------------------------------------

void criterion_1() {
  auto t0 = Clock::now();
  Rng rng(1001);
  double worst = 0.0;
  const int b_choices[3] = {2, 3, 5};
  const int d_choices[2] = {3, 8};
  const int64_t v = 11;
  for (int trial = 0; trial < 100; ++trial) {
    int b = b_choices[rng.uniform_int(3)];
    int d = d_choices[rng.uniform_int(2)];
    double tau = rng.uniform(0.05, 2.0);
    EmbeddingMatrix I = oracle::random_unit_embeddings(b, d, rng);
    EmbeddingMatrix T = oracle::random_unit_embeddings(b, d, rng);
    worst = std::max(worst, std::fabs(itc_loss(I, T, tau) - oracle::itc(I, T, tau)));
    worst = std::max(worst, std::fabs(ntxent_i2i(I, T, tau) - oracle::i2i(I, T, tau)));

    int64_t l = 4;
    std::vector<double> logits(b * l * v);
    for (auto& x : logits) x = rng.normal(0.0, 2.0);
    std::vector<int> targets(b * l);
    for (auto& t : targets) t = static_cast<int>(rng.uniform_int(v));
    std::vector<uint8_t> mask(b * l, 0);
    int set = 0;
    for (auto& m : mask) m = rng.bernoulli(0.4) ? (++set, 1) : 0;
    if (!set) mask[0] = 1;
    worst = std::max(worst, std::fabs(mlm_loss(logits, b, l, v, targets, mask) -
                                      oracle::mlm(logits, b, l, v, targets, mask)));
  }
  double secs = elapsed_s(t0);
  bool pass = worst < 1e-9 && secs < 10.0;
  report(1, "loss-oracle equivalence", pass,
         "max |impl - oracle| = " + fmt(worst, 14) + " over 100 instances in " + fmt(secs, 2) +
             " s");
}

// ---------------------------------------------------------------------------
// criterion 2: gradient checks
// ---------------------------------------------------------------------------

double max_grad_err(const std::vector<Param*>& params, const std::function<Var(Tape&)>& fn,
                    double h) {
  Tape t;
  Var loss = fn(t);
  t.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (Param* p : params) {
    const auto* g = t.param_grad(*p);
    analytic.push_back(g ? *g : std::vector<double>(p->numel(), 0.0));
  }
  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Param* p = params[pi];
    for (int64_t i = 0; i < p->numel(); ++i) {
      double orig = p->value[i];
      p->value[i] = orig + h;
      Tape tp;
      double fp = tp.scalar(fn(tp));
      p->value[i] = orig - h;
      Tape tm;
      double fm = tm.scalar(fn(tm));
      p->value[i] = orig;
      double fd = (fp - fm) / (2.0 * h);
      double err = std::fabs(analytic[pi][i] - fd) /
                   std::max({1.0, std::fabs(analytic[pi][i]), std::fabs(fd)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

void criterion_2() {
  auto t0 = Clock::now();
  Rng rng(1002);
  double worst = 0.0;
  const double h = 1e-4;
  for (int trial = 0; trial < 20; ++trial) {
    int b = 2 + static_cast<int>(rng.uniform_int(4));
    int d = 3 + static_cast<int>(rng.uniform_int(6));
    EmbeddingMatrix I = oracle::random_unit_embeddings(b, d, rng);
    EmbeddingMatrix T = oracle::random_unit_embeddings(b, d, rng);
    Param pi("pi", Shape{b, d});
    pi.value = I.data;
    Param pt("pt", Shape{b, d});
    pt.value = T.data;
    Param ltau("ltau", Shape{1});
    ltau.value = {std::log(rng.uniform(0.1, 1.0))};
    worst = std::max(worst, max_grad_err({&pi, &pt, &ltau},
                                         [&](Tape& t) {
                                           Var inv = t.expv(t.scale(t.leaf(ltau), -1.0));
                                           return itc_loss_graph(t, t.leaf(pi), t.leaf(pt), inv);
                                         },
                                         h));
    worst = std::max(worst, max_grad_err({&pi, &pt, &ltau},
                                         [&](Tape& t) {
                                           Var inv = t.expv(t.scale(t.leaf(ltau), -1.0));
                                           return ntxent_i2i_graph(t, t.leaf(pi), t.leaf(pt), inv);
                                         },
                                         h));
    int64_t l = 3;
    const int64_t v = 11;
    Param logits("logits", Shape{b, l, v});
    for (auto& x : logits.value) x = rng.normal(0.0, 1.5);
    std::vector<int> targets(b * l);
    for (auto& t : targets) t = static_cast<int>(rng.uniform_int(v));
    std::vector<uint8_t> mask(b * l, 0);
    int set = 0;
    for (auto& m : mask) m = rng.bernoulli(0.5) ? (++set, 1) : 0;
    if (!set) mask[0] = 1;
    worst = std::max(worst, max_grad_err({&logits},
                                         [&](Tape& t) {
                                           return mlm_loss_graph(t, t.leaf(logits), targets, mask);
                                         },
                                         h));
  }
  double secs = elapsed_s(t0);
  bool pass = worst < 1e-4 && secs < 60.0;
  report(2, "gradient checks", pass,
         "max relative error = " + fmt(worst, 10) + " over 20 instances in " + fmt(secs, 2) +
             " s");
}

// ---------------------------------------------------------------------------
// criterion 3: trivial values
// ---------------------------------------------------------------------------

void criterion_3() {
  bool pass = true;

  EmbeddingMatrix one(1, 4);
  one.data = {0.5, 0.5, 0.5, 0.5};
  pass &= std::fabs(itc_loss(one, one, 0.3)) < 1e-12;
  pass &= std::fabs(ntxent_i2i(one, one, 0.3)) < 1e-12;

  for (int b : {2, 4, 7}) {
    EmbeddingMatrix m(b, 3);
    for (int i = 0; i < b; ++i) {
      m.row(i)[0] = 0.6;
      m.row(i)[1] = 0.8;
    }
    pass &= std::fabs(itc_loss(m, m, 0.9) - std::log(static_cast<double>(b))) < 1e-9;
  }

  int64_t v = 11;
  std::vector<double> logits(2 * 3 * v, 1.23);
  std::vector<int> targets(6, 2);
  std::vector<uint8_t> mask = {1, 0, 1, 0, 1, 0};
  pass &= std::fabs(mlm_loss(logits, 2, 3, v, targets, mask) - std::log(11.0)) < 1e-9;

  LossWeights w;
  pass &= std::fabs(total_loss(1, 1, 1, 1, 1, w) - 1.501) < 1e-9;

  report(3, "trivial loss values", pass,
         "B=1 -> 0, identical rows -> ln B, uniform logits -> ln V, unit total = 1.501");
}

// ---------------------------------------------------------------------------
// criterion 4: BN freeze contract over 100 phase-2 steps
// ---------------------------------------------------------------------------

TrainConfig small_train_config(const Vocabulary& vocab, uint64_t seed) {
  TrainConfig tc;
  tc.phase1_epochs = 1;
  tc.phase2_epochs = 25;  // 4 steps/epoch x 25 = 100 phase-2 steps
  tc.batch_size = 8;
  tc.seed = seed;
  tc.vision.image_size = 32;
  tc.vision.channels = {4, 8, 16};
  tc.vision.embed_dim = 12;
  tc.text.vocab_size = vocab.size();
  tc.text.max_len = 16;
  tc.text.extra_slots = 0;
  tc.text.width = 16;
  tc.text.heads = 2;
  tc.text.blocks = 1;
  tc.text.embed_dim = 12;
  tc.fusion_layers = 1;
  tc.fusion_heads = 2;
  return tc;
}

void criterion_4() {
  auto t0 = Clock::now();
  Vocabulary vocab = build_vocabulary();
  CorpusSpec spec;
  spec.n_samples = 32;
  spec.image_size = 32;
  spec.max_len = 16;
  spec.seed = 104;
  auto corpus = generate_corpus(spec);

  auto stats_constant_with_freeze = [&](bool freeze) {
    TrainConfig tc = small_train_config(vocab, 104);
    tc.freeze_bn_phase2 = freeze;
    TrainState st = init_train_state(tc, vocab);
    run_phase(st, tc, 1, corpus);
    if (freeze)
      for (BNLayerState* bn : st.model.bn_states()) bn->frozen = true;
    std::vector<std::vector<double>> entry;
    for (BNLayerState* bn : st.model.bn_states()) {
      entry.push_back(bn->running_mean);
      entry.push_back(bn->running_var);
    }
    run_phase(st, tc, 2, corpus);  // strong views shift the input distribution
    bool identical = true;
    size_t k = 0;
    for (BNLayerState* bn : st.model.bn_states()) {
      identical &= std::memcmp(bn->running_mean.data(), entry[k].data(),
                               entry[k].size() * sizeof(double)) == 0;
      ++k;
      identical &= std::memcmp(bn->running_var.data(), entry[k].data(),
                               entry[k].size() * sizeof(double)) == 0;
      ++k;
    }
    return identical;
  };

  bool frozen_identical = stats_constant_with_freeze(true);
  bool unfrozen_identical = stats_constant_with_freeze(false);
  double secs = elapsed_s(t0);
  bool pass = frozen_identical && !unfrozen_identical && secs < 60.0;
  report(4, "BN freeze contract", pass,
         std::string("frozen stats bit-identical over 100 phase-2 steps: ") +
             (frozen_identical ? "yes" : "NO") +
             "; unfrozen stats changed: " + (!unfrozen_identical ? "yes" : "NO") + " (" +
             fmt(secs, 1) + " s)");
}

// ---------------------------------------------------------------------------
// criterion 5: perturbation statistics
// ---------------------------------------------------------------------------

void criterion_5() {
  Rng rng(1005);

  auto mask = dropout_mask(10000, 0.75, rng);
  int64_t zeros = 0;
  for (double m : mask) zeros += m == 0.0 ? 1 : 0;
  double drop_frac = static_cast<double>(zeros) / 10000.0;
  bool dropout_ok = std::fabs(drop_frac - 0.75) <= 0.02;

  int64_t db_zeros = 0, db_total = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    auto m = dropblock_spatial_mask(12, 12, 0.5, 3, true, rng);
    for (double x : m) {
      db_zeros += x == 0.0 ? 1 : 0;
      ++db_total;
    }
  }
  double db_frac = static_cast<double>(db_zeros) / static_cast<double>(db_total);
  bool dropblock_ok = std::fabs(db_frac - 0.5) <= 0.05;

  Tape t;
  std::vector<double> data(2 * 3 * 8 * 8);
  for (auto& v : data) v = rng.normal();
  Var x = t.constant(Shape{2, 3, 8, 8}, data);
  bool id_db = t.val(dropblock(t, x, 0.5, 3, true, /*training=*/false, rng)) == data;
  std::vector<double> fdata(data.begin(), data.begin() + 192);
  Var f = t.constant(Shape{8, 24}, fdata);
  bool id_do = t.val(feature_dropout(t, f, 0.75, /*training=*/false, rng)) == fdata;

  bool pass = dropout_ok && dropblock_ok && id_db && id_do;
  report(5, "perturbation statistics", pass,
         "dropout frac = " + fmt(drop_frac) + " (target 0.75), dropblock frac = " + fmt(db_frac) +
             " (target 0.50), eval identities " + (id_db && id_do ? "exact" : "BROKEN"));
}

// ---------------------------------------------------------------------------
// criterion 6: masking statistics
// ---------------------------------------------------------------------------

void criterion_6() {
  Vocabulary vocab = build_vocabulary();
  const int max_len = 24, batch = 100;
  std::vector<int> tokens;
  for (int b = 0; b < batch; ++b) {
    std::vector<int> seq(max_len, vocab.pad_id);
    seq[0] = vocab.cls_id;
    for (int i = 1; i <= 20; ++i) seq[i] = 4 + (b + i) % 10;
    tokens.insert(tokens.end(), seq.begin(), seq.end());
  }
  Rng rng(1006);
  int64_t masked = 0, eligible = 0;
  bool special_clean = true;
  for (int trial = 0; trial < 5; ++trial) {  // 100 x 20 x 5 = 10,000 eligible
    auto mo = mask_tokens(tokens, batch, max_len, 0.15, vocab, rng);
    for (int64_t i = 0; i < batch * max_len; ++i) {
      int orig = tokens[i];
      if (orig == vocab.pad_id || orig == vocab.cls_id) {
        special_clean &= mo.mask_positions[i] == 0;
      } else {
        ++eligible;
        masked += mo.mask_positions[i];
      }
    }
  }
  double rate = static_cast<double>(masked) / static_cast<double>(eligible);
  bool pass = rate >= 0.13 && rate <= 0.17 && special_clean && eligible == 10000;
  report(6, "masking statistics", pass,
         "empirical rate = " + fmt(rate) + " over 10,000 eligible tokens; CLS/PAD masked: " +
             (special_clean ? "never" : "YES"));
}

// ---------------------------------------------------------------------------
// criterion 7: end-to-end learning signal (plus shared artifacts)
// ---------------------------------------------------------------------------

struct PretrainedRun {
  uint64_t seed;
  std::string run_dir;
  std::string ckpt;
  double i2t_r1 = 0.0;
  double t2i_r1 = 0.0;
};

std::string g_workdir;
std::string g_corpus_dir;
std::vector<PretrainedRun> g_runs;
RunConfig g_base_cfg;

void criterion_7() {
  auto t0 = Clock::now();
  g_base_cfg = RunConfig{};  // spec defaults: 2200 pairs -> 2000/200, 20+20 epochs, batch 64
  g_corpus_dir = g_workdir + "/corpus";
  cmd_gen_data(g_base_cfg, g_corpus_dir);

  std::vector<double> i2t, t2i;
  for (uint64_t seed : {101ULL, 202ULL, 303ULL}) {
    RunConfig cfg = g_base_cfg;
    cfg.train_seed = seed;
    PretrainedRun run;
    run.seed = seed;
    run.run_dir = g_workdir + "/run_seed" + std::to_string(seed);
    auto art = cmd_pretrain(cfg, g_corpus_dir, run.run_dir);
    run.ckpt = art.ckpt_final_path;
    auto res = cmd_eval_retrieval(cfg, g_corpus_dir, run.ckpt, run.run_dir);
    run.i2t_r1 = res.i2t.recall_at_k.front();
    run.t2i_r1 = res.t2i.recall_at_k.front();
    i2t.push_back(run.i2t_r1);
    t2i.push_back(run.t2i_r1);
    g_runs.push_back(run);
    std::printf("  [criterion-7] seed %llu: I2T R@1 = %.4f, T2I R@1 = %.4f (%.1f min elapsed)\n",
                static_cast<unsigned long long>(seed), run.i2t_r1, run.t2i_r1,
                elapsed_s(t0) / 60.0);
    std::fflush(stdout);
  }
  double med_i2t = median(i2t), med_t2i = median(t2i);
  const double floor = 10.0 * 0.005;  // 10x chance at 200 held-out pairs
  bool pass = med_i2t >= floor && med_t2i >= floor;
  report(7, "end-to-end learning signal", pass,
         "median I2T R@1 = " + fmt(med_i2t) + ", T2I R@1 = " + fmt(med_t2i) +
             " (floor 0.05; 3 seeds; " + fmt(elapsed_s(t0) / 60.0, 1) + " min)");

  // supplementary (not a numbered criterion): on the trained model, the
  // DropBlock-perturbed embedding stays closest to its own clean embedding
  Vocabulary vocab = build_vocabulary();
  TrainConfig tc = g_base_cfg.train_config(vocab.size());
  TrainState st = load_checkpoint(g_runs.front().ckpt, tc);
  LoadedCorpus corpus = load_corpus(g_corpus_dir);
  std::vector<double> imgs;
  for (int i = 0; i < 32; ++i)
    imgs.insert(imgs.end(), corpus.splits.test[i].image.begin(),
                corpus.splits.test[i].image.end());
  Rng rp(7), rq(8), rother(9);
  PerturbConfig pc = g_base_cfg.perturb;
  auto clean = encode_image(imgs, Shape{32, 1, 64, 64}, st.model.vision, true, false, pc, rp);
  auto pert = encode_image(imgs, Shape{32, 1, 64, 64}, st.model.vision, true, true, pc, rq);
  int better = 0;
  for (int i = 0; i < 32; ++i) {
    int j = static_cast<int>(rother.uniform_int(31));
    if (j >= i) ++j;
    double self = 0, other = 0;
    for (int64_t d = 0; d < clean.embedding.cols; ++d) {
      self += pert.embedding.row(i)[d] * clean.embedding.row(i)[d];
      other += pert.embedding.row(i)[d] * clean.embedding.row(j)[d];
    }
    better += self > other ? 1 : 0;
  }
  std::printf("  [info] perturbed-vs-clean alignment on the trained model: %d/32 rows\n", better);
  std::fflush(stdout);
}

// ---------------------------------------------------------------------------
// criteria 8 and 9: ablation matrix reproduction
// ---------------------------------------------------------------------------

void criteria_8_9() {
  auto t0 = Clock::now();
  RunConfig cfg;  // dedicated desk-scale ablation configuration
  cfg.data_n_samples = 500;
  cfg.data_frac_train = 0.8;
  cfg.data_frac_val = 0.0;
  cfg.data_frac_test = 0.2;
  cfg.data_seed = 88;
  cfg.train_batch_size = 32;
  cfg.train_phase1_epochs = 6;
  cfg.train_phase2_epochs = 6;
  cfg.train_base_lr = 3e-4;
  cfg.ablate_seeds = {11, 22, 33};
  std::string corpus_dir = g_workdir + "/ablation_corpus";
  cmd_gen_data(cfg, corpus_dir);
  AblationResult res = run_ablation(cfg, corpus_dir, g_workdir + "/ablation", &std::cout);
  std::printf("%s", res.table_text.c_str());
  std::fflush(stdout);

  auto row = [&](const std::string& name) -> const AblationRow& {
    for (const auto& r : res.rows)
      if (r.name == name) return r;
    throw std::runtime_error("missing ablation row " + name);
  };
  const AblationRow& baseline = row("baseline-itc-mlm");
  const AblationRow& naive = row("naive-i2i-unfrozen");
  const AblationRow& frozen = row("plus-i2i-frozen-bn");
  const AblationRow& lambda0 = row("strong-views-lambda0-unfrozen");
  const AblationRow& full = row("full");

  bool order_ok =
      naive.median_i2t < baseline.median_i2t && baseline.median_i2t <= frozen.median_i2t;
  bool lambda0_ok = lambda0.median_i2t < baseline.median_i2t;
  bool pass8 = order_ok && lambda0_ok;
  report(8, "BN-freezing ablation ordering", pass8,
         "I2T R@1 medians: naive " + fmt(naive.median_i2t) + " < baseline " +
             fmt(baseline.median_i2t) + " <= frozen " + fmt(frozen.median_i2t) +
             "; 3-view lambda0 " + fmt(lambda0.median_i2t) + " < baseline (" +
             fmt(elapsed_s(t0) / 60.0, 1) + " min)");

  // criterion 9: per-seed mean of the two directions, median over seeds
  auto mean_median = [&](const AblationRow& r) {
    std::vector<double> per_seed;
    for (size_t i = 0; i < r.i2t_r1.size(); ++i)
      per_seed.push_back(0.5 * (r.i2t_r1[i] + r.t2i_r1[i]));
    return median(per_seed);
  };
  double full_mean = mean_median(full);
  double base_mean = mean_median(baseline);
  bool pass9 = full_mean >= base_mean;
  bool tie_warn = !pass9 && (base_mean - full_mean) <= 0.005;  // 0.5 points
  report(9, "five-objective ablation gain", pass9 || tie_warn,
         "full mean R@1 = " + fmt(full_mean) + " vs baseline " + fmt(base_mean) +
             (tie_warn ? " (within the 0.5-point tie tolerance: warning, not failure)" : ""),
         tie_warn);
}

// ---------------------------------------------------------------------------
// criterion 10: retrieval/probe oracles and pretrained-vs-random VQA
// ---------------------------------------------------------------------------

void criterion_10() {
  auto t0 = Clock::now();
  Rng rng(1010);

  EmbeddingMatrix e = oracle::random_unit_embeddings(40, 8, rng);
  auto [idt, tdi] = retrieval_recall(e, e, {1});
  bool identity_ok = idt.recall_at_k[0] == 1.0 && tdi.recall_at_k[0] == 1.0;

  const int n = 500, trials = 20;
  double mean_r1 = 0.0;
  for (int t = 0; t < trials; ++t) {
    EmbeddingMatrix img = oracle::random_unit_embeddings(n, 8, rng);
    EmbeddingMatrix txt = oracle::random_unit_embeddings(n, 8, rng);
    auto [a, b] = retrieval_recall(img, txt, {1});
    mean_r1 += a.recall_at_k[0] / trials;
  }
  double p = 1.0 / n;
  double se = std::sqrt(p * (1 - p) / (static_cast<double>(n) * trials));
  bool chance_ok = std::fabs(mean_r1 - p) <= 3 * se;

  double mean_auc = 0.0;
  for (int run = 0; run < 20; ++run) {
    EmbeddingMatrix xtr = oracle::random_unit_embeddings(240, 16, rng);
    EmbeddingMatrix xte = oracle::random_unit_embeddings(120, 16, rng);
    std::vector<int> ytr(240), yte(120);
    for (auto& y : ytr) y = static_cast<int>(rng.uniform_int(9));
    for (auto& y : yte) y = static_cast<int>(rng.uniform_int(9));
    ProbeConfig pcfg;
    pcfg.epochs = 60;
    pcfg.seed = run;
    mean_auc += train_probe_and_auc(xtr, ytr, xte, yte, 9, pcfg).macro_auc / 20.0;
  }
  bool probe_ok = mean_auc > 0.45 && mean_auc < 0.55;

  // pretrained vs random VQA, one paired comparison per criterion-7 seed
  LoadedCorpus corpus = load_corpus(g_corpus_dir);
  TrainConfig tc = g_base_cfg.train_config(corpus.vocab.size());
  int wins = 0;
  std::string vqa_detail;
  for (const PretrainedRun& run : g_runs) {
    VQAConfig vq = g_base_cfg.vqa_config();
    vq.seed = run.seed;
    TrainState pre = load_checkpoint(run.ckpt, tc);
    VQAReport rep_pre = vqa_finetune_eval(pre, tc, corpus.splits.train, corpus.splits.test, vq);
    TrainConfig tc_rand = tc;
    tc_rand.seed = run.seed + 5000;
    TrainState fresh = init_train_state(tc_rand, corpus.vocab);
    VQAReport rep_rand =
        vqa_finetune_eval(fresh, tc_rand, corpus.splits.train, corpus.splits.test, vq);
    wins += rep_pre.overall_acc > rep_rand.overall_acc ? 1 : 0;
    vqa_detail += " [seed " + std::to_string(run.seed) + ": " + fmt(rep_pre.overall_acc, 3) +
                  " vs " + fmt(rep_rand.overall_acc, 3) + "]";
    std::printf("  [criterion-10] VQA seed %llu: pretrained %.3f vs random %.3f\n",
                static_cast<unsigned long long>(run.seed), rep_pre.overall_acc,
                rep_rand.overall_acc);
    std::fflush(stdout);
  }
  bool vqa_ok = wins == static_cast<int>(g_runs.size());

  bool pass = identity_ok && chance_ok && probe_ok && vqa_ok;
  report(10, "retrieval/probe/VQA oracles", pass,
         "identity R@1 exact: " + std::string(identity_ok ? "yes" : "NO") + "; chance R@1 = " +
             fmt(mean_r1, 5) + " (expected " + fmt(p, 5) + "); shuffled probe AUC = " +
             fmt(mean_auc, 3) + "; VQA pretrained wins " + std::to_string(wins) + "/3" +
             vqa_detail + " (" + fmt(elapsed_s(t0) / 60.0, 1) + " min)");
}

// ---------------------------------------------------------------------------
// criterion 11: reproducibility
// ---------------------------------------------------------------------------

std::string file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void criterion_11() {
  auto t0 = Clock::now();
  RunConfig cfg;
  cfg.data_n_samples = 220;
  cfg.data_frac_train = 0.9;
  cfg.data_frac_val = 0.0;
  cfg.data_frac_test = 0.1;
  cfg.data_seed = 77;
  cfg.train_seed = 77;
  cfg.train_batch_size = 16;
  cfg.train_phase1_epochs = 3;
  cfg.train_phase2_epochs = 3;

  std::vector<std::string> dirs;
  for (int rep = 0; rep < 2; ++rep) {
    std::string base = g_workdir + "/repro_" + std::to_string(rep);
    cmd_gen_data(cfg, base + "/corpus");
    cmd_pretrain(cfg, base + "/corpus", base + "/run");
    cmd_eval_retrieval(cfg, base + "/corpus", base + "/run/checkpoints/ckpt_final.bin",
                       base + "/run");
    dirs.push_back(base);
  }
  bool metrics_same =
      file_bytes(dirs[0] + "/run/metrics.jsonl") == file_bytes(dirs[1] + "/run/metrics.jsonl");
  bool ckpt_same = Checkpoint::load(dirs[0] + "/run/checkpoints/ckpt_final.bin") ==
                   Checkpoint::load(dirs[1] + "/run/checkpoints/ckpt_final.bin");
  bool retrieval_same =
      file_bytes(dirs[0] + "/run/retrieval.json") == file_bytes(dirs[1] + "/run/retrieval.json");
  bool nonempty = !file_bytes(dirs[0] + "/run/metrics.jsonl").empty();
  bool pass = metrics_same && ckpt_same && retrieval_same && nonempty;
  report(11, "reproducibility", pass,
         std::string("metrics logs byte-identical: ") + (metrics_same ? "yes" : "NO") +
             "; final checkpoints bit-identical: " + (ckpt_same ? "yes" : "NO") +
             "; retrieval reports identical: " + (retrieval_same ? "yes" : "NO") + " (" +
             fmt(elapsed_s(t0) / 60.0, 1) + " min)");
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  g_workdir = (fs::temp_directory_path() / "vlp_acceptance").string();
  if (argc > 1) g_workdir = argv[1];
  fs::remove_all(g_workdir);
  fs::create_directories(g_workdir);
  std::printf("acceptance work directory: %s\n", g_workdir.c_str());

  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criteria_8_9();
  criterion_10();
  criterion_11();

  int failures = 0;
  std::printf("\n==== acceptance summary ====\n");
  for (const auto& r : g_results) {
    const char* tag = r.pass ? "PASS" : (r.warn_only ? "WARN" : "FAIL");
    std::printf("%s criterion-%d (%s)\n", tag, r.id, r.name.c_str());
    if (!r.pass && !r.warn_only) ++failures;
  }
  std::printf("%d/%zu criteria passed%s\n", static_cast<int>(g_results.size()) - failures,
              g_results.size(), failures ? "" : " — all green");
  return failures == 0 ? 0 : 1;
}
