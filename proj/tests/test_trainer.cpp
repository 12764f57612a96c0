#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "vlp/harness.hpp"
#include "vlp/serialize.hpp"
#include "vlp/trainer.hpp"

using namespace vlp;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("trainer");

namespace {

TrainConfig tiny_config(const Vocabulary& vocab, uint64_t seed = 3) {
  TrainConfig tc;
  tc.phase1_epochs = 2;
  tc.phase2_epochs = 2;
  tc.batch_size = 8;
  tc.base_lr = 5e-4;
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

std::vector<Sample> tiny_corpus(int64_t n, uint64_t seed = 5) {
  CorpusSpec spec;
  spec.n_samples = n;
  spec.image_size = 32;
  spec.max_len = 16;
  spec.seed = seed;
  return generate_corpus(spec);
}

std::vector<const Sample*> first_batch(const std::vector<Sample>& data, int n) {
  std::vector<const Sample*> out;
  for (int i = 0; i < n; ++i) out.push_back(&data[i]);
  return out;
}

std::string tmpfile(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("cosine schedule endpoints and midpoint") {
  CHECK(cosine_lr(0, 100, 1e-4) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(cosine_lr(100, 100, 1e-4) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cosine_lr(50, 100, 1e-4) == doctest::Approx(5e-5).epsilon(1e-12));
  double prev = 1e9;
  for (int s = 0; s <= 100; ++s) {
    double lr = cosine_lr(s, 100, 1e-4);
    CHECK(lr <= prev + 1e-18);
    prev = lr;
  }
  CHECK_THROWS_AS(cosine_lr(0, 0, 1e-4), ConfigError);
  CHECK_THROWS_AS(cosine_lr(101, 100, 1e-4), InputError);
}

TEST_CASE("train_step is a pure function of (state, batch, config)") {
  Vocabulary vocab = build_vocabulary();
  auto corpus = tiny_corpus(16);
  TrainConfig tc = tiny_config(vocab);
  TrainState a = init_train_state(tc, vocab);
  a.total_steps = 16;
  TrainState b = a;  // deep copy
  auto batch = first_batch(corpus, 8);
  train_step(batch, a, tc, 1);
  train_step(batch, b, tc, 1);
  std::string pa = tmpfile("vlp_state_a.bin"), pb = tmpfile("vlp_state_b.bin");
  save_checkpoint(a, pa);
  save_checkpoint(b, pb);
  CHECK(Checkpoint::load(pa) == Checkpoint::load(pb));
  fs::remove(pa);
  fs::remove(pb);
}

TEST_CASE("train_step report satisfies the total-loss identity and batch floor") {
  Vocabulary vocab = build_vocabulary();
  auto corpus = tiny_corpus(16);
  TrainConfig tc = tiny_config(vocab);
  TrainState st = init_train_state(tc, vocab);
  st.total_steps = 16;
  auto batch = first_batch(corpus, 8);
  LossReport r = train_step(batch, st, tc, 1);
  LossWeights w = tc.weights;
  CHECK(std::fabs(r.total - (w.lambda_cm * (r.itc + r.itc_pert_image + r.itc_pert_text) +
                             w.lambda_fm * r.mlm)) < 1e-9);
  CHECK(r.i2i == 0.0);  // no strong views in phase 1
  CHECK(st.strong_view_forwards == 0);

  auto small = first_batch(corpus, 1);
  CHECK_THROWS_AS(train_step(small, st, tc, 1), InputError);
}

TEST_CASE("zero loss weights leave parameters unchanged except bookkeeping") {
  Vocabulary vocab = build_vocabulary();
  auto corpus = tiny_corpus(16);
  TrainConfig tc = tiny_config(vocab);
  tc.weights.lambda_cm = 0.0;
  tc.weights.lambda_um = 0.0;
  tc.weights.lambda_fm = 0.0;
  TrainState st = init_train_state(tc, vocab);
  st.total_steps = 16;
  std::vector<std::vector<double>> before;
  for (Param* p : st.model.params()) before.push_back(p->value);
  train_step(first_batch(corpus, 8), st, tc, 1);
  size_t i = 0;
  for (Param* p : st.model.params()) CHECK(p->value == before[i++]);
  CHECK(st.opt.step_count() == 1);
  CHECK(st.global_step == 1);
}

TEST_CASE("phase sequencing, idempotent freezing and the freeze contract") {
  Vocabulary vocab = build_vocabulary();
  auto corpus = tiny_corpus(24);
  TrainConfig tc = tiny_config(vocab);
  TrainState st = init_train_state(tc, vocab);

  CHECK_THROWS_AS(run_phase(st, tc, 2, corpus), SequencingError);

  // phase1_epochs = 0: parameters untouched, phase marker advanced
  TrainConfig tc0 = tc;
  tc0.phase1_epochs = 0;
  std::vector<std::vector<double>> before;
  for (Param* p : st.model.params()) before.push_back(p->value);
  run_phase(st, tc0, 1, corpus);
  size_t i = 0;
  for (Param* p : st.model.params()) CHECK(p->value == before[i++]);
  CHECK(st.phase == 1);

  // phase 2 freezes all BN layers; running stats constant from entry on
  TrainConfig tc2 = tc;
  tc2.phase2_epochs = 1;
  run_phase(st, tc2, 2, corpus);
  for (BNLayerState* bn : st.model.bn_states()) CHECK(bn->frozen);
  CHECK(st.strong_view_forwards > 0);

  std::vector<std::vector<double>> stats;
  for (BNLayerState* bn : st.model.bn_states()) {
    stats.push_back(bn->running_mean);
    stats.push_back(bn->running_var);
  }
  run_phase(st, tc2, 2, corpus);  // enter again: no error, stats still constant
  size_t k = 0;
  for (BNLayerState* bn : st.model.bn_states()) {
    CHECK(std::memcmp(bn->running_mean.data(), stats[k].data(),
                      stats[k].size() * sizeof(double)) == 0);
    ++k;
    CHECK(std::memcmp(bn->running_var.data(), stats[k].data(),
                      stats[k].size() * sizeof(double)) == 0);
    ++k;
  }
}

TEST_CASE("training reduces the loss (3 seeds)") {
  Vocabulary vocab = build_vocabulary();
  auto corpus = tiny_corpus(64);
  for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    TrainConfig tc = tiny_config(vocab, seed);
    tc.phase1_epochs = 5;
    tc.phase2_epochs = 0;
    tc.base_lr = 1e-3;
    TrainState st = init_train_state(tc, vocab);
    auto reports = run_phase(st, tc, 1, corpus);
    REQUIRE(reports.size() >= 10);
    size_t tail = std::max<size_t>(1, reports.size() / 10);
    std::vector<double> first, last;
    for (size_t j = 0; j < tail; ++j) first.push_back(reports[j].total);
    for (size_t j = reports.size() - tail; j < reports.size(); ++j)
      last.push_back(reports[j].total);
    CHECK(median(last) < median(first));
  }
}

TEST_CASE("checkpoint round trip restores the state bit-exactly") {
  Vocabulary vocab = build_vocabulary();
  auto corpus = tiny_corpus(16);
  TrainConfig tc = tiny_config(vocab);
  TrainState st = init_train_state(tc, vocab);
  st.total_steps = 64;
  for (int s = 0; s < 3; ++s) train_step(first_batch(corpus, 8), st, tc, 1);
  st.phase = 1;

  std::string path = tmpfile("vlp_ckpt_roundtrip.bin");
  save_checkpoint(st, path);
  TrainState loaded = load_checkpoint(path, tc);

  auto pa = st.model.params();
  auto pb = loaded.model.params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(std::memcmp(pa[i]->value.data(), pb[i]->value.data(),
                      pa[i]->value.size() * sizeof(double)) == 0);
    CHECK(pa[i]->m == pb[i]->m);
    CHECK(pa[i]->v == pb[i]->v);
  }
  CHECK(loaded.phase == st.phase);
  CHECK(loaded.global_step == st.global_step);
  CHECK(loaded.total_steps == st.total_steps);
  CHECK(loaded.rng == st.rng);
  CHECK(loaded.opt.step_count() == st.opt.step_count());

  std::string path2 = tmpfile("vlp_ckpt_roundtrip2.bin");
  save_checkpoint(loaded, path2);
  CHECK(Checkpoint::load(path) == Checkpoint::load(path2));
  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("resumed training matches unbroken training step for step") {
  Vocabulary vocab = build_vocabulary();
  auto corpus = tiny_corpus(32);
  TrainConfig tc = tiny_config(vocab);
  tc.phase1_epochs = 2;  // 2 epochs x 4 steps
  tc.phase2_epochs = 0;

  int64_t horizon = planned_total_steps(tc, corpus.size());
  TrainState full = init_train_state(tc, vocab);
  full.total_steps = horizon;
  run_phase(full, tc, 1, corpus);

  TrainConfig tc1 = tc;
  tc1.phase1_epochs = 1;
  TrainState half = init_train_state(tc, vocab);
  half.total_steps = horizon;  // the schedule horizon is fixed up front
  run_phase(half, tc1, 1, corpus);
  std::string path = tmpfile("vlp_ckpt_resume.bin");
  save_checkpoint(half, path);
  TrainState resumed = load_checkpoint(path, tc);
  run_phase(resumed, tc1, 1, corpus);

  std::string pf = tmpfile("vlp_ckpt_full.bin"), pr = tmpfile("vlp_ckpt_resumed.bin");
  save_checkpoint(full, pf);
  save_checkpoint(resumed, pr);
  CHECK(Checkpoint::load(pf) == Checkpoint::load(pr));
  fs::remove(path);
  fs::remove(pf);
  fs::remove(pr);
}

TEST_CASE("corrupted checkpoint is rejected") {
  Vocabulary vocab = build_vocabulary();
  TrainConfig tc = tiny_config(vocab);
  TrainState st = init_train_state(tc, vocab);
  std::string path = tmpfile("vlp_ckpt_corrupt.bin");
  save_checkpoint(st, path);
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(path, tc), CheckpointError);
  CHECK_THROWS_AS(Checkpoint::load("/nonexistent/ckpt.bin"), CheckpointError);
  fs::remove(path);
}

TEST_CASE("metrics log round trip and determinism") {
  Vocabulary vocab = build_vocabulary();
  auto corpus = tiny_corpus(16);
  TrainConfig tc = tiny_config(vocab);
  tc.phase1_epochs = 1;
  tc.phase2_epochs = 0;

  std::string p1 = tmpfile("vlp_metrics_a.jsonl"), p2 = tmpfile("vlp_metrics_b.jsonl");
  for (const std::string& p : {p1, p2}) {
    TrainState st = init_train_state(tc, vocab);
    MetricsWriter mw(p);
    RunPhaseOptions opts;
    opts.metrics = &mw;
    run_phase(st, tc, 1, corpus, opts);
    mw.flush();
  }
  std::ifstream f1(p1), f2(p2);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);  // identical runs, byte-identical logs
  CHECK(!s1.empty());

  auto records = read_metrics(p1);
  CHECK(records.size() == 2);  // 16 samples / batch 8
  for (const auto& r : records) {
    CHECK(r.phase == 1);
    CHECK(std::isfinite(r.losses.total));
    CHECK(r.tau > 0.0);
  }
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("config validation catches degenerate setups") {
  Vocabulary vocab = build_vocabulary();
  TrainConfig tc = tiny_config(vocab);
  tc.batch_size = 1;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = tiny_config(vocab);
  tc.use_i2i = true;
  tc.forward_strong_views = false;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = tiny_config(vocab);
  tc.mask_rate = 0.0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_SUITE_END();
