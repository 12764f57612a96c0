#include "vlp/trainer.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>

namespace vlp {

using nlohmann::json;

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (contrastive losses degenerate)");
  if (phase1_epochs < 0 || phase2_epochs < 0) throw ConfigError("epoch counts must be >= 0");
  if (base_lr <= 0.0) throw ConfigError("base_lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (mask_rate <= 0.0 || mask_rate >= 1.0) throw ConfigError("mask_rate must be in (0,1)");
  if (init_tau <= 0.0) throw ConfigError("init_tau must be positive");
  weights.validate();
  perturb.validate();
  vision.validate();
  if (use_i2i && !forward_strong_views)
    throw ConfigError("use_i2i requires forward_strong_views");
}

ModelBundle::ModelBundle(const TrainConfig& cfg, uint64_t seed)
    : vision(cfg.vision, seed),
      text(cfg.text, seed),
      fusion(
          [&] {
            FusionConfig fc;
            fc.image_channels = cfg.vision.channels.back();
            fc.image_tokens = cfg.vision.map_extent() * cfg.vision.map_extent();
            fc.width = cfg.text.width;
            fc.heads = cfg.fusion_heads;
            fc.layers = cfg.fusion_layers;
            fc.max_text_len = cfg.text.max_len;
            fc.vocab_size = cfg.text.vocab_size;
            return fc;
          }(),
          seed),
      temperature(cfg.init_tau, cfg.shared_temperature) {}

std::vector<Param*> ModelBundle::params() {
  std::vector<Param*> out;
  vision.collect(out);
  text.collect(out);
  fusion.collect(out);
  temperature.collect(out);
  return out;
}

std::vector<BNLayerState*> ModelBundle::bn_states() { return vision.bn_states(); }

TrainState init_train_state(const TrainConfig& cfg, const Vocabulary& vocab) {
  cfg.validate();
  if (cfg.text.vocab_size != vocab.size())
    throw ConfigError("text.vocab_size does not match the corpus vocabulary");
  TrainState st;
  st.model = ModelBundle(cfg, cfg.seed);
  st.opt = AdamW(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
  st.vocab = vocab;
  st.rng = stream_rng(cfg.seed, {0x7121});
  return st;
}

double cosine_lr(int64_t step, int64_t total_steps, double base_lr) {
  if (total_steps <= 0) throw ConfigError("cosine_lr: total_steps must be positive");
  if (step < 0 || step > total_steps) throw InputError("cosine_lr: step outside [0, total]");
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                         static_cast<double>(total_steps)));
}

int64_t planned_total_steps(const TrainConfig& cfg, int64_t n_train) {
  int64_t per_epoch = n_train / cfg.batch_size;  // partial batches dropped
  return per_epoch * (cfg.phase1_epochs + cfg.phase2_epochs);
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

MetricsWriter::MetricsWriter(const std::string& path) : out_(path) {
  if (!out_) throw InputError("cannot open metrics file: " + path);
  json header;
  header["schema"] = "vlpkit-metrics-v1";
  header["fields"] = {"step", "phase", "lr",  "itc", "itc_pert_image",
                      "itc_pert_text", "i2i", "mlm", "total", "tau"};
  out_ << header.dump() << "\n";
}

void MetricsWriter::write_step(int64_t step, int phase, double lr, const LossReport& r,
                               double tau) {
  json line;
  line["step"] = step;
  line["phase"] = phase;
  line["lr"] = lr;
  line["itc"] = r.itc;
  line["itc_pert_image"] = r.itc_pert_image;
  line["itc_pert_text"] = r.itc_pert_text;
  line["i2i"] = r.i2i;
  line["mlm"] = r.mlm;
  line["total"] = r.total;
  line["tau"] = tau;
  out_ << line.dump() << "\n";
}

std::vector<MetricsRecord> read_metrics(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open metrics file: " + path);
  std::string line;
  if (!std::getline(f, line)) throw InputError("metrics file empty: " + path);
  json header = json::parse(line);
  if (header.value("schema", "") != "vlpkit-metrics-v1")
    throw InputError("unsupported metrics schema in " + path);
  std::vector<MetricsRecord> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    MetricsRecord r;
    r.step = j["step"].get<int64_t>();
    r.phase = j["phase"].get<int>();
    r.lr = j["lr"].get<double>();
    r.losses.itc = j["itc"].get<double>();
    r.losses.itc_pert_image = j["itc_pert_image"].get<double>();
    r.losses.itc_pert_text = j["itc_pert_text"].get<double>();
    r.losses.i2i = j["i2i"].get<double>();
    r.losses.mlm = j["mlm"].get<double>();
    r.losses.total = j["total"].get<double>();
    r.tau = j["tau"].get<double>();
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// train step
// ---------------------------------------------------------------------------

LossReport train_step(const std::vector<const Sample*>& batch, TrainState& state,
                      const TrainConfig& cfg, int phase) {
  int64_t b = static_cast<int64_t>(batch.size());
  if (b < 2) throw InputError("train_step: batch size must be >= 2");
  const int img_c = cfg.vision.in_channels;
  const int img_s = cfg.vision.image_size;
  const int64_t max_len = cfg.text.max_len;

  // assemble weak views and tokens
  std::vector<double> weak_imgs(static_cast<size_t>(b) * img_c * img_s * img_s);
  std::vector<int> tokens(static_cast<size_t>(b) * max_len);
  for (int64_t i = 0; i < b; ++i) {
    Image v = weak_augment(batch[i]->image, img_c, img_s, img_s, cfg.perturb, state.rng);
    std::copy(v.begin(), v.end(), weak_imgs.begin() + i * img_c * img_s * img_s);
    if (static_cast<int64_t>(batch[i]->tokens.size()) != max_len)
      throw InputError("train_step: sample token length does not match max_len");
    std::copy(batch[i]->tokens.begin(), batch[i]->tokens.end(), tokens.begin() + i * max_len);
  }

  Tape t;
  // In phase 2 the weak view and both strong views pass through the encoder
  // as one batch, so unfrozen batch statistics mix across views exactly as a
  // single shared encoder sees them; freezing the BN statistics removes that
  // pollution channel.
  bool strong_now = phase == 2 && cfg.forward_strong_views;
  Var premap;
  Var map_a, map_b;
  if (strong_now) {
    std::vector<double> all_imgs(3 * weak_imgs.size());
    std::copy(weak_imgs.begin(), weak_imgs.end(), all_imgs.begin());
    for (int64_t i = 0; i < b; ++i) {
      auto [va, vb] =
          strong_augment_pair(batch[i]->image, img_c, img_s, img_s, cfg.perturb, state.rng);
      std::copy(va.begin(), va.end(),
                all_imgs.begin() + (b + i) * img_c * img_s * img_s);
      std::copy(vb.begin(), vb.end(),
                all_imgs.begin() + (2 * b + i) * img_c * img_s * img_s);
    }
    Var images = t.input(Shape{3 * b, img_c, img_s, img_s}, all_imgs.data());
    Var joint = state.model.vision.trunk(t, images, /*training=*/true);
    state.strong_view_forwards += 2;
    premap = t.slice_dim0(joint, 0, b);
    map_a = t.slice_dim0(joint, b, b);
    map_b = t.slice_dim0(joint, 2 * b, b);
  } else {
    Var images = t.input(Shape{b, img_c, img_s, img_s}, weak_imgs.data());
    premap = state.model.vision.trunk(t, images, /*training=*/true);
  }
  Var img_emb = state.model.vision.head(t, premap);

  Var token_feats = state.model.text.token_features(t, tokens, b, max_len);
  Var pooled = state.model.text.pooled(t, token_feats);
  Var txt_emb = state.model.text.project(t, pooled);

  Temperature& temp = state.model.temperature;
  Var l_itc = itc_loss_graph(t, img_emb, txt_emb, temp.inv_tau(t, Temperature::kItc));

  Var l_pi = t.constant_scalar(0.0);
  if (cfg.use_itc_pert_image) {
    Var pmap = dropblock(t, premap, cfg.perturb.dropblock_p, cfg.perturb.dropblock_size,
                         cfg.perturb.dropblock_rescale, /*training=*/true, state.rng);
    Var pert_img_emb = state.model.vision.head(t, pmap);
    l_pi = itc_loss_graph(t, pert_img_emb, txt_emb, temp.inv_tau(t, Temperature::kItcPertImage));
  }

  Var l_pt = t.constant_scalar(0.0);
  if (cfg.use_itc_pert_text) {
    Var pert_pooled =
        feature_dropout(t, pooled, cfg.perturb.text_dropout_p, /*training=*/true, state.rng);
    Var pert_txt_emb = state.model.text.project(t, pert_pooled);
    l_pt = itc_loss_graph(t, img_emb, pert_txt_emb, temp.inv_tau(t, Temperature::kItcPertText));
  }

  Var l_i2i = t.constant_scalar(0.0);
  if (strong_now && cfg.use_i2i) {
    Var emb_a = state.model.vision.head(t, map_a);
    Var emb_b = state.model.vision.head(t, map_b);
    l_i2i = ntxent_i2i_graph(t, emb_a, emb_b, temp.inv_tau(t, Temperature::kI2I));
  }

  MaskingOutcome mo = mask_tokens(tokens, b, max_len, cfg.mask_rate, state.vocab, state.rng,
                                  cfg.bert_style_masking);
  Var masked_feats = state.model.text.token_features(t, mo.masked_tokens, b, max_len);
  Var logits = state.model.fusion.fuse_and_predict(t, premap, masked_feats);
  Var l_mlm = mlm_loss_graph(t, logits, mo.targets, mo.mask_positions);

  double lam_um = (phase == 2 && cfg.use_i2i) ? cfg.weights.lambda_um : 0.0;
  Var total = t.weighted_sum(
      {l_itc, l_pi, l_pt, l_i2i, l_mlm},
      {cfg.weights.lambda_cm, cfg.weights.lambda_cm, cfg.weights.lambda_cm, lam_um,
       cfg.weights.lambda_fm});

  LossReport rep;
  rep.itc = t.scalar(l_itc);
  rep.itc_pert_image = t.scalar(l_pi);
  rep.itc_pert_text = t.scalar(l_pt);
  rep.i2i = t.scalar(l_i2i);
  rep.mlm = t.scalar(l_mlm);
  // recomputing through total_loss also validates finiteness per component
  LossWeights effective = cfg.weights;
  effective.lambda_um = lam_um;
  rep.total = total_loss(rep.itc, rep.itc_pert_image, rep.itc_pert_text, rep.i2i, rep.mlm,
                         effective);
  if (!std::isfinite(t.scalar(total)))
    throw NumericError("train_step: total loss is non-finite");

  t.backward(total);
  double lr = cosine_lr(state.global_step, state.total_steps, cfg.base_lr);
  state.opt.step(state.model.params(), t, lr);
  state.model.temperature.clamp();
  ++state.global_step;
  return rep;
}

// ---------------------------------------------------------------------------
// phases
// ---------------------------------------------------------------------------

std::vector<LossReport> run_phase(TrainState& state, const TrainConfig& cfg, int phase,
                                  const std::vector<Sample>& data, const RunPhaseOptions& opts) {
  cfg.validate();
  if (phase != 1 && phase != 2) throw ConfigError("phase must be 1 or 2");
  if (phase == 2 && state.phase < 1)
    throw SequencingError("phase 2 requires a phase-1 (or loaded) state");
  int epochs = phase == 1 ? cfg.phase1_epochs : cfg.phase2_epochs;
  state.phase = phase;
  if (phase == 2 && cfg.freeze_bn_phase2) {
    // idempotent: already-frozen layers stay frozen
    for (BNLayerState* bn : state.model.bn_states()) bn->frozen = true;
  }
  if (state.total_steps == 0) state.total_steps = planned_total_steps(cfg, data.size());

  std::vector<LossReport> out;
  if (epochs == 0) return out;
  int64_t n = static_cast<int64_t>(data.size());
  if (n < cfg.batch_size) throw ConfigError("dataset smaller than one batch");

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<int64_t> order(n);
    for (int64_t i = 0; i < n; ++i) order[i] = i;
    state.rng.shuffle(order);
    int64_t steps = n / cfg.batch_size;
    for (int64_t s = 0; s < steps; ++s) {
      std::vector<const Sample*> batch;
      batch.reserve(cfg.batch_size);
      for (int64_t k = 0; k < cfg.batch_size; ++k)
        batch.push_back(&data[order[s * cfg.batch_size + k]]);
      auto t0 = std::chrono::steady_clock::now();
      LossReport rep = train_step(batch, state, cfg, phase);
      auto t1 = std::chrono::steady_clock::now();
      if (opts.metrics)
        opts.metrics->write_step(state.global_step - 1, phase,
                                 cosine_lr(state.global_step - 1, state.total_steps, cfg.base_lr),
                                 rep, state.model.temperature.tau());
      if (opts.timings)
        (*opts.timings) << (state.global_step - 1) << " "
                        << std::chrono::duration<double, std::milli>(t1 - t0).count() << "\n";
      out.push_back(rep);
    }
    if (!opts.checkpoint_dir.empty() && cfg.checkpoint_every_epochs > 0 &&
        (epoch + 1) % cfg.checkpoint_every_epochs == 0) {
      save_checkpoint(state, opts.checkpoint_dir + "/ckpt_phase" + std::to_string(phase) +
                                 "_epoch" + std::to_string(epoch + 1) + ".bin");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const TrainState& state, const std::string& path) {
  Checkpoint ck;
  TrainState& st = const_cast<TrainState&>(state);
  for (Param* p : st.model.params()) {
    std::vector<int64_t> dims(p->shape.nd);
    for (int i = 0; i < p->shape.nd; ++i) dims[i] = p->shape[i];
    ck.put_f64("param/" + p->name, dims, p->value);
    if (!p->m.empty()) {
      ck.put_f64("adam/m/" + p->name, dims, p->m);
      ck.put_f64("adam/v/" + p->name, dims, p->v);
    }
  }
  for (BNLayerState* bn : st.model.bn_states()) {
    std::string base = bn->weight.name;
    base = base.substr(0, base.size() - std::string(".weight").size());
    ck.put_f64("bn/" + base + "/running_mean",
               {static_cast<int64_t>(bn->running_mean.size())}, bn->running_mean);
    ck.put_f64("bn/" + base + "/running_var", {static_cast<int64_t>(bn->running_var.size())},
               bn->running_var);
    ck.put_u8("bn/" + base + "/frozen", {static_cast<uint8_t>(bn->frozen ? 1 : 0)});
  }
  ck.put_scalar_u64("trainer/phase", static_cast<uint64_t>(st.phase));
  ck.put_scalar_u64("trainer/global_step", static_cast<uint64_t>(st.global_step));
  ck.put_scalar_u64("trainer/total_steps", static_cast<uint64_t>(st.total_steps));
  ck.put_scalar_u64("trainer/strong_view_forwards",
                    static_cast<uint64_t>(st.strong_view_forwards));
  ck.put_scalar_u64("optim/step_count", static_cast<uint64_t>(st.opt.step_count()));
  ck.put_u64("trainer/rng", st.rng.save_state());
  ck.put_scalar_u64("meta/vocab_size", static_cast<uint64_t>(st.vocab.size()));
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  ck.save(path);
}

TrainState load_checkpoint(const std::string& path, const TrainConfig& cfg) {
  Checkpoint ck = Checkpoint::load(path);
  Vocabulary vocab = build_vocabulary();
  if (ck.scalar_u64("meta/vocab_size") != static_cast<uint64_t>(vocab.size()))
    throw CheckpointError("checkpoint vocabulary size does not match this build");
  TrainState st = init_train_state(cfg, vocab);
  for (Param* p : st.model.params()) {
    const auto& v = ck.f64("param/" + p->name);
    if (static_cast<int64_t>(v.size()) != p->numel())
      throw CheckpointError("checkpoint size mismatch for " + p->name);
    p->value = v;
    if (ck.has("adam/m/" + p->name)) {
      p->m = ck.f64("adam/m/" + p->name);
      p->v = ck.f64("adam/v/" + p->name);
    }
  }
  for (BNLayerState* bn : st.model.bn_states()) {
    std::string base = bn->weight.name;
    base = base.substr(0, base.size() - std::string(".weight").size());
    bn->running_mean = ck.f64("bn/" + base + "/running_mean");
    bn->running_var = ck.f64("bn/" + base + "/running_var");
    bn->frozen = ck.u8("bn/" + base + "/frozen")[0] != 0;
    if (bn->running_mean.size() != static_cast<size_t>(bn->channels()))
      throw CheckpointError("checkpoint BN stat size mismatch for " + base);
  }
  st.phase = static_cast<int>(ck.scalar_u64("trainer/phase"));
  st.global_step = static_cast<int64_t>(ck.scalar_u64("trainer/global_step"));
  st.total_steps = static_cast<int64_t>(ck.scalar_u64("trainer/total_steps"));
  st.strong_view_forwards = static_cast<int64_t>(ck.scalar_u64("trainer/strong_view_forwards"));
  st.opt.set_step_count(static_cast<int64_t>(ck.scalar_u64("optim/step_count")));
  st.rng.load_state(ck.u64("trainer/rng"));
  return st;
}

}  // namespace vlp
