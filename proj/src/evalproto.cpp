#include "vlp/evalproto.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace vlp {

// ---------------------------------------------------------------------------
// retrieval
// ---------------------------------------------------------------------------

namespace {

RecallReport recall_one_direction(const EmbeddingMatrix& queries, const EmbeddingMatrix& gallery,
                                  const std::vector<int>& ks, const std::string& name) {
  RecallReport rep;
  rep.direction = name;
  rep.k_values = ks;
  rep.n_queries = queries.rows;
  rep.recall_at_k.assign(ks.size(), 0.0);
  int64_t n = queries.rows;
  std::vector<double> scores(n);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (int64_t d = 0; d < queries.cols; ++d) s += queries.row(i)[d] * gallery.row(j)[d];
      scores[j] = s;
    }
    double true_score = scores[i];
    int64_t rank = 0;  // candidates ordered before the true match
    for (int64_t j = 0; j < n; ++j) {
      if (scores[j] > true_score || (scores[j] == true_score && j < i)) ++rank;
    }
    for (size_t k = 0; k < ks.size(); ++k)
      if (rank < ks[k]) rep.recall_at_k[k] += 1.0;
  }
  for (double& r : rep.recall_at_k) r /= static_cast<double>(n);
  for (size_t k = 1; k < rep.recall_at_k.size(); ++k)
    if (rep.recall_at_k[k] + 1e-12 < rep.recall_at_k[k - 1])
      throw NumericError("recall must be monotone in k");
  return rep;
}

}  // namespace

std::pair<RecallReport, RecallReport> retrieval_recall(const EmbeddingMatrix& image_embs,
                                                       const EmbeddingMatrix& text_embs,
                                                       const std::vector<int>& ks) {
  validate_embedding_pair(image_embs, text_embs);
  if (ks.empty()) throw ConfigError("retrieval_recall: no k values");
  std::vector<int> sorted = ks;
  std::sort(sorted.begin(), sorted.end());
  for (int k : sorted)
    if (k < 1 || k > image_embs.rows)
      throw ConfigError("retrieval_recall: k outside [1, corpus size]");
  return {recall_one_direction(image_embs, text_embs, sorted, "I2T"),
          recall_one_direction(text_embs, image_embs, sorted, "T2I")};
}

EmbeddingMatrix embed_images_eval(VisionEncoder& enc, const std::vector<Sample>& samples,
                                  int batch_size) {
  int64_t n = static_cast<int64_t>(samples.size());
  EmbeddingMatrix out(n, enc.cfg.embed_dim);
  int c = enc.cfg.in_channels, s = enc.cfg.image_size;
  for (int64_t at = 0; at < n; at += batch_size) {
    int64_t b = std::min<int64_t>(batch_size, n - at);
    std::vector<double> buf(static_cast<size_t>(b) * c * s * s);
    for (int64_t i = 0; i < b; ++i)
      std::copy(samples[at + i].image.begin(), samples[at + i].image.end(),
                buf.begin() + i * c * s * s);
    Tape t;
    Var map = enc.trunk(t, t.input(Shape{b, c, s, s}, buf.data()), /*training=*/false);
    Var emb = enc.head(t, map);
    const auto& v = t.val(emb);
    std::copy(v.begin(), v.end(), out.data.begin() + at * out.cols);
  }
  return out;
}

EmbeddingMatrix embed_texts_eval(TextEncoder& enc, const std::vector<Sample>& samples,
                                 int batch_size) {
  int64_t n = static_cast<int64_t>(samples.size());
  EmbeddingMatrix out(n, enc.cfg.embed_dim);
  int64_t len = enc.cfg.max_len;
  for (int64_t at = 0; at < n; at += batch_size) {
    int64_t b = std::min<int64_t>(batch_size, n - at);
    std::vector<int> ids(b * len);
    for (int64_t i = 0; i < b; ++i)
      std::copy(samples[at + i].tokens.begin(), samples[at + i].tokens.end(),
                ids.begin() + i * len);
    Tape t;
    Var feats = enc.token_features(t, ids, b, len);
    Var emb = enc.project(t, enc.pooled(t, feats));
    const auto& v = t.val(emb);
    std::copy(v.begin(), v.end(), out.data.begin() + at * out.cols);
  }
  return out;
}

// ---------------------------------------------------------------------------
// linear probe
// ---------------------------------------------------------------------------

double mann_whitney_auc(const std::vector<double>& scores, const std::vector<uint8_t>& positive) {
  if (scores.size() != positive.size() || scores.empty())
    throw InputError("mann_whitney_auc: input size mismatch");
  int64_t n = static_cast<int64_t>(scores.size());
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int64_t a, int64_t b) { return scores[a] < scores[b]; });
  // average ranks over tie groups (1-based ranks)
  std::vector<double> rank(n);
  int64_t i = 0;
  while (i < n) {
    int64_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (int64_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  int64_t pos = 0;
  double rank_sum = 0.0;
  for (int64_t k = 0; k < n; ++k)
    if (positive[k]) {
      ++pos;
      rank_sum += rank[k];
    }
  int64_t neg = n - pos;
  if (pos == 0 || neg == 0) throw DegenerateInputError("mann_whitney_auc: one-class input");
  return (rank_sum - 0.5 * static_cast<double>(pos) * static_cast<double>(pos + 1)) /
         (static_cast<double>(pos) * static_cast<double>(neg));
}

ProbeReport train_probe_and_auc(const EmbeddingMatrix& train_x, const std::vector<int>& train_y,
                                const EmbeddingMatrix& test_x, const std::vector<int>& test_y,
                                int n_classes, const ProbeConfig& cfg) {
  if (train_x.rows != static_cast<int64_t>(train_y.size()) ||
      test_x.rows != static_cast<int64_t>(test_y.size()))
    throw InputError("probe: label count mismatch");
  int distinct = 0;
  std::vector<int64_t> counts(n_classes, 0);
  for (int y : train_y) {
    if (y < 0 || y >= n_classes) throw InputError("probe: label out of range");
    if (counts[y]++ == 0) ++distinct;
  }
  if (distinct < 2) throw DegenerateInputError("probe: single-class training split");

  Param w("probe.weight", Shape{train_x.cols, n_classes});
  Param b("probe.bias", Shape{n_classes});
  init_normal(w, 0.01, cfg.seed);
  AdamW opt;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Tape t;
    Var x = t.constant(Shape{train_x.rows, train_x.cols}, train_x.data);
    Var logits = t.add_bcast(t.matmul(x, t.leaf(w)), t.leaf(b));
    Var loss = t.cross_entropy_rows(logits, train_y);
    t.backward(loss);
    opt.step({&w, &b}, t, cfg.lr);
  }

  // test scores
  Tape t;
  Var x = t.constant(Shape{test_x.rows, test_x.cols}, test_x.data);
  Var logits = t.add_bcast(t.matmul(x, t.leaf(w)), t.leaf(b));
  const auto& lv = t.val(logits);

  ProbeReport rep;
  for (int c = 0; c < n_classes; ++c) {
    std::vector<double> scores(test_x.rows);
    std::vector<uint8_t> pos(test_x.rows);
    int64_t npos = 0;
    for (int64_t i = 0; i < test_x.rows; ++i) {
      scores[i] = lv[i * n_classes + c];
      pos[i] = test_y[i] == c ? 1 : 0;
      npos += pos[i];
    }
    if (npos == 0 || npos == test_x.rows) continue;  // class absent either way
    rep.class_ids.push_back(c);
    rep.per_class_auc.push_back(mann_whitney_auc(scores, pos));
  }
  if (rep.per_class_auc.empty()) throw DegenerateInputError("probe: no scorable classes");
  rep.macro_auc = std::accumulate(rep.per_class_auc.begin(), rep.per_class_auc.end(), 0.0) /
                  static_cast<double>(rep.per_class_auc.size());
  return rep;
}

namespace {

std::vector<double> snapshot_params(std::vector<Param*> ps) {
  std::vector<double> out;
  for (Param* p : ps) out.insert(out.end(), p->value.begin(), p->value.end());
  return out;
}

}  // namespace

ProbeReport linear_probe_auc(VisionEncoder& enc, const std::vector<Sample>& train_split,
                             const std::vector<Sample>& test_split, const ProbeConfig& cfg) {
  std::vector<Param*> ps;
  enc.collect(ps);
  std::vector<double> before = snapshot_params(ps);
  auto rm_before = enc.bns.front().running_mean;

  EmbeddingMatrix train_x = embed_images_eval(enc, train_split);
  EmbeddingMatrix test_x = embed_images_eval(enc, test_split);
  std::vector<int> train_y, test_y;
  for (const auto& s : train_split) train_y.push_back(s.label);
  for (const auto& s : test_split) test_y.push_back(s.label);
  ProbeReport rep = train_probe_and_auc(train_x, train_y, test_x, test_y, kNumClasses, cfg);

  std::vector<double> after = snapshot_params(ps);
  if (std::memcmp(before.data(), after.data(), before.size() * sizeof(double)) != 0 ||
      std::memcmp(rm_before.data(), enc.bns.front().running_mean.data(),
                  rm_before.size() * sizeof(double)) != 0)
    throw NumericError("linear_probe_auc: encoder state changed during probing");
  return rep;
}

// ---------------------------------------------------------------------------
// VQA
// ---------------------------------------------------------------------------

const std::vector<std::string>& vqa_answer_vocab() {
  static const std::vector<std::string> vocab = {"yes",    "no",     "dim",   "medium",
                                                 "bright", "circle", "square", "bar",
                                                 "upper",  "lower",  "left",  "right"};
  return vocab;
}

namespace {
constexpr int kAnswerYes = 0;
constexpr int kAnswerNo = 1;
constexpr int kAnswerIntensityBase = 2;
constexpr int kAnswerShapeBase = 5;
constexpr int kAnswerPositionBase = 8;
}  // namespace

std::vector<VQAPair> make_vqa_pairs(const std::vector<Sample>& samples, const Vocabulary& vocab,
                                    int max_len, uint64_t seed) {
  std::vector<VQAPair> out;
  out.reserve(samples.size() * 2);
  for (size_t idx = 0; idx < samples.size(); ++idx) {
    const Sample& s = samples[idx];
    Rng rng = stream_rng(seed, {0x90A, static_cast<uint64_t>(s.id)});

    VQAPair open;
    open.sample_index = static_cast<int64_t>(idx);
    open.closed = false;
    switch (rng.uniform_int(3)) {
      case 0:
        open.question = "what intensity band is shown";
        open.answer = kAnswerIntensityBase + s.attributes.intensity;
        break;
      case 1:
        open.question = "what shape is shown";
        open.answer = kAnswerShapeBase + s.attributes.shape;
        break;
      default:
        open.question = "where is the object";
        open.answer = kAnswerPositionBase + s.attributes.position;
        break;
    }
    open.tokens = tokenize(open.question, vocab, max_len);
    out.push_back(std::move(open));

    VQAPair closed;
    closed.sample_index = static_cast<int64_t>(idx);
    closed.closed = true;
    int attr = static_cast<int>(rng.uniform_int(3));
    bool truthy = rng.bernoulli(0.5);
    auto pick = [&](int true_value, int n_values) {
      if (truthy) return true_value;
      int v = static_cast<int>(rng.uniform_int(n_values - 1));
      return v >= true_value ? v + 1 : v;
    };
    if (attr == 0) {
      int v = pick(s.attributes.intensity, 3);
      closed.question = std::string("is the intensity band ") + kIntensityWords[v];
    } else if (attr == 1) {
      int v = pick(s.attributes.shape, 3);
      closed.question = std::string("is the shape ") + kShapeWords[v];
    } else {
      int v = pick(s.attributes.position, 4);
      closed.question = std::string("is the position ") + kPositionWords[v];
    }
    closed.answer = truthy ? kAnswerYes : kAnswerNo;
    closed.tokens = tokenize(closed.question, vocab, max_len);
    out.push_back(std::move(closed));
  }
  return out;
}

VQAReport score_vqa(const std::vector<int>& predictions, const std::vector<VQAPair>& pairs) {
  if (predictions.size() != pairs.size()) throw InputError("score_vqa: size mismatch");
  VQAReport rep;
  int64_t open_hits = 0, closed_hits = 0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    bool hit = predictions[i] == pairs[i].answer;
    if (pairs[i].closed) {
      ++rep.n_closed;
      closed_hits += hit;
    } else {
      ++rep.n_open;
      open_hits += hit;
    }
  }
  rep.open_acc = rep.n_open ? static_cast<double>(open_hits) / rep.n_open : 0.0;
  rep.closed_acc = rep.n_closed ? static_cast<double>(closed_hits) / rep.n_closed : 0.0;
  int64_t total = rep.n_open + rep.n_closed;
  rep.overall_acc = total ? static_cast<double>(open_hits + closed_hits) / total : 0.0;
  return rep;
}

namespace {

struct VQAModel {
  VisionEncoder vision;
  TextEncoder text;
  FusionModule fusion;  // single layer; its MLM head is unused here
  Param prompt_tokens;  // [n_learnable_tokens, width]
  Linear mlp1, mlp2;    // two-layer classification head

  VQAModel(const TrainState& init_state, const TrainConfig& model_cfg, const VQAConfig& cfg)
      : vision(init_state.model.vision),
        text(init_state.model.text),
        fusion(
            [&] {
              FusionConfig fc;
              fc.image_channels = model_cfg.vision.channels.back();
              fc.image_tokens = model_cfg.vision.map_extent() * model_cfg.vision.map_extent();
              fc.width = model_cfg.text.width;
              fc.heads = model_cfg.fusion_heads;
              fc.layers = 1;
              fc.max_text_len = model_cfg.text.max_len + cfg.n_learnable_tokens;
              fc.vocab_size = model_cfg.text.vocab_size;
              return fc;
            }(),
            hash_combine(cfg.seed, 0xF1E1D)),
        prompt_tokens("vqa.prompt_tokens",
                      Shape{cfg.n_learnable_tokens, model_cfg.text.width}),
        mlp1("vqa.mlp1", model_cfg.text.width, model_cfg.text.width,
             hash_combine(cfg.seed, 0xF1E2D)),
        mlp2("vqa.mlp2", model_cfg.text.width, static_cast<int64_t>(vqa_answer_vocab().size()),
             hash_combine(cfg.seed, 0xF1E3D)) {
    if (cfg.n_learnable_tokens > text.cfg.extra_slots)
      throw ConfigError("n_learnable_tokens exceeds the text encoder's extra slots");
    init_normal(prompt_tokens, 0.02, hash_combine(cfg.seed, 0xF1E4D));
  }

  // logits [B, n_answers]; the classification feature is the fused activation
  // at the question's CLS position
  Var forward(Tape& t, Var images, const std::vector<int>& ids, int64_t b, int64_t len) {
    Var premap = vision.trunk(t, images, /*training=*/true);
    Var feats = text.token_features(t, ids, b, len, &prompt_tokens);
    Var fused = fusion.fused_features(t, premap, feats);
    Var cls = t.slice_seq(fused, fusion.cfg.image_tokens, 1);
    Var h = t.reshape(cls, Shape{b, fusion.cfg.width});
    return mlp2.forward(t, t.gelu(mlp1.forward(t, h)));
  }

  std::vector<Param*> encoder_params() {
    std::vector<Param*> ps;
    vision.collect(ps);
    text.collect(ps);
    return ps;
  }
  std::vector<Param*> head_params() {
    std::vector<Param*> ps;
    fusion.collect(ps);
    ps.push_back(&prompt_tokens);
    mlp1.collect(ps);
    mlp2.collect(ps);
    return ps;
  }
};

}  // namespace

VQAReport vqa_finetune_eval(const TrainState& init_state, const TrainConfig& model_cfg,
                            const std::vector<Sample>& train_samples,
                            const std::vector<Sample>& test_samples, const VQAConfig& cfg) {
  int n_answers = static_cast<int>(vqa_answer_vocab().size());
  const Vocabulary& vocab = init_state.vocab;
  std::vector<VQAPair> train_pairs =
      make_vqa_pairs(train_samples, vocab, model_cfg.text.max_len, cfg.seed);
  std::vector<VQAPair> test_pairs =
      make_vqa_pairs(test_samples, vocab, model_cfg.text.max_len, hash_combine(cfg.seed, 1));
  for (const auto& p : train_pairs)
    if (p.answer < 0 || p.answer >= n_answers)
      throw ConfigError("vqa: answer outside the answer vocabulary");

  VQAModel model(init_state, model_cfg, cfg);
  // fresh fine-tune: drop any optimizer moments inherited from pretraining
  for (Param* p : model.encoder_params()) {
    p->m.clear();
    p->v.clear();
  }
  // encoders at the low rate, new modules at the high rate
  AdamW opt_enc, opt_head;
  Rng rng = stream_rng(cfg.seed, {0xF17E});

  const int img_c = model_cfg.vision.in_channels;
  const int img_s = model_cfg.vision.image_size;
  const int64_t len = model_cfg.text.max_len;

  int64_t n = static_cast<int64_t>(train_pairs.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int64_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    int64_t steps = n / cfg.batch_size;
    for (int64_t s = 0; s < steps; ++s) {
      int64_t b = cfg.batch_size;
      std::vector<double> imgs(static_cast<size_t>(b) * img_c * img_s * img_s);
      std::vector<int> ids(b * len);
      std::vector<int> answers(b);
      for (int64_t i = 0; i < b; ++i) {
        const VQAPair& p = train_pairs[order[s * cfg.batch_size + i]];
        const Sample& smp = train_samples[p.sample_index];
        std::copy(smp.image.begin(), smp.image.end(), imgs.begin() + i * img_c * img_s * img_s);
        std::copy(p.tokens.begin(), p.tokens.end(), ids.begin() + i * len);
        answers[i] = p.answer;
      }
      Tape t;
      Var logits = model.forward(t, t.input(Shape{b, img_c, img_s, img_s}, imgs.data()), ids, b,
                                 len);
      Var loss = t.cross_entropy_rows(logits, answers);
      t.backward(loss);
      opt_enc.step(model.encoder_params(), t, cfg.lr_encoders);
      opt_head.step(model.head_params(), t, cfg.lr_heads);
    }
  }

  // held-out evaluation
  std::vector<int> preds(test_pairs.size());
  const int eval_batch = 64;
  for (size_t at = 0; at < test_pairs.size(); at += eval_batch) {
    int64_t b = std::min<size_t>(eval_batch, test_pairs.size() - at);
    std::vector<double> imgs(static_cast<size_t>(b) * img_c * img_s * img_s);
    std::vector<int> ids(b * len);
    for (int64_t i = 0; i < b; ++i) {
      const VQAPair& p = test_pairs[at + i];
      const Sample& smp = test_samples[p.sample_index];
      std::copy(smp.image.begin(), smp.image.end(), imgs.begin() + i * img_c * img_s * img_s);
      std::copy(p.tokens.begin(), p.tokens.end(), ids.begin() + i * len);
    }
    Tape t;
    Var logits =
        model.forward(t, t.input(Shape{b, img_c, img_s, img_s}, imgs.data()), ids, b, len);
    const auto& lv = t.val(logits);
    for (int64_t i = 0; i < b; ++i) {
      int best = 0;
      for (int a = 1; a < n_answers; ++a)
        if (lv[i * n_answers + a] > lv[i * n_answers + best]) best = a;
      preds[at + i] = best;
    }
  }
  return score_vqa(preds, test_pairs);
}

}  // namespace vlp
