#include "vlp/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace vlp {

CorpusSpec RunConfig::corpus_spec() const {
  CorpusSpec s;
  s.n_samples = data_n_samples;
  s.image_size = data_image_size;
  s.n_channels = data_n_channels;
  s.max_len = data_max_len;
  s.seed = data_seed;
  return s;
}

std::array<double, 3> RunConfig::split_fractions() const {
  return {data_frac_train, data_frac_val, data_frac_test};
}

TrainConfig RunConfig::train_config(int vocab_size) const {
  TrainConfig t;
  t.phase1_epochs = train_phase1_epochs;
  t.phase2_epochs = train_phase2_epochs;
  t.batch_size = train_batch_size;
  t.base_lr = train_base_lr;
  t.weight_decay = train_weight_decay;
  t.weights.lambda_cm = train_lambda_cm;
  t.weights.lambda_um = train_lambda_um;
  t.weights.lambda_fm = train_lambda_fm;
  t.seed = train_seed;
  t.perturb = perturb;
  t.mask_rate = train_mask_rate;
  t.bert_style_masking = train_bert_style_masking;
  t.shared_temperature = model_shared_temperature;
  t.init_tau = model_init_tau;
  t.use_itc_pert_image = train_use_itc_pert_image;
  t.use_itc_pert_text = train_use_itc_pert_text;
  t.use_i2i = train_use_i2i;
  t.forward_strong_views = train_forward_strong_views;
  t.freeze_bn_phase2 = train_freeze_bn_phase2;
  t.vision.image_size = data_image_size;
  t.vision.in_channels = data_n_channels;
  t.vision.channels = model_vision_channels;
  t.vision.embed_dim = model_embed_dim;
  t.text.vocab_size = vocab_size;
  t.text.max_len = data_max_len;
  t.text.extra_slots = model_extra_token_slots;
  t.text.width = model_text_width;
  t.text.heads = model_text_heads;
  t.text.blocks = model_text_blocks;
  t.text.embed_dim = model_embed_dim;
  t.fusion_layers = model_fusion_layers;
  t.fusion_heads = model_fusion_heads;
  t.checkpoint_every_epochs = train_checkpoint_every_epochs;
  return t;
}

ProbeConfig RunConfig::probe_config() const {
  ProbeConfig p;
  p.epochs = eval_probe_epochs;
  p.lr = eval_probe_lr;
  p.seed = train_seed;
  return p;
}

VQAConfig RunConfig::vqa_config() const {
  VQAConfig v;
  v.epochs = eval_vqa_epochs;
  v.batch_size = eval_vqa_batch_size;
  v.lr_heads = eval_vqa_lr_heads;
  v.lr_encoders = eval_vqa_lr_encoders;
  v.n_learnable_tokens = eval_vqa_learnable_tokens;
  v.seed = train_seed;
  return v;
}

// ---------------------------------------------------------------------------
// key registry
// ---------------------------------------------------------------------------

namespace {

int64_t parse_i64(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return r;
  } catch (...) {
    throw ConfigError("invalid integer for " + key + ": '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return r;
  } catch (...) {
    throw ConfigError("invalid unsigned integer for " + key + ": '" + v + "'");
  }
}

double parse_f64(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return r;
  } catch (...) {
    throw ConfigError("invalid number for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean for " + key + ": '" + v + "' (expected true/false)");
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& v, const std::string& key, F item) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) throw ConfigError("empty list element in " + key);
    out.push_back(item(part, key));
  }
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(int v) { return std::to_string(v); }
std::string fmt(int64_t v) { return std::to_string(v); }
std::string fmt(uint64_t v) { return std::to_string(v); }
template <typename T>
std::string fmt_list(const std::vector<T>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

struct KeyHandler {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<std::pair<std::string, KeyHandler>>& registry() {
  static const std::vector<std::pair<std::string, KeyHandler>> reg = [] {
    std::vector<std::pair<std::string, KeyHandler>> r;
    auto add = [&r](const std::string& key, auto setter, auto getter) {
      r.push_back({key, KeyHandler{setter, getter}});
    };
#define KEY_I64(key, field)                                                       \
  add(key, [](RunConfig& c, const std::string& v) { c.field = parse_i64(v, key); }, \
      [](const RunConfig& c) { return fmt(c.field); })
#define KEY_INT(key, field)                                                        \
  add(key,                                                                         \
      [](RunConfig& c, const std::string& v) {                                     \
        c.field = static_cast<int>(parse_i64(v, key));                             \
      },                                                                           \
      [](const RunConfig& c) { return fmt(c.field); })
#define KEY_U64(key, field)                                                       \
  add(key, [](RunConfig& c, const std::string& v) { c.field = parse_u64(v, key); }, \
      [](const RunConfig& c) { return fmt(c.field); })
#define KEY_F64(key, field)                                                       \
  add(key, [](RunConfig& c, const std::string& v) { c.field = parse_f64(v, key); }, \
      [](const RunConfig& c) { return fmt(c.field); })
#define KEY_BOOL(key, field)                                                       \
  add(key, [](RunConfig& c, const std::string& v) { c.field = parse_bool(v, key); }, \
      [](const RunConfig& c) { return fmt(c.field); })

    KEY_I64("data.n_samples", data_n_samples);
    KEY_INT("data.image_size", data_image_size);
    KEY_INT("data.n_channels", data_n_channels);
    KEY_INT("data.max_len", data_max_len);
    KEY_U64("data.seed", data_seed);
    KEY_F64("data.frac_train", data_frac_train);
    KEY_F64("data.frac_val", data_frac_val);
    KEY_F64("data.frac_test", data_frac_test);

    KEY_INT("model.embed_dim", model_embed_dim);
    add("model.vision_channels",
        [](RunConfig& c, const std::string& v) {
          c.model_vision_channels = parse_list<int>(v, "model.vision_channels",
                                                    [](const std::string& s, const std::string& k) {
                                                      return static_cast<int>(parse_i64(s, k));
                                                    });
        },
        [](const RunConfig& c) { return fmt_list(c.model_vision_channels); });
    KEY_INT("model.text_width", model_text_width);
    KEY_INT("model.text_heads", model_text_heads);
    KEY_INT("model.text_blocks", model_text_blocks);
    KEY_INT("model.fusion_layers", model_fusion_layers);
    KEY_INT("model.fusion_heads", model_fusion_heads);
    KEY_BOOL("model.shared_temperature", model_shared_temperature);
    KEY_F64("model.init_tau", model_init_tau);
    KEY_INT("model.extra_token_slots", model_extra_token_slots);

    KEY_F64("perturb.dropblock_p", perturb.dropblock_p);
    KEY_INT("perturb.dropblock_size", perturb.dropblock_size);
    KEY_BOOL("perturb.dropblock_rescale", perturb.dropblock_rescale);
    KEY_F64("perturb.text_dropout_p", perturb.text_dropout_p);
    KEY_F64("perturb.jitter_p", perturb.jitter_p);
    KEY_F64("perturb.jitter_strength", perturb.jitter_strength);
    KEY_F64("perturb.grayscale_p", perturb.grayscale_p);
    KEY_F64("perturb.blur_p", perturb.blur_p);
    KEY_F64("perturb.blur_sigma_lo", perturb.blur_sigma_lo);
    KEY_F64("perturb.blur_sigma_hi", perturb.blur_sigma_hi);
    KEY_F64("perturb.strong_hflip_p", perturb.strong_hflip_p);
    KEY_F64("perturb.weak_hflip_p", perturb.weak_hflip_p);

    KEY_INT("train.phase1_epochs", train_phase1_epochs);
    KEY_INT("train.phase2_epochs", train_phase2_epochs);
    KEY_INT("train.batch_size", train_batch_size);
    KEY_F64("train.base_lr", train_base_lr);
    KEY_F64("train.weight_decay", train_weight_decay);
    KEY_F64("train.lambda_cm", train_lambda_cm);
    KEY_F64("train.lambda_um", train_lambda_um);
    KEY_F64("train.lambda_fm", train_lambda_fm);
    KEY_F64("train.mask_rate", train_mask_rate);
    KEY_BOOL("train.bert_style_masking", train_bert_style_masking);
    KEY_U64("train.seed", train_seed);
    KEY_INT("train.checkpoint_every_epochs", train_checkpoint_every_epochs);
    KEY_BOOL("train.use_itc_pert_image", train_use_itc_pert_image);
    KEY_BOOL("train.use_itc_pert_text", train_use_itc_pert_text);
    KEY_BOOL("train.use_i2i", train_use_i2i);
    KEY_BOOL("train.forward_strong_views", train_forward_strong_views);
    KEY_BOOL("train.freeze_bn_phase2", train_freeze_bn_phase2);

    add("eval.recall_ks",
        [](RunConfig& c, const std::string& v) {
          c.eval_recall_ks = parse_list<int>(v, "eval.recall_ks",
                                             [](const std::string& s, const std::string& k) {
                                               return static_cast<int>(parse_i64(s, k));
                                             });
        },
        [](const RunConfig& c) { return fmt_list(c.eval_recall_ks); });
    KEY_INT("eval.probe_epochs", eval_probe_epochs);
    KEY_F64("eval.probe_lr", eval_probe_lr);
    KEY_INT("eval.vqa_epochs", eval_vqa_epochs);
    KEY_INT("eval.vqa_batch_size", eval_vqa_batch_size);
    KEY_F64("eval.vqa_lr_heads", eval_vqa_lr_heads);
    KEY_F64("eval.vqa_lr_encoders", eval_vqa_lr_encoders);
    KEY_INT("eval.vqa_learnable_tokens", eval_vqa_learnable_tokens);

    add("ablate.seeds",
        [](RunConfig& c, const std::string& v) {
          c.ablate_seeds = parse_list<uint64_t>(v, "ablate.seeds",
                                                [](const std::string& s, const std::string& k) {
                                                  return parse_u64(s, k);
                                                });
        },
        [](const RunConfig& c) { return fmt_list(c.ablate_seeds); });

#undef KEY_I64
#undef KEY_INT
#undef KEY_U64
#undef KEY_F64
#undef KEY_BOOL
    return r;
  }();
  return reg;
}

const KeyHandler* find_key(const std::string& key) {
  for (const auto& [k, h] : registry())
    if (k == key) return &h;
  return nullptr;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void apply_override(RunConfig& cfg, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must look like section.key=value: '" + assignment + "'");
  std::string key = trim(assignment.substr(0, eq));
  std::string value = trim(assignment.substr(eq + 1));
  const KeyHandler* h = find_key(key);
  if (!h) throw ConfigError("unknown config key: '" + key + "'");
  h->set(cfg, value);
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  RunConfig cfg;
  std::string line, section;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("malformed line " + std::to_string(lineno) + " in " + path);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    std::string full = section.empty() ? key : section + "." + key;
    const KeyHandler* h = find_key(full);
    if (!h) throw ConfigError("unknown config key: '" + full + "' (line " +
                              std::to_string(lineno) + " of " + path + ")");
    h->set(cfg, value);
  }
  return cfg;
}

std::string render_config(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& [key, h] : registry()) {
    std::string sec = key.substr(0, key.find('.'));
    if (sec != section) {
      if (!section.empty()) os << "\n";
      os << "[" << sec << "]\n";
      section = sec;
    }
    os << key.substr(key.find('.') + 1) << " = " << h.get(cfg) << "\n";
  }
  return os.str();
}

}  // namespace vlp
