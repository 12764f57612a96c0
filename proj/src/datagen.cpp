#include "vlp/datagen.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace vlp {

namespace fs = std::filesystem;
using nlohmann::json;

void CorpusSpec::validate() const {
  if (n_samples < 0) throw ConfigError("n_samples must be >= 0");
  if (image_size < 16) throw ConfigError("image_size must be >= 16");
  if (n_channels != 1 && n_channels != 3) throw ConfigError("n_channels must be 1 or 3");
  if (max_len < 4) throw ConfigError("max_len must be >= 4");
  for (const auto& b : bands) {
    if (!(0.0 <= b.lo && b.lo < b.hi && b.hi <= 1.0))
      throw ConfigError("intensity band out of range");
  }
  for (size_t i = 0; i + 1 < bands.size(); ++i) {
    if (bands[i].hi >= bands[i + 1].lo)
      throw ConfigError("intensity bands must be disjoint and ordered");
  }
}

std::string AttributeRecord::str() const {
  std::string s = "intensity=";
  s += kIntensityWords[intensity];
  s += ";shape=";
  s += kShapeWords[shape];
  s += ";position=";
  s += kPositionWords[position];
  return s;
}

std::string make_caption(const AttributeRecord& a) {
  std::string s = kIntensityWords[a.intensity];
  s += " ";
  s += kShapeWords[a.shape];
  s += " ";
  s += kPositionWords[a.position];
  return s;
}

Vocabulary build_vocabulary() {
  Vocabulary v;
  v.id_to_word = {"[PAD]", "[CLS]", "[MASK]", "[UNK]"};
  for (const char* w : kIntensityWords) v.id_to_word.push_back(w);
  for (const char* w : kShapeWords) v.id_to_word.push_back(w);
  for (const char* w : kPositionWords) v.id_to_word.push_back(w);
  for (const char* w : kQuestionWords) v.id_to_word.push_back(w);
  return v;
}

int Vocabulary::word_id(const std::string& w) const {
  for (int i = 0; i < size(); ++i)
    if (id_to_word[i] == w) return i;
  return unk_id;
}

std::vector<int> tokenize(const std::string& caption, const Vocabulary& vocab, int max_len) {
  std::vector<std::string> words;
  std::istringstream ss(caption);
  std::string w;
  while (ss >> w) words.push_back(w);
  if (static_cast<int>(words.size()) + 1 > max_len)
    throw InputError("tokenize: caption has " + std::to_string(words.size()) +
                     " words which does not fit max_len=" + std::to_string(max_len));
  std::vector<int> out(max_len, vocab.pad_id);
  out[0] = vocab.cls_id;
  for (size_t i = 0; i < words.size(); ++i) out[i + 1] = vocab.word_id(words[i]);
  return out;
}

std::string detokenize(const std::vector<int>& tokens, const Vocabulary& vocab) {
  std::string out;
  for (int id : tokens) {
    if (id == vocab.pad_id) break;
    if (id == vocab.cls_id) continue;
    if (id < 0 || id >= vocab.size()) throw InputError("detokenize: id out of range");
    if (!out.empty()) out += " ";
    out += vocab.id_to_word[id];
  }
  return out;
}

namespace {

void render_object(std::vector<double>& img, int size, int n_channels, const AttributeRecord& a,
                   Rng& rng, const std::array<IntensityBandRange, 3>& bands) {
  const auto& band = bands[a.intensity];
  double value = rng.uniform(band.lo + 0.02, band.hi - 0.02);

  // center: named axis displaced, the orthogonal axis kept near center so the
  // dominant displacement decodes the position word unambiguously
  double fx = 0.5, fy = 0.5;
  double near = rng.uniform(0.44, 0.56);
  double off = rng.uniform(0.22, 0.34);
  switch (a.position) {
    case 0: fy = off; fx = near; break;        // upper
    case 1: fy = 1.0 - off; fx = near; break;  // lower
    case 2: fx = off; fy = near; break;        // left
    case 3: fx = 1.0 - off; fy = near; break;  // right
  }
  double cx = fx * size, cy = fy * size;

  double half_x = 0, half_y = 0, radius = 0;
  if (a.shape == 0) {
    radius = rng.uniform(0.08, 0.13) * size;
  } else if (a.shape == 1) {
    half_x = half_y = rng.uniform(0.08, 0.13) * size;
  } else {
    double hl = rng.uniform(0.15, 0.20) * size;
    double hs = rng.uniform(0.035, 0.05) * size;
    bool horizontal = rng.bernoulli(0.5);
    half_x = horizontal ? hl : hs;
    half_y = horizontal ? hs : hl;
  }

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      bool inside;
      if (a.shape == 0)
        inside = dx * dx + dy * dy <= radius * radius;
      else
        inside = std::fabs(dx) <= half_x && std::fabs(dy) <= half_y;
      if (inside)
        for (int c = 0; c < n_channels; ++c) img[(c * size + y) * size + x] = value;
    }
  }
}

}  // namespace

std::vector<Sample> generate_corpus(const CorpusSpec& spec) {
  spec.validate();
  const Vocabulary vocab = build_vocabulary();
  std::vector<Sample> out;
  out.reserve(spec.n_samples);
  for (int64_t i = 0; i < spec.n_samples; ++i) {
    // per-sample stream keyed by (seed, index): order-independent
    Rng rng = stream_rng(spec.seed, {0xDA7A, static_cast<uint64_t>(i)});
    Sample s;
    s.id = i;
    s.attributes.intensity = static_cast<int>(rng.uniform_int(3));
    s.attributes.shape = static_cast<int>(rng.uniform_int(3));
    s.attributes.position = static_cast<int>(rng.uniform_int(4));
    s.label = class_label(s.attributes);
    s.caption = make_caption(s.attributes);
    s.image.assign(static_cast<size_t>(spec.n_channels) * spec.image_size * spec.image_size, 0.0);
    render_object(s.image, spec.image_size, spec.n_channels, s.attributes, rng, spec.bands);
    s.tokens = tokenize(s.caption, vocab, spec.max_len);
    out.push_back(std::move(s));
  }
  return out;
}

CorpusSplits split_corpus(const std::vector<Sample>& corpus,
                          const std::array<double, 3>& fractions, uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0 || f > 1.0) throw ConfigError("split fraction outside [0,1]");
    sum += f;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  int64_t n = static_cast<int64_t>(corpus.size());
  std::array<int64_t, 3> sizes{};
  std::array<double, 3> rema{};
  int64_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    double exact = fractions[i] * static_cast<double>(n);
    sizes[i] = static_cast<int64_t>(std::floor(exact));
    rema[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  while (assigned < n) {  // largest remainder, ties to the earlier split
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rema[i] > rema[best]) best = i;
    sizes[best] += 1;
    rema[best] = -1.0;
    ++assigned;
  }

  std::vector<int64_t> idx(n);
  for (int64_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng = stream_rng(seed, {0x5917});
  rng.shuffle(idx);

  CorpusSplits out;
  int64_t pos = 0;
  for (int part = 0; part < 3; ++part) {
    auto& dst = part == 0 ? out.train : part == 1 ? out.val : out.test;
    for (int64_t k = 0; k < sizes[part]; ++k) dst.push_back(corpus[idx[pos++]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

namespace {

constexpr char kImageMagic[8] = {'V', 'L', 'P', 'I', 'M', 'G', 'S', '1'};

void save_split(const std::string& dir, const std::string& name, const std::vector<Sample>& split,
                const CorpusSpec& spec) {
  {
    std::ofstream f(dir + "/images_" + name + ".bin", std::ios::binary);
    if (!f) throw InputError("cannot write images file in " + dir);
    f.write(kImageMagic, 8);
    uint64_t dims[4] = {static_cast<uint64_t>(split.size()),
                        static_cast<uint64_t>(spec.n_channels),
                        static_cast<uint64_t>(spec.image_size),
                        static_cast<uint64_t>(spec.image_size)};
    f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    for (const Sample& s : split)
      f.write(reinterpret_cast<const char*>(s.image.data()),
              static_cast<std::streamsize>(s.image.size() * sizeof(double)));
  }
  {
    std::ofstream f(dir + "/manifest_" + name + ".tsv");
    if (!f) throw InputError("cannot write manifest in " + dir);
    f << "# vlpkit corpus manifest v1\n";
    f << "# fields: id\tcaption\ttoken_ids\tattributes\tlabel\n";
    for (const Sample& s : split) {
      f << s.id << '\t' << s.caption << '\t';
      for (size_t i = 0; i < s.tokens.size(); ++i) f << (i ? " " : "") << s.tokens[i];
      f << '\t' << s.attributes.str() << '\t' << s.label << '\n';
    }
  }
}

int find3(const std::array<const char*, 3>& arr, const std::string& w) {
  for (int i = 0; i < 3; ++i)
    if (arr[i] == w) return i;
  throw InputError("manifest: unknown attribute value " + w);
}

std::vector<Sample> load_split(const std::string& dir, const std::string& name) {
  std::vector<Sample> out;
  std::ifstream imf(dir + "/images_" + name + ".bin", std::ios::binary);
  if (!imf) throw InputError("cannot open images file for split " + name + " in " + dir);
  char magic[8];
  imf.read(magic, 8);
  if (imf.gcount() != 8 || std::memcmp(magic, kImageMagic, 8) != 0)
    throw InputError("bad image file magic for split " + name);
  uint64_t dims[4];
  imf.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!imf) throw InputError("truncated image file header for split " + name);
  uint64_t n = dims[0];
  size_t per = dims[1] * dims[2] * dims[3];
  out.resize(n);
  for (uint64_t i = 0; i < n; ++i) {
    out[i].image.resize(per);
    imf.read(reinterpret_cast<char*>(out[i].image.data()),
             static_cast<std::streamsize>(per * sizeof(double)));
    if (!imf) throw InputError("truncated image data for split " + name);
  }

  std::ifstream mf(dir + "/manifest_" + name + ".tsv");
  if (!mf) throw InputError("cannot open manifest for split " + name);
  std::string line;
  uint64_t row = 0;
  while (std::getline(mf, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (row >= n) throw InputError("manifest has more rows than image file for split " + name);
    Sample& s = out[row];
    std::istringstream ss(line);
    std::string id_s, caption, tokens_s, attrs, label_s;
    if (!std::getline(ss, id_s, '\t') || !std::getline(ss, caption, '\t') ||
        !std::getline(ss, tokens_s, '\t') || !std::getline(ss, attrs, '\t') ||
        !std::getline(ss, label_s))
      throw InputError("manifest row malformed in split " + name);
    s.id = std::stoll(id_s);
    s.caption = caption;
    std::istringstream ts(tokens_s);
    int tok;
    while (ts >> tok) s.tokens.push_back(tok);
    std::istringstream as(attrs);
    std::string kv;
    while (std::getline(as, kv, ';')) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw InputError("manifest attribute malformed");
      std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
      if (k == "intensity")
        s.attributes.intensity = find3(kIntensityWords, v);
      else if (k == "shape")
        s.attributes.shape = find3(kShapeWords, v);
      else if (k == "position") {
        int p = -1;
        for (int i = 0; i < 4; ++i)
          if (kPositionWords[i] == v) p = i;
        if (p < 0) throw InputError("manifest: unknown position " + v);
        s.attributes.position = p;
      } else {
        throw InputError("manifest: unknown attribute key " + k);
      }
    }
    s.label = std::stoi(label_s);
    ++row;
  }
  if (row != n) throw InputError("manifest row count mismatch for split " + name);
  return out;
}

}  // namespace

void save_corpus(const std::string& dir, const CorpusSplits& splits, const CorpusSpec& spec,
                 const Vocabulary& vocab) {
  fs::create_directories(dir);
  json meta;
  meta["schema"] = "vlpkit-corpus-v1";
  meta["image_size"] = spec.image_size;
  meta["n_channels"] = spec.n_channels;
  meta["max_len"] = spec.max_len;
  meta["seed"] = spec.seed;
  meta["n_samples"] = spec.n_samples;
  json jb = json::array();
  for (const auto& b : spec.bands) jb.push_back({{"lo", b.lo}, {"hi", b.hi}});
  meta["bands"] = jb;
  std::ofstream(dir + "/meta.json") << meta.dump(2) << "\n";

  {
    std::ofstream f(dir + "/vocab.txt");
    for (int i = 0; i < vocab.size(); ++i) f << i << '\t' << vocab.id_to_word[i] << '\n';
  }
  save_split(dir, "train", splits.train, spec);
  save_split(dir, "val", splits.val, spec);
  save_split(dir, "test", splits.test, spec);
}

LoadedCorpus load_corpus(const std::string& dir) {
  LoadedCorpus out;
  std::ifstream mf(dir + "/meta.json");
  if (!mf) throw InputError("cannot open corpus meta.json in " + dir);
  json meta = json::parse(mf, nullptr, true);
  if (meta.value("schema", "") != "vlpkit-corpus-v1")
    throw InputError("unsupported corpus schema in " + dir);
  out.spec.image_size = meta["image_size"].get<int>();
  out.spec.n_channels = meta["n_channels"].get<int>();
  out.spec.max_len = meta["max_len"].get<int>();
  out.spec.seed = meta["seed"].get<uint64_t>();
  out.spec.n_samples = meta["n_samples"].get<int64_t>();
  for (size_t i = 0; i < 3; ++i) {
    out.spec.bands[i].lo = meta["bands"][i]["lo"].get<double>();
    out.spec.bands[i].hi = meta["bands"][i]["hi"].get<double>();
  }

  std::ifstream vf(dir + "/vocab.txt");
  if (!vf) throw InputError("cannot open vocab.txt in " + dir);
  std::string line;
  while (std::getline(vf, line)) {
    auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    out.vocab.id_to_word.push_back(line.substr(tab + 1));
  }
  if (out.vocab.size() < 4) throw InputError("vocab.txt too small");

  out.splits.train = load_split(dir, "train");
  out.splits.val = load_split(dir, "val");
  out.splits.test = load_split(dir, "test");
  return out;
}

}  // namespace vlp
