#pragma once

// Synthetic image-caption corpus: captions describe an object's intensity
// band, shape, and position, all of which are encoded in the rendered pixels.
// Everything is a pure function of (spec, seed).

#include <array>
#include <string>
#include <vector>

#include "vlp/common.hpp"

namespace vlp {

inline constexpr std::array<const char*, 3> kIntensityWords = {"dim", "medium", "bright"};
inline constexpr std::array<const char*, 3> kShapeWords = {"circle", "square", "bar"};
inline constexpr std::array<const char*, 4> kPositionWords = {"upper", "lower", "left", "right"};

// Question-template words used by the VQA protocol; kept in the base
// vocabulary so question tokenization never produces UNK.
inline constexpr std::array<const char*, 10> kQuestionWords = {
    "what", "where", "is", "the", "shown", "object", "shape", "intensity", "band", "position"};

struct IntensityBandRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct CorpusSpec {
  int64_t n_samples = 0;
  int image_size = 64;
  int n_channels = 1;
  int max_len = 32;
  uint64_t seed = 0;
  // disjoint with gaps so weak augmentation cannot move an object across bands
  std::array<IntensityBandRange, 3> bands = {
      IntensityBandRange{0.10, 0.30}, IntensityBandRange{0.40, 0.60},
      IntensityBandRange{0.70, 0.90}};

  void validate() const;
};

struct AttributeRecord {
  int intensity = 0;  // index into kIntensityWords
  int shape = 0;      // index into kShapeWords
  int position = 0;   // index into kPositionWords

  std::string str() const;
  bool operator==(const AttributeRecord& o) const {
    return intensity == o.intensity && shape == o.shape && position == o.position;
  }
};

// class label for probe/VQA reuse: shape x intensity-band product
inline int class_label(const AttributeRecord& a) { return a.shape * 3 + a.intensity; }
inline constexpr int kNumClasses = 9;

struct Sample {
  int64_t id = 0;
  std::vector<double> image;  // [c,h,w], row-major, values in [0,1]
  std::string caption;
  std::vector<int> tokens;
  AttributeRecord attributes;
  int label = 0;
};

struct Vocabulary {
  std::vector<std::string> id_to_word;  // dense from 0
  int pad_id = 0;
  int cls_id = 1;
  int mask_id = 2;
  int unk_id = 3;

  int size() const { return static_cast<int>(id_to_word.size()); }
  int word_id(const std::string& w) const;  // unk_id if unknown
  bool is_special(int id) const { return id == pad_id || id == cls_id || id == mask_id; }
};

Vocabulary build_vocabulary();

std::vector<Sample> generate_corpus(const CorpusSpec& spec);

std::vector<int> tokenize(const std::string& caption, const Vocabulary& vocab, int max_len);
std::string detokenize(const std::vector<int>& tokens, const Vocabulary& vocab);

std::string make_caption(const AttributeRecord& a);

struct CorpusSplits {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

CorpusSplits split_corpus(const std::vector<Sample>& corpus,
                          const std::array<double, 3>& fractions, uint64_t seed);

// Persistence: per split one binary image array (magic "VLPIMGS1", u64 dims
// n,c,h,w, raw f64) plus a tab-separated manifest with fields, in order:
// id, caption, space-separated token ids, attribute record, label.
void save_corpus(const std::string& dir, const CorpusSplits& splits, const CorpusSpec& spec,
                 const Vocabulary& vocab);

struct LoadedCorpus {
  CorpusSpec spec;
  Vocabulary vocab;
  CorpusSplits splits;
};

LoadedCorpus load_corpus(const std::string& dir);

}  // namespace vlp
