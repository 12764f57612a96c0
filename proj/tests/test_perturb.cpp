#include <doctest.h>

#include <cmath>
#include <cstring>

#include "oracles.hpp"
#include "vlp/datagen.hpp"
#include "vlp/perturb.hpp"

using namespace vlp;

TEST_SUITE_BEGIN("perturb");

TEST_CASE("dropblock eval identity and degenerate p") {
  Rng rng(31);
  Tape t;
  std::vector<double> data(2 * 3 * 8 * 8);
  for (auto& v : data) v = rng.normal();
  Var x = t.constant(Shape{2, 3, 8, 8}, data);
  Var eval_out = dropblock(t, x, 0.5, 3, true, /*training=*/false, rng);
  CHECK(t.val(eval_out) == data);  // exact identity
  Var p0 = dropblock(t, x, 0.0, 3, true, /*training=*/true, rng);
  CHECK(t.val(p0) == data);
  CHECK_THROWS_AS(dropblock(t, x, 1.5, 3, true, true, rng), ConfigError);
  CHECK_THROWS_AS(dropblock(t, x, 0.5, 9, true, true, rng), InputError);  // block > extent
}

TEST_CASE("dropblock empirical drop rate matches the target") {
  // Monte-Carlo frequency oracle over 10,000 trials on a 1x1x12x12 map
  Rng rng(32);
  const int h = 12, w = 12, bs = 3;
  const double p = 0.5;
  int64_t zeroed = 0, total = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    auto mask = dropblock_spatial_mask(h, w, p, bs, /*rescale=*/true, rng);
    for (double m : mask) {
      zeroed += m == 0.0 ? 1 : 0;
      ++total;
    }
  }
  double frac = static_cast<double>(zeroed) / static_cast<double>(total);
  CHECK(std::fabs(frac - p) < 0.05);
}

TEST_CASE("dropblock zeros form complete blocks and rescale preserves the sum") {
  Rng rng(33);
  const int h = 10, w = 10, bs = 3;
  for (int trial = 0; trial < 200; ++trial) {
    auto mask = dropblock_spatial_mask(h, w, 0.4, bs, true, rng);
    // every zero belongs to at least one fully-zeroed bs x bs block
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (mask[y * w + x] != 0.0) continue;
        bool covered = false;
        for (int ay = std::max(0, y - bs + 1); ay <= std::min(h - bs, y) && !covered; ++ay) {
          for (int ax = std::max(0, x - bs + 1); ax <= std::min(w - bs, x) && !covered; ++ax) {
            bool full = true;
            for (int yy = ay; yy < ay + bs && full; ++yy)
              for (int xx = ax; xx < ax + bs && full; ++xx) full = mask[yy * w + xx] == 0.0;
            covered = full;
          }
        }
        CHECK(covered);
      }
    }
    // surviving cells carry total/surviving
    int64_t surv = 0;
    for (double m : mask) surv += m > 0.0 ? 1 : 0;
    if (surv > 0 && surv < h * w) {
      double expected = static_cast<double>(h * w) / static_cast<double>(surv);
      for (double m : mask)
        if (m > 0.0) CHECK(m == doctest::Approx(expected));
    }
  }
}

TEST_CASE("feature dropout statistics and identity") {
  Rng rng(34);
  // eval identity is exact
  Tape t;
  std::vector<double> data(100);
  for (auto& v : data) v = rng.normal();
  Var x = t.constant(Shape{10, 10}, data);
  CHECK(t.val(feature_dropout(t, x, 0.75, /*training=*/false, rng)) == data);
  CHECK(t.val(feature_dropout(t, x, 0.0, /*training=*/true, rng)) == data);
  CHECK_THROWS_AS(feature_dropout(t, x, 1.0, true, rng), ConfigError);

  // binomial frequency oracle at p = 0.75
  auto mask = dropout_mask(10000, 0.75, rng);
  int64_t zeros = 0;
  for (double m : mask) zeros += m == 0.0 ? 1 : 0;
  double frac = static_cast<double>(zeros) / 10000.0;
  CHECK(frac > 0.73);
  CHECK(frac < 0.77);

  // inverted scaling: the mean over many masks approximates the input
  const int64_t n = 50;
  std::vector<double> acc(n, 0.0);
  const int trials = 10000;
  for (int k = 0; k < trials; ++k) {
    auto m = dropout_mask(n, 0.75, rng);
    for (int64_t i = 0; i < n; ++i) acc[i] += m[i];
  }
  double mean_scale = 0.0;
  for (int64_t i = 0; i < n; ++i) mean_scale += acc[i] / trials;
  mean_scale /= static_cast<double>(n);
  CHECK(std::fabs(mean_scale - 1.0) < 0.02);
}

TEST_CASE("strong augmentation determinism, identity config, flip involution") {
  CorpusSpec spec;
  spec.n_samples = 4;
  spec.seed = 77;
  auto corpus = generate_corpus(spec);
  PerturbConfig cfg;

  // all probabilities zero -> (image, image)
  PerturbConfig id_cfg = cfg;
  id_cfg.jitter_p = id_cfg.grayscale_p = id_cfg.blur_p = id_cfg.strong_hflip_p = 0.0;
  Rng r0(1);
  auto [va, vb] = strong_augment_pair(corpus[0].image, 1, 64, 64, id_cfg, r0);
  CHECK(va == corpus[0].image);
  CHECK(vb == corpus[0].image);

  // same rng seed -> identical pair across runs
  Rng r1(42), r2(42);
  auto p1 = strong_augment_pair(corpus[1].image, 1, 64, 64, cfg, r1);
  auto p2 = strong_augment_pair(corpus[1].image, 1, 64, 64, cfg, r2);
  CHECK(p1.first == p2.first);
  CHECK(p1.second == p2.second);

  // flip-only config mirrors about the vertical axis; flipping twice restores
  PerturbConfig flip_cfg = id_cfg;
  flip_cfg.strong_hflip_p = 1.0;
  Rng r3(5);
  Image flipped = strong_augment(corpus[2].image, 1, 64, 64, flip_cfg, r3);
  CHECK(flipped != corpus[2].image);
  Image back = flipped;
  hflip(back, 1, 64, 64);
  CHECK(back == corpus[2].image);

  // default config: both views differ from the input (jitter_p = 1)
  int differing = 0;
  Rng r4(9);
  for (int k = 0; k < 200; ++k) {
    auto [a, b2] = strong_augment_pair(corpus[3].image, 1, 64, 64, cfg, r4);
    differing += (a != corpus[3].image && b2 != corpus[3].image) ? 1 : 0;
  }
  CHECK(differing == 200);

  // outputs stay in [0,1]
  Rng r5(13);
  for (int k = 0; k < 50; ++k) {
    Image v = strong_augment(corpus[0].image, 1, 64, 64, cfg, r5);
    for (double x : v) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
  }
}

TEST_CASE("weak augmentation preserves the intensity band") {
  CorpusSpec spec;
  spec.n_samples = 1000;
  spec.seed = 123;
  auto corpus = generate_corpus(spec);
  PerturbConfig cfg;
  cfg.weak_hflip_p = 0.5;  // exercise the non-identity path
  Rng rng(55);
  for (const Sample& s : corpus) {
    Image v = weak_augment(s.image, 1, 64, 64, cfg, rng);
    auto dec = oracle::decode_attributes(v, 1, 64, 64, spec.bands);
    CHECK(dec.intensity == s.attributes.intensity);
    for (double x : v) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
    }
  }

  // identity config returns the input unchanged
  PerturbConfig id_cfg;
  id_cfg.weak_hflip_p = 0.0;
  Rng r2(3);
  CHECK(weak_augment(corpus[0].image, 1, 64, 64, id_cfg, r2) == corpus[0].image);
}

TEST_CASE("perturb config validation") {
  PerturbConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.dropblock_size = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);  // must be odd
  cfg = PerturbConfig{};
  cfg.text_dropout_p = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = PerturbConfig{};
  cfg.jitter_p = 1.2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_SUITE_END();
