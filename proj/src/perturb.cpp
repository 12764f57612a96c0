#include "vlp/perturb.hpp"

#include <algorithm>
#include <cmath>

namespace vlp {

void PerturbConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (p < 0.0 || p > 1.0) throw ConfigError(std::string(name) + " outside [0,1]");
  };
  prob(dropblock_p, "dropblock_p");
  prob(jitter_p, "jitter_p");
  prob(grayscale_p, "grayscale_p");
  prob(blur_p, "blur_p");
  prob(strong_hflip_p, "strong_hflip_p");
  prob(weak_hflip_p, "weak_hflip_p");
  if (text_dropout_p < 0.0 || text_dropout_p >= 1.0)
    throw ConfigError("text_dropout_p outside [0,1)");
  if (dropblock_size < 1 || dropblock_size % 2 == 0)
    throw ConfigError("dropblock_size must be odd and >= 1");
  if (blur_sigma_lo <= 0.0 || blur_sigma_hi < blur_sigma_lo)
    throw ConfigError("blur sigma range invalid");
  if (jitter_strength < 0.0 || jitter_strength >= 1.0)
    throw ConfigError("jitter_strength outside [0,1)");
}

// ---------------------------------------------------------------------------
// DropBlock
// ---------------------------------------------------------------------------

double dropblock_seed_gamma(int h, int w, int block_size, double p) {
  if (p < 0.0 || p > 1.0) throw ConfigError("dropblock p outside [0,1]");
  if (block_size > std::min(h, w)) throw InputError("dropblock block_size exceeds map extent");
  if (p == 0.0) return 0.0;
  // coverage count: number of valid anchors whose block contains the cell
  std::vector<int> cov(static_cast<size_t>(h) * w);
  auto span = [block_size](int i, int extent) {
    int lo = std::max(0, i - block_size + 1);
    int hi = std::min(extent - block_size, i);
    return hi - lo + 1;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) cov[y * w + x] = span(y, h) * span(x, w);
  auto expected_drop = [&](double g) {
    double acc = 0.0;
    for (int c : cov) acc += 1.0 - std::pow(1.0 - g, c);
    return acc / static_cast<double>(h * w);
  };
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 80; ++it) {
    double mid = 0.5 * (lo + hi);
    if (expected_drop(mid) < p)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<double> dropblock_spatial_mask(int h, int w, double p, int block_size, bool rescale,
                                           Rng& rng) {
  double gamma = dropblock_seed_gamma(h, w, block_size, p);
  std::vector<double> mask(static_cast<size_t>(h) * w, 1.0);
  int gh = h - block_size + 1, gw = w - block_size + 1;
  for (int ay = 0; ay < gh; ++ay) {
    for (int ax = 0; ax < gw; ++ax) {
      if (!rng.bernoulli(gamma)) continue;
      for (int y = ay; y < ay + block_size; ++y)
        for (int x = ax; x < ax + block_size; ++x) mask[y * w + x] = 0.0;
    }
  }
  int64_t surviving = 0;
  for (double m : mask) surviving += m > 0.0 ? 1 : 0;
  if (surviving == 0) {
    std::fill(mask.begin(), mask.end(), 1.0);
    return mask;
  }
  if (rescale) {
    double scale = static_cast<double>(h) * w / static_cast<double>(surviving);
    for (double& m : mask)
      if (m > 0.0) m = scale;
  }
  return mask;
}

Var dropblock(Tape& t, Var x, double p, int block_size, bool rescale, bool training, Rng& rng) {
  if (p < 0.0 || p > 1.0) throw ConfigError("dropblock p outside [0,1]");
  if (!training) return x;
  const Shape& s = t.shape(x);
  if (s.nd != 4) throw InputError("dropblock: expects [B,C,H,W]");
  int64_t b = s[0], c = s[1], h = s[2], w = s[3];
  if (block_size > std::min(h, w)) throw InputError("dropblock block_size exceeds map extent");
  if (p == 0.0) return x;
  // one block mask per channel plane, rescale per sample
  auto mask = std::make_shared<std::vector<double>>(s.numel());
  double gamma = dropblock_seed_gamma(static_cast<int>(h), static_cast<int>(w), block_size, p);
  int64_t gh = h - block_size + 1, gw = w - block_size + 1;
  for (int64_t i = 0; i < b; ++i) {
    double* sample = mask->data() + i * c * h * w;
    std::fill(sample, sample + c * h * w, 1.0);
    for (int64_t ch = 0; ch < c; ++ch) {
      double* plane = sample + ch * h * w;
      for (int64_t ay = 0; ay < gh; ++ay)
        for (int64_t ax = 0; ax < gw; ++ax) {
          if (!rng.bernoulli(gamma)) continue;
          for (int64_t y = ay; y < ay + block_size; ++y)
            for (int64_t xx = ax; xx < ax + block_size; ++xx) plane[y * w + xx] = 0.0;
        }
    }
    int64_t surviving = 0;
    for (int64_t k = 0; k < c * h * w; ++k) surviving += sample[k] > 0.0 ? 1 : 0;
    if (surviving == 0) {
      std::fill(sample, sample + c * h * w, 1.0);
      continue;
    }
    if (rescale) {
      double scale = static_cast<double>(c * h * w) / static_cast<double>(surviving);
      for (int64_t k = 0; k < c * h * w; ++k)
        if (sample[k] > 0.0) sample[k] = scale;
    }
  }
  return t.mul_mask(x, mask);
}

// ---------------------------------------------------------------------------
// feature dropout
// ---------------------------------------------------------------------------

std::vector<double> dropout_mask(int64_t n, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout p outside [0,1)");
  std::vector<double> mask(n, 0.0);
  double keep = 1.0 / (1.0 - p);
  for (int64_t i = 0; i < n; ++i)
    if (!rng.bernoulli(p)) mask[i] = keep;
  return mask;
}

Var feature_dropout(Tape& t, Var x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout p outside [0,1)");
  if (!training || p == 0.0) return x;
  const Shape s = t.shape(x);
  int64_t f = s.d[s.nd - 1];
  int64_t rows = s.numel() / f;
  auto mask = std::make_shared<std::vector<double>>(s.numel());
  for (int64_t r = 0; r < rows; ++r) {
    // a fully-dropped feature row would zero the embedding and break the
    // normalization downstream; redraw such rows
    for (;;) {
      std::vector<double> m = dropout_mask(f, p, rng);
      bool any = false;
      for (double v : m) any = any || v != 0.0;
      if (!any) continue;
      std::copy(m.begin(), m.end(), mask->begin() + r * f);
      break;
    }
  }
  return t.mul_mask(x, mask);
}

// ---------------------------------------------------------------------------
// data-level augmentation
// ---------------------------------------------------------------------------

void clip01(Image& img) {
  for (double& v : img) v = std::clamp(v, 0.0, 1.0);
}

void color_jitter(Image& img, int c, int h, int w, double strength, Rng& rng) {
  double fb = rng.uniform(1.0 - strength, 1.0 + strength);
  double fc = rng.uniform(1.0 - strength, 1.0 + strength);
  for (double& v : img) v *= fb;
  double mean = 0.0;
  for (double v : img) mean += v;
  mean /= static_cast<double>(img.size());
  for (double& v : img) v = (v - mean) * fc + mean;
  (void)c;
  (void)h;
  (void)w;
}

void to_grayscale(Image& img, int c, int h, int w) {
  if (c == 1) return;
  int64_t hw = static_cast<int64_t>(h) * w;
  for (int64_t p = 0; p < hw; ++p) {
    double acc = 0.0;
    for (int ch = 0; ch < c; ++ch) acc += img[ch * hw + p];
    acc /= c;
    for (int ch = 0; ch < c; ++ch) img[ch * hw + p] = acc;
  }
}

void gaussian_blur(Image& img, int c, int h, int w, double sigma) {
  int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;

  std::vector<double> tmp(img.size());
  int64_t hw = static_cast<int64_t>(h) * w;
  // horizontal pass, replicate borders (keeps flat regions exactly flat)
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int xx = std::clamp(x + i, 0, w - 1);
          acc += kernel[i + radius] * img[ch * hw + y * w + xx];
        }
        tmp[ch * hw + y * w + x] = acc;
      }
    }
  }
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int yy = std::clamp(y + i, 0, h - 1);
          acc += kernel[i + radius] * tmp[ch * hw + yy * w + x];
        }
        img[ch * hw + y * w + x] = acc;
      }
    }
  }
}

void hflip(Image& img, int c, int h, int w) {
  int64_t hw = static_cast<int64_t>(h) * w;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w / 2; ++x)
        std::swap(img[ch * hw + y * w + x], img[ch * hw + y * w + (w - 1 - x)]);
}

Image strong_augment(const Image& img, int c, int h, int w, const PerturbConfig& cfg, Rng& rng) {
  for (double v : img)
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("strong_augment: image values outside [0,1]");
  Image out = img;
  if (rng.bernoulli(cfg.jitter_p)) color_jitter(out, c, h, w, cfg.jitter_strength, rng);
  if (rng.bernoulli(cfg.grayscale_p)) to_grayscale(out, c, h, w);
  if (rng.bernoulli(cfg.blur_p))
    gaussian_blur(out, c, h, w, rng.uniform(cfg.blur_sigma_lo, cfg.blur_sigma_hi));
  if (rng.bernoulli(cfg.strong_hflip_p)) hflip(out, c, h, w);
  clip01(out);
  return out;
}

std::pair<Image, Image> strong_augment_pair(const Image& img, int c, int h, int w,
                                            const PerturbConfig& cfg, Rng& rng) {
  Image a = strong_augment(img, c, h, w, cfg, rng);
  Image b = strong_augment(img, c, h, w, cfg, rng);
  return {std::move(a), std::move(b)};
}

Image weak_augment(const Image& img, int c, int h, int w, const PerturbConfig& cfg, Rng& rng) {
  for (double v : img)
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("weak_augment: image values outside [0,1]");
  Image out = img;
  if (rng.bernoulli(cfg.weak_hflip_p)) hflip(out, c, h, w);
  clip01(out);
  return out;
}

}  // namespace vlp
