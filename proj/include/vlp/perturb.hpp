#pragma once

// Data-level augmentations (weak view for the contrastive branch, two strong
// views for the image-only branch) and feature-level perturbations (DropBlock
// on image feature maps, dropout on text features).

#include <utility>
#include <vector>

#include "vlp/common.hpp"
#include "vlp/tensor.hpp"

namespace vlp {

struct PerturbConfig {
  double dropblock_p = 0.5;
  int dropblock_size = 3;
  bool dropblock_rescale = true;  // rescale survivors so the expected sum is preserved
  double text_dropout_p = 0.75;

  // strong view ops, applied in this order
  double jitter_p = 1.0;
  double jitter_strength = 0.4;
  double grayscale_p = 0.2;
  double blur_p = 0.5;
  double blur_sigma_lo = 0.1;
  double blur_sigma_hi = 2.0;
  double strong_hflip_p = 0.5;

  // weak view ops (resize to the configured extent is a no-op at native size)
  double weak_hflip_p = 0.0;

  void validate() const;
};

// Probability for a seed cell such that the expected zeroed fraction equals p,
// given that every seed expands to a block_size x block_size square anchored
// inside the valid grid. Solved numerically from the exact per-cell coverage
// counts.
double dropblock_seed_gamma(int h, int w, int block_size, double p);

// Spatial mask for one [C,H,W] slice, shared across channels; surviving cells
// carry either 1 or total/surviving depending on `rescale`. All-dropped draws
// fall back to an identity mask so rescaling stays defined.
std::vector<double> dropblock_spatial_mask(int h, int w, double p, int block_size, bool rescale,
                                           Rng& rng);

// training=false is the exact identity
Var dropblock(Tape& t, Var x, double p, int block_size, bool rescale, bool training, Rng& rng);

std::vector<double> dropout_mask(int64_t n, double p, Rng& rng);
Var feature_dropout(Tape& t, Var x, double p, bool training, Rng& rng);

// ---- data-level image ops; images are [c,h,w] in [0,1] ----

using Image = std::vector<double>;

void color_jitter(Image& img, int c, int h, int w, double strength, Rng& rng);
void to_grayscale(Image& img, int c, int h, int w);
void gaussian_blur(Image& img, int c, int h, int w, double sigma);
void hflip(Image& img, int c, int h, int w);
void clip01(Image& img);

Image strong_augment(const Image& img, int c, int h, int w, const PerturbConfig& cfg, Rng& rng);
std::pair<Image, Image> strong_augment_pair(const Image& img, int c, int h, int w,
                                            const PerturbConfig& cfg, Rng& rng);
Image weak_augment(const Image& img, int c, int h, int w, const PerturbConfig& cfg, Rng& rng);

}  // namespace vlp
