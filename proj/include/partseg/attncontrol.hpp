#pragma once

#include <utility>
#include <vector>

#include "partseg/autodiff.hpp"
#include "partseg/model.hpp"
#include "partseg/tensor.hpp"

namespace partseg {

struct AttnControlConfig {
  double gamma = 0.3;
  double gaussian_sigma = 1.0;
  int gaussian_kernel = 3;
  double tau = 0.05;
  double epsilon = 1e-8;
  // key attention maps on the smoothed normalized scale; switchable to raw
  bool enhance_on_normalized = true;
  // |C| counts every taxonomy category, not just image-present ones
  bool count_all_categories = true;

  void validate() const;
};

Tensor gaussian_kernel(int k, double sigma);  // odd side, entries sum to 1

// Token indices (row-major) where the mask is on.
std::vector<int> token_mask_indices(const Tensor& mask);

// Pixel-resolution mask to token grid, strict majority per cell (ties -> 0).
Tensor downsample_mask_majority(const Tensor& mask, int token_h, int token_w);

// Mean over masked query tokens of the summed object+part attention rows.
ad::Var aggregate_mask_attention(const AttentionStack& stack, const Tensor& token_mask,
                                 int obj_idx, int part_idx);

// Min-max normalize, then Gaussian blur with edge-inclusive symmetric padding.
// Constant input maps to all zeros.
ad::Var normalize_and_smooth(const ad::Var& raw, const AttnControlConfig& cfg);

Tensor binarize(const Tensor& norm, double gamma);  // 1 where norm >= gamma

// (1/n_categories) * |overlapped pixels| / |union pixels|; 0 on empty union.
double separation_loss_hard(const std::vector<Tensor>& binaries, int n_categories);

// Differentiable surrogate. Memberships are a stretched, clamped logistic in
// (norm-gamma)/tau that saturates to exact 0/1 away from the threshold, and
// the per-pixel overlap mass is clamped to [0,1]; together these make the
// loss agree with the hard loss on grids whose values keep a 10*tau gap
// from gamma.
ad::Var separation_loss_soft(const std::vector<ad::Var>& norms, const AttnControlConfig& cfg,
                             int n_categories);

// 1 - min over categories of the masked max of its map.
ad::Var enhancement_loss(const std::vector<std::pair<ad::Var, Tensor>>& maps_and_masks);

}  // namespace partseg
