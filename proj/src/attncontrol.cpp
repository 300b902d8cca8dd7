#include "partseg/attncontrol.hpp"

#include <cmath>

namespace partseg {

void AttnControlConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw ConfigError("attn.gamma", "attn.gamma must lie in (0,1)");
  if (!(gaussian_sigma > 0.0))
    throw ConfigError("attn.sigma", "attn.sigma must be positive");
  if (gaussian_kernel < 1 || gaussian_kernel % 2 == 0)
    throw ConfigError("attn.kernel", "attn.kernel must be a positive odd integer");
  if (!(tau > 0.0)) throw ConfigError("attn.tau", "attn.tau must be positive");
  if (!(epsilon > 0.0)) throw ConfigError("attn.epsilon", "attn.epsilon must be positive");
}

Tensor gaussian_kernel(int k, double sigma) {
  if (k < 1 || k % 2 == 0)
    throw ShapeMismatch("gaussian kernel side must be a positive odd integer");
  if (!(sigma > 0.0)) throw Error("gaussian sigma must be positive");
  Tensor w({k, k});
  int r = k / 2;
  double total = 0.0;
  for (int u = 0; u < k; ++u)
    for (int v = 0; v < k; ++v) {
      double du = u - r, dv = v - r;
      double val = std::exp(-(du * du + dv * dv) / (2.0 * sigma * sigma));
      w.at(u, v) = val;
      total += val;
    }
  for (std::int64_t i = 0; i < w.size(); ++i) w[i] /= total;
  return w;
}

std::vector<int> token_mask_indices(const Tensor& mask) {
  std::vector<int> idx;
  for (std::int64_t i = 0; i < mask.size(); ++i)
    if (mask[i] > 0.5) idx.push_back(static_cast<int>(i));
  return idx;
}

Tensor downsample_mask_majority(const Tensor& mask, int token_h, int token_w) {
  if (mask.rank() != 2)
    throw ShapeMismatch("downsample expects a rank-2 mask, got " + mask.shape_str());
  int h = mask.dim(0), w = mask.dim(1);
  if (token_h <= 0 || token_w <= 0 || h % token_h != 0 || w % token_w != 0)
    throw ShapeMismatch("mask " + mask.shape_str() + " not divisible by token grid " +
                        std::to_string(token_h) + "x" + std::to_string(token_w));
  int ch = h / token_h, cw = w / token_w;
  Tensor out({token_h, token_w});
  for (int ti = 0; ti < token_h; ++ti)
    for (int tj = 0; tj < token_w; ++tj) {
      int count = 0;
      for (int dy = 0; dy < ch; ++dy)
        for (int dx = 0; dx < cw; ++dx)
          if (mask.at(ti * ch + dy, tj * cw + dx) > 0.5) ++count;
      out.at(ti, tj) = 2 * count > ch * cw ? 1.0 : 0.0;
    }
  return out;
}

ad::Var aggregate_mask_attention(const AttentionStack& stack, const Tensor& token_mask,
                                 int obj_idx, int part_idx) {
  if (obj_idx < 0 || static_cast<std::size_t>(obj_idx) >= stack.obj.size() ||
      part_idx < 0 || static_cast<std::size_t>(part_idx) >= stack.part.size())
    throw Error("aggregate_mask_attention: channel index out of range");
  int t = stack.token_h * stack.token_w;
  if (token_mask.rank() != 2 || token_mask.dim(0) != stack.token_h ||
      token_mask.dim(1) != stack.token_w)
    throw ShapeMismatch("aggregate_mask_attention: mask " + token_mask.shape_str() +
                        " does not match token grid");
  const ad::Var& a_obj = stack.obj[static_cast<std::size_t>(obj_idx)];
  const ad::Var& a_part = stack.part[static_cast<std::size_t>(part_idx)];
  if (a_obj.value().dim(0) != t || a_part.value().dim(0) != t)
    throw ShapeMismatch("aggregate_mask_attention: attention is not token x token");
  std::vector<int> rows = token_mask_indices(token_mask);
  if (rows.empty())
    throw EmptyMask("aggregate_mask_attention: category mask selects no tokens");
  ad::Var summed = ad::add(a_obj, a_part);
  return ad::reshape(ad::mean_rows(summed, rows), {stack.token_h, stack.token_w});
}

ad::Var normalize_and_smooth(const ad::Var& raw, const AttnControlConfig& cfg) {
  cfg.validate();
  ad::Var norm = ad::minmax_normalize(raw);
  if (cfg.gaussian_kernel == 1) return norm;
  return ad::conv2d_symmetric(norm, gaussian_kernel(cfg.gaussian_kernel, cfg.gaussian_sigma));
}

Tensor binarize(const Tensor& norm, double gamma) {
  Tensor out(norm.shape());
  for (std::int64_t i = 0; i < norm.size(); ++i) out[i] = norm[i] >= gamma ? 1.0 : 0.0;
  return out;
}

double separation_loss_hard(const std::vector<Tensor>& binaries, int n_categories) {
  if (n_categories < 1) throw Error("separation_loss_hard: n_categories must be >= 1");
  if (binaries.empty()) return 0.0;
  for (const auto& b : binaries) require_same_shape(binaries.front(), b, "separation_loss_hard");
  std::int64_t overlap = 0, covered = 0;
  for (std::int64_t i = 0; i < binaries.front().size(); ++i) {
    int count = 0;
    for (const auto& b : binaries)
      if (b[i] > 0.5) ++count;
    if (count >= 1) ++covered;
    if (count > 1) ++overlap;
  }
  if (covered == 0) return 0.0;
  return static_cast<double>(overlap) / static_cast<double>(covered) / n_categories;
}

ad::Var separation_loss_soft(const std::vector<ad::Var>& norms, const AttnControlConfig& cfg,
                             int n_categories) {
  cfg.validate();
  if (n_categories < 1) throw Error("separation_loss_soft: n_categories must be >= 1");
  if (norms.empty()) return ad::Var::constant(Tensor::scalar(0.0));
  for (const auto& m : norms)
    require_same_shape(norms.front().value(), m.value(), "separation_loss_soft");

  // Stretched-and-clamped logistic membership. A plain logistic never quite
  // reaches 0 or 1 (sigma(10) leaves ~4.5e-5 per pixel), which accumulates
  // past the documented 1e-6 soft/hard agreement on gapped grids. Stretching
  // by kStretch and clamping makes the membership exactly binary once the
  // value sits ~9.2*tau or farther from gamma, while keeping the logistic
  // shape and gradient near the threshold.
  constexpr double kStretch = 1e-4;
  std::vector<ad::Var> soft;
  soft.reserve(norms.size());
  double inv_tau = 1.0 / cfg.tau;
  for (const auto& m : norms) {
    ad::Var s = ad::sigmoid(ad::mul_scalar(ad::add_scalar(m, -cfg.gamma), inv_tau));
    ad::Var stretched = ad::add_scalar(ad::mul_scalar(s, 1.0 + 2.0 * kStretch), -kStretch);
    ad::Var low_clamped = ad::relu(stretched);
    // upper clamp: 1 - relu(1 - x)
    ad::Var b = ad::add_scalar(
        ad::mul_scalar(ad::relu(ad::add_scalar(ad::mul_scalar(low_clamped, -1.0), 1.0)), -1.0),
        1.0);
    soft.push_back(b);
  }

  ad::Var memb_sum = soft.front();
  for (std::size_t i = 1; i < soft.size(); ++i) memb_sum = ad::add(memb_sum, soft[i]);
  // per-pixel overlap mass min(1, max(0, sum-1)) so the hard limit counts
  // each overlapped pixel exactly once
  ad::Var excess = ad::add_scalar(memb_sum, -1.0);
  ad::Var overlap_map = ad::sub(ad::relu(excess), ad::relu(ad::add_scalar(memb_sum, -2.0)));

  ad::Var miss_prod = ad::add_scalar(ad::mul_scalar(soft.front(), -1.0), 1.0);
  for (std::size_t i = 1; i < soft.size(); ++i)
    miss_prod = ad::mul(miss_prod, ad::add_scalar(ad::mul_scalar(soft[i], -1.0), 1.0));
  ad::Var union_map = ad::add_scalar(ad::mul_scalar(miss_prod, -1.0), 1.0);

  ad::Var ratio = ad::div(ad::sum(overlap_map), ad::add_scalar(ad::sum(union_map), cfg.epsilon));
  return ad::mul_scalar(ratio, 1.0 / n_categories);
}

ad::Var enhancement_loss(const std::vector<std::pair<ad::Var, Tensor>>& maps_and_masks) {
  if (maps_and_masks.empty())
    throw EmptyCategoryList("enhancement_loss: no categories supplied");
  std::vector<ad::Var> peaks;
  peaks.reserve(maps_and_masks.size());
  for (const auto& [map, mask] : maps_and_masks) peaks.push_back(ad::masked_max(map, mask));
  return ad::add_scalar(ad::mul_scalar(ad::min_scalars(peaks), -1.0), 1.0);
}

}  // namespace partseg
