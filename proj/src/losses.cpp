#include "partseg/losses.hpp"

namespace partseg {

void LossWeights::validate() const {
  if (lambda_obj < 0.0) throw ConfigError("loss.lambda_obj", "loss weights must be nonnegative");
  if (lambda_part < 0.0) throw ConfigError("loss.lambda_part", "loss weights must be nonnegative");
  if (lambda_sep < 0.0) throw ConfigError("loss.lambda_sep", "loss weights must be nonnegative");
  if (lambda_enh < 0.0) throw ConfigError("loss.lambda_enh", "loss weights must be nonnegative");
}

SupervisionTargets derive_targets(const LabelGrid& label, const Taxonomy& tax) {
  int n_pairs = tax.n_pairs();
  SupervisionTargets t;
  t.objpart_masks.assign(static_cast<std::size_t>(n_pairs) + 1, Tensor({label.h, label.w}));
  t.obj_masks.assign(static_cast<std::size_t>(tax.n_objects()) + 1, Tensor({label.h, label.w}));
  t.part_masks.assign(static_cast<std::size_t>(tax.n_parts()), Tensor({label.h, label.w}));

  for (int i = 0; i < label.h; ++i)
    for (int j = 0; j < label.w; ++j) {
      std::int32_t val = label.at(i, j);
      if (val < 0 || val > n_pairs)
        throw LabelOutOfRange("label value " + std::to_string(val) + " outside {0.." +
                              std::to_string(n_pairs) + "} at (" + std::to_string(i) + "," +
                              std::to_string(j) + ")");
      if (val == 0) {
        t.objpart_masks.back().at(i, j) = 1.0;  // pair uncategory
        t.obj_masks.back().at(i, j) = 1.0;      // object uncategory
        continue;
      }
      int pair = val - 1;
      t.objpart_masks[static_cast<std::size_t>(pair)].at(i, j) = 1.0;
      t.obj_masks[static_cast<std::size_t>(tax.pair_object(pair))].at(i, j) = 1.0;
      t.part_masks[static_cast<std::size_t>(tax.pair_part(pair))].at(i, j) = 1.0;
    }
  return t;
}

ad::Var bce_masked(const ad::Var& logits, const Tensor& target) {
  return ad::bce_with_logits_mean(logits, target);
}

ad::Var mask_loss(const DecoderOutput& out, const SupervisionTargets& targets,
                  const LossWeights& w) {
  w.validate();
  if (targets.objpart_masks.size() != static_cast<std::size_t>(out.n_pairs) + 1 ||
      targets.obj_masks.size() != static_cast<std::size_t>(out.n_objects) + 1 ||
      targets.part_masks.size() != static_cast<std::size_t>(out.n_parts))
    throw ChannelMismatch("mask_loss: target channel counts do not match decoder output");

  ad::Var acc = bce_masked(out.logits[static_cast<std::size_t>(out.pair_channel(0))],
                           targets.objpart_masks[0]);
  for (int c = 1; c < out.n_pairs; ++c)
    acc = ad::add(acc, bce_masked(out.logits[static_cast<std::size_t>(out.pair_channel(c))],
                                  targets.objpart_masks[static_cast<std::size_t>(c)]));
  acc = ad::add(acc, bce_masked(out.logits[static_cast<std::size_t>(out.pair_uncategory())],
                                targets.objpart_masks[static_cast<std::size_t>(out.n_pairs)]));

  if (w.lambda_obj > 0.0) {
    ad::Var obj = bce_masked(out.logits[static_cast<std::size_t>(out.obj_channel(0))],
                             targets.obj_masks[0]);
    for (int o = 1; o < out.n_objects; ++o)
      obj = ad::add(obj, bce_masked(out.logits[static_cast<std::size_t>(out.obj_channel(o))],
                                    targets.obj_masks[static_cast<std::size_t>(o)]));
    obj = ad::add(obj, bce_masked(out.logits[static_cast<std::size_t>(out.obj_uncategory())],
                                  targets.obj_masks[static_cast<std::size_t>(out.n_objects)]));
    acc = ad::add(acc, ad::mul_scalar(obj, w.lambda_obj));
  }

  if (w.lambda_part > 0.0 && out.n_parts > 0) {
    ad::Var part = bce_masked(out.logits[static_cast<std::size_t>(out.part_channel(0))],
                              targets.part_masks[0]);
    for (int p = 1; p < out.n_parts; ++p)
      part = ad::add(part, bce_masked(out.logits[static_cast<std::size_t>(out.part_channel(p))],
                                      targets.part_masks[static_cast<std::size_t>(p)]));
    acc = ad::add(acc, ad::mul_scalar(part, w.lambda_part));
  }
  return acc;
}

ad::Var total_loss(const ad::Var& mask, const ad::Var& sep, const ad::Var& enh,
                   const LossWeights& w) {
  w.validate();
  ad::Var out = mask;
  if (w.lambda_sep > 0.0) out = ad::add(out, ad::mul_scalar(sep, w.lambda_sep));
  if (w.lambda_enh > 0.0) out = ad::add(out, ad::mul_scalar(enh, w.lambda_enh));
  return out;
}

}  // namespace partseg
