#pragma once

#include <vector>

#include "partseg/autodiff.hpp"
#include "partseg/labelgrid.hpp"
#include "partseg/model.hpp"
#include "partseg/taxonomy.hpp"

namespace partseg {

struct LossWeights {
  double lambda_obj = 1.0;
  double lambda_part = 1.0;
  double lambda_sep = 0.1;
  double lambda_enh = 0.1;

  void validate() const;
};

// Binary supervision per channel group; uncategory channels sit last in the
// pair and object groups, the part group carries none.
struct SupervisionTargets {
  std::vector<Tensor> objpart_masks;  // n_pairs + 1
  std::vector<Tensor> obj_masks;      // n_objects + 1
  std::vector<Tensor> part_masks;     // n_parts
};

SupervisionTargets derive_targets(const LabelGrid& label, const Taxonomy& tax);

// Mean over pixels of the stabilized binary cross-entropy with logits.
ad::Var bce_masked(const ad::Var& logits, const Tensor& target);

ad::Var mask_loss(const DecoderOutput& out, const SupervisionTargets& targets,
                  const LossWeights& w);

ad::Var total_loss(const ad::Var& mask, const ad::Var& sep, const ad::Var& enh,
                   const LossWeights& w);

}  // namespace partseg
