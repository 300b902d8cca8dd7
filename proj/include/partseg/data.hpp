#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "partseg/labelgrid.hpp"
#include "partseg/model.hpp"
#include "partseg/taxonomy.hpp"
#include "partseg/tensor.hpp"

namespace partseg {

struct Sample {
  std::string id;
  Tensor image;            // [H,W,3] in [0,1]
  LabelGrid label;         // obj-part pair ids, 0 = background
  LabelGrid object_label;  // object ids, derived from label
};

struct SampleRef {
  std::string image_path;  // resolved absolute/relative path
  std::string label_path;
  std::string id;
  int row = 0;  // 1-based manifest row for error messages
};

// 8-bit binary PPM (P6), values quantized by round(v*255).
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

// Labels as 16-bit binary PGM (P5, maxval 65535, big-endian sample bytes).
void write_label_pgm(const std::string& path, const LabelGrid& label);
LabelGrid read_label_pgm(const std::string& path);

// One `image<TAB>label` row per sample; paths relative to the manifest dir.
std::vector<SampleRef> load_manifest(const std::string& manifest_path);

// Loads and validates one sample; derives object_label from the taxonomy.
Sample load_sample(const SampleRef& ref, const Taxonomy& tax);
std::vector<Sample> load_split(const std::string& split_dir, const Taxonomy& tax);

struct SynthConfig {
  int image_size = 64;
  int train_samples = 500;
  int val_samples = 100;
  double small_part_ratio = 0.05;  // dot area as fraction of object area
  std::uint64_t seed = 7;
  std::vector<std::string> objects = {"blobA", "blobB", "blobC"};
  std::vector<std::string> unseen = {"blobC"};
  std::vector<std::string> parts = {"cap", "body", "dot"};

  void validate() const;
};

Taxonomy synth_taxonomy(const SynthConfig& cfg);

// Writes <root>/taxonomy.json and <root>/{train,val}/{images,labels,manifest.tsv}.
// Train uses seen objects only; val cycles through all objects.
void generate_synthetic(const SynthConfig& cfg, const std::string& root);

// Argmax over pair channels plus the pair uncategory channel; uncategory wins
// -> 0; ties break toward the lowest channel index.
LabelGrid pred_all_decode(const DecoderOutput& out);

// Argmax restricted to the given object's pair channels inside its mask.
LabelGrid oracle_obj_restrict(const DecoderOutput& out, const Tensor& gt_object_mask,
                              int gt_object, const Taxonomy& tax);

// Applies oracle_obj_restrict per object present in object_label and unions
// the results (objects are disjoint regions).
LabelGrid oracle_obj_compose(const DecoderOutput& out, const LabelGrid& object_label,
                             const Taxonomy& tax);

}  // namespace partseg
