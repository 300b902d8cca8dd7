#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "partseg/autodiff.hpp"
#include "partseg/taxonomy.hpp"
#include "partseg/tensor.hpp"

namespace partseg {

struct ImageSpec {
  int height = 64;
  int width = 64;
  int token_h = 16;
  int token_w = 16;
  int embed_dim = 8;

  void validate() const;
  int patch_h() const { return height / token_h; }
  int patch_w() const { return width / token_w; }
  int n_tokens() const { return token_h * token_w; }
  int upsample_factor() const { return patch_h(); }
};

// Frozen text encoder: a deterministic unit vector per category name,
// seeded from a hash of the name. No trainable state.
class TextEncoder {
 public:
  explicit TextEncoder(int dim) : dim_(dim) {}
  int dim() const { return dim_; }
  Tensor encode(const std::string& name) const;
  std::vector<Tensor> encode_all(const std::vector<std::string>& names) const;
  std::uint64_t checksum() const;

 private:
  int dim_;
};

// Frozen image encoder: linear patch embedding over non-overlapping patches.
class ImageEncoder {
 public:
  ImageEncoder(const ImageSpec& spec, std::uint64_t seed);
  const ImageSpec& spec() const { return spec_; }
  Tensor encode(const Tensor& image) const;  // [H,W,3] in [0,1] -> [T,D]
  std::uint64_t checksum() const;

 private:
  ImageSpec spec_;
  Tensor weight_;  // [D, patch_h*patch_w*3]
  Tensor bias_;    // [D]
};

// Predicts per-channel scale and shift from a conditioning vector.
struct FilmHead {
  ad::Var w_scale, b_scale, w_shift, b_shift;
};

// Fuses an object embedding and a part embedding into one of the same width.
struct ProjHead {
  ad::Var weight;  // [D, 2D]
  ad::Var bias;    // [D]
};

struct DecoderBlock {
  ad::Var wq, bq, wk, bk, wv, bv, wo, bo;  // attention
  ad::Var w1, b1, w2, b2;                  // feed-forward
};

// out = feat + (scale(text) * feat + shift(text)); feat may be [D] or [T,D]
ad::Var film_modulate(const ad::Var& feat, const ad::Var& text, const FilmHead& head);

// proj([obj | part]); both inputs must be the same kind ([D] or [T,D])
ad::Var compose_objpart(const ad::Var& obj, const ad::Var& part, const ProjHead& proj);

struct EmbeddingBundle {
  ad::Var img_tokens;                          // [T,D], frozen input
  std::vector<ad::Var> text_obj, text_part;    // [D] per object / part
  std::vector<ad::Var> text_pair;              // [D] fused per pair
  std::vector<ad::Var> img_obj, img_part;      // [T,D] conditioned grids
  std::vector<ad::Var> img_pair;               // [T,D] fused per pair
  std::vector<ad::Var> grid_pair;              // [T,D] final modulation per pair
  ad::Var grid_unc_pair, grid_unc_obj;         // [T,D] uncategory grids
  int n_pairs = 0, n_objects = 0, n_parts = 0;
};

struct AttentionStack {
  std::vector<ad::Var> obj;   // [T,T] per object
  std::vector<ad::Var> part;  // [T,T] per part
  int token_h = 0, token_w = 0;
};

// Channel layout: [pairs..., pair-uncategory, objects..., object-uncategory,
// parts...]. Parts carry no uncategory channel.
struct DecoderOutput {
  std::vector<ad::Var> logits;  // [H,W] each
  AttentionStack attn;
  int n_pairs = 0, n_objects = 0, n_parts = 0;

  int n_channels() const { return n_pairs + n_objects + n_parts + 2; }
  int pair_channel(int i) const { return i; }
  int pair_uncategory() const { return n_pairs; }
  int obj_channel(int i) const { return n_pairs + 1 + i; }
  int obj_uncategory() const { return n_pairs + 1 + n_objects; }
  int part_channel(int j) const { return n_pairs + 2 + n_objects + j; }
};

class Model {
 public:
  Model(const ImageSpec& spec, std::uint64_t seed);

  const ImageSpec& spec() const { return spec_; }
  const TextEncoder& text_encoder() const { return text_enc_; }
  const ImageEncoder& image_encoder() const { return img_enc_; }

  EmbeddingBundle build_bundle(const Tensor& image, const Taxonomy& tax) const;
  DecoderOutput decode(const EmbeddingBundle& bundle) const;
  DecoderOutput forward(const Tensor& image, const Taxonomy& tax) const;

  std::vector<ad::Var> trainable_params() const;  // stable order, matches param_names
  std::vector<std::string> param_names() const;
  std::uint64_t frozen_checksum() const;  // encoders only

 private:
  std::pair<ad::Var, ad::Var> run_trunk(const ad::Var& grid) const;  // tokens, last attention
  ad::Var token_logits_to_image(const ad::Var& tokens) const;

  ImageSpec spec_;
  TextEncoder text_enc_;
  ImageEncoder img_enc_;
  FilmHead film_obj_, film_part_, film_pair_;
  ProjHead proj_;
  std::vector<DecoderBlock> blocks_;
  ad::Var head_w_, head_b_;      // [1,D],[1]
  ad::Var unc_pair_, unc_obj_;   // [D] learned uncategory embeddings
};

}  // namespace partseg
