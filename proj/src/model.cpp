#include "partseg/model.hpp"

#include <Eigen/Core>

#include <cmath>

namespace partseg {

namespace {
constexpr std::uint64_t kEncoderSeedSalt = 0x9E3779B97F4A7C15ULL;
constexpr int kDecoderBlocks = 2;

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * scale;
  return t;
}
}  // namespace

void ImageSpec::validate() const {
  if (height <= 0 || width <= 0 || token_h <= 0 || token_w <= 0 || embed_dim <= 0)
    throw ConfigError("model", "image spec dimensions must be positive");
  if (height % token_h != 0 || width % token_w != 0)
    throw ConfigError("model", "image size must be a multiple of the token grid");
  if (patch_h() != patch_w())
    throw ConfigError("model", "patches must be square (height/token_h == width/token_w)");
}

Tensor TextEncoder::encode(const std::string& name) const {
  Rng rng(fnv1a64(name));
  Tensor v({dim_});
  double norm2 = 0.0;
  for (int i = 0; i < dim_; ++i) {
    v[i] = rng.normal();
    norm2 += v[i] * v[i];
  }
  if (norm2 == 0.0) {
    v[0] = 1.0;
    return v;
  }
  double inv = 1.0 / std::sqrt(norm2);
  for (int i = 0; i < dim_; ++i) v[i] *= inv;
  return v;
}

std::vector<Tensor> TextEncoder::encode_all(const std::vector<std::string>& names) const {
  if (names.empty()) throw Error("text encoder: empty name list");
  std::vector<Tensor> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(encode(n));
  return out;
}

std::uint64_t TextEncoder::checksum() const {
  Tensor probe = encode("frozen-text-probe");
  return fnv1a64(&dim_, sizeof(dim_), probe.checksum());
}

ImageEncoder::ImageEncoder(const ImageSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  int in = spec_.patch_h() * spec_.patch_w() * 3;
  Rng rng(seed ^ kEncoderSeedSalt);
  weight_ = random_tensor({spec_.embed_dim, in}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  bias_ = Tensor({spec_.embed_dim});
}

Tensor ImageEncoder::encode(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != spec_.height || image.dim(1) != spec_.width ||
      image.dim(2) != 3)
    throw ShapeMismatch("image encoder expects [" + std::to_string(spec_.height) + "," +
                        std::to_string(spec_.width) + ",3], got " + image.shape_str());
  int ph = spec_.patch_h(), pw = spec_.patch_w();
  int in = ph * pw * 3, t = spec_.n_tokens();
  Tensor patches({t, in});
  for (int ti = 0; ti < spec_.token_h; ++ti)
    for (int tj = 0; tj < spec_.token_w; ++tj) {
      double* row = patches.data() +
                    static_cast<std::size_t>(ti * spec_.token_w + tj) * in;
      int k = 0;
      for (int dy = 0; dy < ph; ++dy)
        for (int dx = 0; dx < pw; ++dx)
          for (int c = 0; c < 3; ++c)
            row[k++] = image.at(ti * ph + dy, tj * pw + dx, c);
    }
  using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Tensor out({t, spec_.embed_dim});
  Eigen::Map<EMat> o(out.data(), t, spec_.embed_dim);
  o = Eigen::Map<const EMat>(patches.data(), t, in) *
      Eigen::Map<const EMat>(weight_.data(), spec_.embed_dim, in).transpose();
  o.rowwise() += Eigen::Map<const Eigen::VectorXd>(bias_.data(), spec_.embed_dim).transpose();
  return out;
}

std::uint64_t ImageEncoder::checksum() const {
  return fnv1a64(bias_.data(), static_cast<std::size_t>(bias_.size()) * sizeof(double),
                 weight_.checksum());
}

ad::Var film_modulate(const ad::Var& feat, const ad::Var& text, const FilmHead& head) {
  if (text.value().rank() != 1)
    throw KindMismatch("film_modulate: conditioning input must be a vector, got " +
                       text.value().shape_str());
  ad::Var scale = ad::matvec(head.w_scale, text, head.b_scale);
  ad::Var shift = ad::matvec(head.w_shift, text, head.b_shift);
  if (feat.value().rank() == 1) {
    if (feat.value().dim(0) != scale.value().dim(0))
      throw ShapeMismatch("film_modulate: feature width " + feat.value().shape_str() +
                          " vs head output " + scale.value().shape_str());
    return ad::add(feat, ad::add(ad::mul(feat, scale), shift));
  }
  if (feat.value().rank() == 2)
    return ad::add(feat, ad::add_rowvec(ad::mul_rowvec(feat, scale), shift));
  throw KindMismatch("film_modulate: feature must be [D] or [T,D], got " +
                     feat.value().shape_str());
}

ad::Var compose_objpart(const ad::Var& obj, const ad::Var& part, const ProjHead& proj) {
  if (obj.value().rank() != part.value().rank())
    throw KindMismatch("compose_objpart: mixed kinds " + obj.value().shape_str() + " vs " +
                       part.value().shape_str());
  ad::Var cat = ad::concat(obj, part);
  if (cat.value().rank() == 1) return ad::matvec(proj.weight, cat, proj.bias);
  return ad::linear_rows(cat, proj.weight, proj.bias);
}

Model::Model(const ImageSpec& spec, std::uint64_t seed)
    : spec_(spec), text_enc_(spec.embed_dim), img_enc_(spec, seed) {
  spec_.validate();
  int d = spec_.embed_dim;
  Rng rng(seed);
  double film_scale = 0.15 / std::sqrt(static_cast<double>(d));
  auto make_film = [&]() {
    FilmHead h;
    h.w_scale = ad::Var::param(random_tensor({d, d}, rng, film_scale));
    h.b_scale = ad::Var::param(Tensor({d}));
    h.w_shift = ad::Var::param(random_tensor({d, d}, rng, film_scale));
    h.b_shift = ad::Var::param(Tensor({d}));
    return h;
  };
  film_obj_ = make_film();
  film_part_ = make_film();
  film_pair_ = make_film();

  // start near the average of the two halves so fused embeddings carry signal
  Tensor pw({d, 2 * d});
  for (int i = 0; i < d; ++i) {
    pw.at(i, i) = 0.5;
    pw.at(i, d + i) = 0.5;
  }
  for (std::int64_t i = 0; i < pw.size(); ++i)
    pw[i] += rng.normal() * (0.1 / std::sqrt(static_cast<double>(d)));
  proj_.weight = ad::Var::param(std::move(pw));
  proj_.bias = ad::Var::param(Tensor({d}));

  double attn_scale = 0.5 / std::sqrt(static_cast<double>(d));
  for (int b = 0; b < kDecoderBlocks; ++b) {
    DecoderBlock blk;
    blk.wq = ad::Var::param(random_tensor({d, d}, rng, attn_scale));
    blk.bq = ad::Var::param(Tensor({d}));
    blk.wk = ad::Var::param(random_tensor({d, d}, rng, attn_scale));
    blk.bk = ad::Var::param(Tensor({d}));
    blk.wv = ad::Var::param(random_tensor({d, d}, rng, attn_scale));
    blk.bv = ad::Var::param(Tensor({d}));
    blk.wo = ad::Var::param(random_tensor({d, d}, rng, attn_scale));
    blk.bo = ad::Var::param(Tensor({d}));
    blk.w1 = ad::Var::param(random_tensor({d, d}, rng, 1.0 / std::sqrt(static_cast<double>(d))));
    blk.b1 = ad::Var::param(Tensor({d}));
    blk.w2 = ad::Var::param(Tensor({d, d}));  // zero: blocks start as identity
    blk.b2 = ad::Var::param(Tensor({d}));
    blocks_.push_back(std::move(blk));
  }
  head_w_ = ad::Var::param(random_tensor({1, d}, rng, 1.0 / std::sqrt(static_cast<double>(d))));
  head_b_ = ad::Var::param(Tensor({1}));

  auto unit = [&]() {
    Tensor v = random_tensor({d}, rng, 1.0);
    double n2 = 0.0;
    for (int i = 0; i < d; ++i) n2 += v[i] * v[i];
    double inv = n2 > 0.0 ? 1.0 / std::sqrt(n2) : 0.0;
    for (int i = 0; i < d; ++i) v[i] *= inv;
    return v;
  };
  unc_pair_ = ad::Var::param(unit());
  unc_obj_ = ad::Var::param(unit());
}

EmbeddingBundle Model::build_bundle(const Tensor& image, const Taxonomy& tax) const {
  if (tax.n_pairs() == 0) throw Error("model: taxonomy has no categories");
  EmbeddingBundle b;
  b.n_pairs = tax.n_pairs();
  b.n_objects = tax.n_objects();
  b.n_parts = tax.n_parts();
  b.img_tokens = ad::Var::constant(img_enc_.encode(image));

  for (const auto& name : tax.objects())
    b.text_obj.push_back(ad::Var::constant(text_enc_.encode(name)));
  for (const auto& name : tax.parts())
    b.text_part.push_back(ad::Var::constant(text_enc_.encode(name)));
  for (int c = 0; c < tax.n_pairs(); ++c)
    b.text_pair.push_back(compose_objpart(b.text_obj[static_cast<std::size_t>(tax.pair_object(c))],
                                          b.text_part[static_cast<std::size_t>(tax.pair_part(c))],
                                          proj_));
  for (int o = 0; o < tax.n_objects(); ++o)
    b.img_obj.push_back(film_modulate(b.img_tokens, b.text_obj[static_cast<std::size_t>(o)], film_obj_));
  for (int p = 0; p < tax.n_parts(); ++p)
    b.img_part.push_back(film_modulate(b.img_tokens, b.text_part[static_cast<std::size_t>(p)], film_part_));
  for (int c = 0; c < tax.n_pairs(); ++c) {
    b.img_pair.push_back(compose_objpart(b.img_obj[static_cast<std::size_t>(tax.pair_object(c))],
                                         b.img_part[static_cast<std::size_t>(tax.pair_part(c))],
                                         proj_));
    b.grid_pair.push_back(film_modulate(b.img_pair.back(), b.text_pair[static_cast<std::size_t>(c)],
                                        film_pair_));
  }
  b.grid_unc_pair = film_modulate(b.img_tokens, unc_pair_, film_pair_);
  b.grid_unc_obj = film_modulate(b.img_tokens, unc_obj_, film_obj_);
  return b;
}

std::pair<ad::Var, ad::Var> Model::run_trunk(const ad::Var& grid) const {
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(spec_.embed_dim));
  ad::Var x = grid;
  ad::Var last_attn;
  for (const auto& blk : blocks_) {
    ad::Var q = ad::linear_rows(x, blk.wq, blk.bq);
    ad::Var k = ad::linear_rows(x, blk.wk, blk.bk);
    ad::Var v = ad::linear_rows(x, blk.wv, blk.bv);
    ad::Var scores = ad::mul_scalar(ad::matmul(q, ad::transpose(k)), inv_sqrt_d);
    ad::Var attn = ad::softmax_rows(scores);
    ad::Var mixed = ad::linear_rows(ad::matmul(attn, v), blk.wo, blk.bo);
    x = ad::add(x, mixed);
    ad::Var ff = ad::linear_rows(ad::tanh_(ad::linear_rows(x, blk.w1, blk.b1)), blk.w2, blk.b2);
    x = ad::add(x, ff);
    last_attn = attn;
  }
  return {x, last_attn};
}

ad::Var Model::token_logits_to_image(const ad::Var& tokens) const {
  ad::Var tok_logit = ad::linear_rows(tokens, head_w_, head_b_);  // [T,1]
  ad::Var grid = ad::reshape(tok_logit, {spec_.token_h, spec_.token_w});
  return ad::upsample_bilinear(grid, spec_.upsample_factor());
}

DecoderOutput Model::decode(const EmbeddingBundle& b) const {
  if (b.n_pairs <= 0 || !b.img_tokens.defined() || !b.grid_unc_pair.defined() ||
      !b.grid_unc_obj.defined() ||
      b.grid_pair.size() != static_cast<std::size_t>(b.n_pairs) ||
      b.img_obj.size() != static_cast<std::size_t>(b.n_objects) ||
      b.img_part.size() != static_cast<std::size_t>(b.n_parts))
    throw IncompleteBundle("decode: bundle is missing embeddings");
  for (const auto& v : b.grid_pair)
    if (!v.defined()) throw IncompleteBundle("decode: undefined pair grid");

  DecoderOutput out;
  out.n_pairs = b.n_pairs;
  out.n_objects = b.n_objects;
  out.n_parts = b.n_parts;
  out.attn.token_h = spec_.token_h;
  out.attn.token_w = spec_.token_w;
  out.logits.resize(static_cast<std::size_t>(out.n_channels()));

  for (int c = 0; c < b.n_pairs; ++c) {
    auto [tok, attn] = run_trunk(b.grid_pair[static_cast<std::size_t>(c)]);
    (void)attn;
    out.logits[static_cast<std::size_t>(out.pair_channel(c))] = token_logits_to_image(tok);
  }
  {
    auto [tok, attn] = run_trunk(b.grid_unc_pair);
    (void)attn;
    out.logits[static_cast<std::size_t>(out.pair_uncategory())] = token_logits_to_image(tok);
  }
  for (int o = 0; o < b.n_objects; ++o) {
    auto [tok, attn] = run_trunk(b.img_obj[static_cast<std::size_t>(o)]);
    out.attn.obj.push_back(attn);
    out.logits[static_cast<std::size_t>(out.obj_channel(o))] = token_logits_to_image(tok);
  }
  {
    auto [tok, attn] = run_trunk(b.grid_unc_obj);
    (void)attn;
    out.logits[static_cast<std::size_t>(out.obj_uncategory())] = token_logits_to_image(tok);
  }
  for (int p = 0; p < b.n_parts; ++p) {
    auto [tok, attn] = run_trunk(b.img_part[static_cast<std::size_t>(p)]);
    out.attn.part.push_back(attn);
    out.logits[static_cast<std::size_t>(out.part_channel(p))] = token_logits_to_image(tok);
  }
  return out;
}

DecoderOutput Model::forward(const Tensor& image, const Taxonomy& tax) const {
  return decode(build_bundle(image, tax));
}

std::vector<ad::Var> Model::trainable_params() const {
  std::vector<ad::Var> p;
  for (const FilmHead* h : {&film_obj_, &film_part_, &film_pair_}) {
    p.push_back(h->w_scale);
    p.push_back(h->b_scale);
    p.push_back(h->w_shift);
    p.push_back(h->b_shift);
  }
  p.push_back(proj_.weight);
  p.push_back(proj_.bias);
  for (const auto& blk : blocks_) {
    for (const ad::Var* v : {&blk.wq, &blk.bq, &blk.wk, &blk.bk, &blk.wv, &blk.bv,
                             &blk.wo, &blk.bo, &blk.w1, &blk.b1, &blk.w2, &blk.b2})
      p.push_back(*v);
  }
  p.push_back(head_w_);
  p.push_back(head_b_);
  p.push_back(unc_pair_);
  p.push_back(unc_obj_);
  return p;
}

std::vector<std::string> Model::param_names() const {
  std::vector<std::string> names;
  for (const char* h : {"film_obj", "film_part", "film_pair"})
    for (const char* f : {"w_scale", "b_scale", "w_shift", "b_shift"})
      names.push_back(std::string(h) + "." + f);
  names.push_back("proj.weight");
  names.push_back("proj.bias");
  for (std::size_t b = 0; b < blocks_.size(); ++b)
    for (const char* f : {"wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "w1", "b1", "w2", "b2"})
      names.push_back("decoder.block" + std::to_string(b) + "." + f);
  names.push_back("head.weight");
  names.push_back("head.bias");
  names.push_back("uncategory.pair");
  names.push_back("uncategory.object");
  return names;
}

std::uint64_t Model::frozen_checksum() const {
  std::uint64_t h = img_enc_.checksum();
  std::uint64_t t = text_enc_.checksum();
  return fnv1a64(&t, sizeof(t), h);
}

}  // namespace partseg
