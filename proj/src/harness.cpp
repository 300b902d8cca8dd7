#include "partseg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace partseg {

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("train.base_lr", "must be positive");
  if (total_iters < 1) throw ConfigError("train.total_iters", "must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be at least 1");
  if (warmup_iters < 0) throw ConfigError("train.warmup_iters", "must be non-negative");
  if (warmup_iters >= total_iters)
    throw ConfigError("train.warmup_iters", "must be below train.total_iters");
  if (poly_power < 0.0) throw ConfigError("train.poly_power", "must be non-negative");
  if (!(grad_clip_norm > 0.0)) throw ConfigError("train.grad_clip_norm", "must be positive");
  if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every", "must be at least 1");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay", "must be non-negative");
  if (select_protocol != "oracle_obj" && select_protocol != "pred_all")
    throw ConfigError("train.select_protocol", "must be oracle_obj or pred_all");
  weights.validate();
  attn.validate();
}

TrainConfig train_config_from(const RunConfig& rc) {
  TrainConfig c;
  c.base_lr = rc.get_double("train.base_lr");
  c.total_iters = rc.get_int("train.total_iters");
  c.batch_size = rc.get_int("train.batch_size");
  c.warmup_iters = rc.get_int("train.warmup_iters");
  c.poly_power = rc.get_double("train.poly_power");
  c.grad_clip_norm = rc.get_double("train.grad_clip_norm");
  c.checkpoint_every = rc.get_int("train.checkpoint_every");
  c.weight_decay = rc.get_double("train.weight_decay");
  c.seed = rc.get_u64("train.seed");
  c.select_protocol = rc.get("train.select_protocol");
  c.weights = loss_weights_from(rc);
  c.attn = attn_config_from(rc);
  c.validate();
  return c;
}

ImageSpec image_spec_from(const RunConfig& rc) {
  ImageSpec s;
  s.height = s.width = rc.get_int("model.image_size");
  s.token_h = s.token_w = rc.get_int("model.token_grid");
  s.embed_dim = rc.get_int("model.embed_dim");
  s.validate();
  return s;
}

SynthConfig synth_config_from(const RunConfig& rc) {
  SynthConfig c;
  c.image_size = rc.get_int("synth.image_size");
  c.train_samples = rc.get_int("synth.train_samples");
  c.val_samples = rc.get_int("synth.val_samples");
  c.small_part_ratio = rc.get_double("synth.small_part_ratio");
  c.seed = rc.get_u64("synth.seed");
  c.objects = rc.get_list("synth.objects");
  c.unseen = rc.get_list("synth.unseen");
  c.parts = rc.get_list("synth.parts");
  c.validate();
  return c;
}

AttnControlConfig attn_config_from(const RunConfig& rc) {
  AttnControlConfig c;
  c.gamma = rc.get_double("attn.gamma");
  c.gaussian_sigma = rc.get_double("attn.sigma");
  c.gaussian_kernel = rc.get_int("attn.kernel");
  c.tau = rc.get_double("attn.tau");
  c.epsilon = rc.get_double("attn.epsilon");
  c.enhance_on_normalized = rc.get_bool("attn.enhance_on_normalized");
  c.count_all_categories = rc.get_bool("attn.count_all_categories");
  c.validate();
  return c;
}

LossWeights loss_weights_from(const RunConfig& rc) {
  LossWeights w;
  w.lambda_obj = rc.get_double("loss.lambda_obj");
  w.lambda_part = rc.get_double("loss.lambda_part");
  w.lambda_sep = rc.get_double("loss.lambda_sep");
  w.lambda_enh = rc.get_double("loss.lambda_enh");
  w.validate();
  return w;
}

double lr_at(int step, const TrainConfig& cfg) {
  step = std::clamp(step, 0, cfg.total_iters);
  if (cfg.warmup_iters > 0 && step < cfg.warmup_iters)
    return cfg.base_lr * static_cast<double>(step) / cfg.warmup_iters;
  double frac = static_cast<double>(step - cfg.warmup_iters) /
                static_cast<double>(cfg.total_iters - cfg.warmup_iters);
  return cfg.base_lr * std::pow(1.0 - frac, cfg.poly_power);
}

// ---- optimizer ----

AdamW::AdamW(std::vector<ad::Var> params, double weight_decay)
    : params_(std::move(params)), wd_(weight_decay) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p.value().shape()));
    v_.push_back(Tensor::zeros(p.value().shape()));
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double AdamW::clip_global_norm(double max_norm) {
  double sq = 0.0;
  for (const auto& p : params_) {
    const Tensor& g = p.node()->grad;
    if (!g.defined()) continue;
    for (double x : g.vec()) sq += x * x;
  }
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    double scale = max_norm / norm;
    for (auto& p : params_) {
      Tensor& g = p.node()->grad;
      if (!g.defined()) continue;
      for (double& x : g.vec()) x *= scale;
    }
  }
  return norm;
}

void AdamW::step(double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ++t_;
  double bc1 = 1.0 - std::pow(kBeta1, t_);
  double bc2 = 1.0 - std::pow(kBeta2, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& y = params_[i].mutable_value();
    const Tensor& gt = params_[i].node()->grad;
    const double* g = gt.defined() ? gt.data() : nullptr;
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::int64_t k = 0; k < y.size(); ++k) {
      double gk = g ? g[k] : 0.0;
      m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * gk;
      v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * gk * gk;
      double mhat = m[k] / bc1;
      double vhat = v[k] / bc2;
      y[k] -= lr * (mhat / (std::sqrt(vhat) + kEps) + wd_ * y[k]);
    }
  }
}

std::vector<std::pair<std::string, Tensor>> AdamW::state(
    const std::vector<std::string>& param_names) const {
  if (param_names.size() != params_.size())
    throw ShapeMismatch("optimizer state: name count does not match parameter count");
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(2 * params_.size() + 1);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back("opt.m." + param_names[i], m_[i]);
    out.emplace_back("opt.v." + param_names[i], v_[i]);
  }
  out.emplace_back("opt.t", Tensor::scalar(static_cast<double>(t_)));
  return out;
}

void AdamW::load_state(const Archive& a, const std::vector<std::string>& param_names) {
  if (param_names.size() != params_.size())
    throw ShapeMismatch("optimizer state: name count does not match parameter count");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& m = a.get("opt.m." + param_names[i]);
    const Tensor& v = a.get("opt.v." + param_names[i]);
    if (!m.same_shape(params_[i].value()) || !v.same_shape(params_[i].value()))
      throw ShapeMismatch("optimizer state shape mismatch for " + param_names[i]);
    m_[i] = m;
    v_[i] = v;
  }
  t_ = static_cast<int>(std::llround(a.get("opt.t")[0]));
}

// ---- train step ----

namespace {

std::vector<char> present_pairs(const LabelGrid& label, int n_pairs) {
  std::vector<char> present(static_cast<std::size_t>(n_pairs), 0);
  for (int v : label.v)
    if (v > 0) present[static_cast<std::size_t>(v - 1)] = 1;
  return present;
}

Tensor pair_pixel_mask(const LabelGrid& label, int pair_idx) {
  Tensor mask = Tensor::zeros({label.h, label.w});
  for (std::int64_t i = 0; i < mask.size(); ++i)
    if (label.v[static_cast<std::size_t>(i)] == pair_idx + 1) mask[i] = 1.0;
  return mask;
}

// Attention maps for the pairs present in the label whose token-grid masks
// survive majority downsampling. Returns (pair index, token mask, normalized
// map, raw map) tuples.
struct PairAttnMap {
  int pair_idx = 0;
  Tensor token_mask;
  ad::Var norm;
  ad::Var raw;
};

std::vector<PairAttnMap> collect_pair_attention(const DecoderOutput& out, const LabelGrid& label,
                                                const Taxonomy& tax,
                                                const AttnControlConfig& attn) {
  std::vector<PairAttnMap> maps;
  auto present = present_pairs(label, tax.n_pairs());
  for (int c = 0; c < tax.n_pairs(); ++c) {
    if (!present[static_cast<std::size_t>(c)]) continue;
    Tensor mask = pair_pixel_mask(label, c);
    Tensor tok = downsample_mask_majority(mask, out.attn.token_h, out.attn.token_w);
    if (token_mask_indices(tok).empty()) continue;  // too small to vote in any cell
    PairAttnMap m;
    m.pair_idx = c;
    m.token_mask = std::move(tok);
    m.raw = aggregate_mask_attention(out.attn, m.token_mask, tax.pair_object(c),
                                     tax.pair_part(c));
    m.norm = normalize_and_smooth(m.raw, attn);
    maps.push_back(std::move(m));
  }
  return maps;
}

ad::Var mean_of(std::vector<ad::Var> terms, int denom) {
  if (terms.empty()) return ad::Var::constant(Tensor::scalar(0.0));
  ad::Var s = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) s = ad::add(s, terms[i]);
  return ad::mul_scalar(s, 1.0 / denom);
}

}  // namespace

StepReport train_step(Model& model, AdamW& opt, const std::vector<const Sample*>& batch,
                      const Taxonomy& train_tax, const TrainConfig& cfg, int step) {
  if (batch.empty()) throw EmptySplit("train_step got an empty batch");
  const bool need_sep = cfg.weights.lambda_sep > 0.0;
  const bool need_enh = cfg.weights.lambda_enh > 0.0;

  std::vector<ad::Var> mask_terms, sep_terms, enh_terms;
  for (const Sample* s : batch) {
    DecoderOutput out = model.forward(s->image, train_tax);
    SupervisionTargets targets = derive_targets(s->label, train_tax);
    mask_terms.push_back(mask_loss(out, targets, cfg.weights));

    if (!need_sep && !need_enh) continue;
    auto maps = collect_pair_attention(out, s->label, train_tax, cfg.attn);
    if (maps.empty()) continue;
    if (need_sep) {
      std::vector<ad::Var> norms;
      norms.reserve(maps.size());
      for (auto& m : maps) norms.push_back(m.norm);
      int n_categories =
          cfg.attn.count_all_categories ? train_tax.n_pairs() : static_cast<int>(norms.size());
      sep_terms.push_back(separation_loss_soft(norms, cfg.attn, n_categories));
    }
    if (need_enh) {
      std::vector<std::pair<ad::Var, Tensor>> keyed;
      keyed.reserve(maps.size());
      for (auto& m : maps)
        keyed.emplace_back(cfg.attn.enhance_on_normalized ? m.norm : m.raw, m.token_mask);
      enh_terms.push_back(enhancement_loss(keyed));
    }
  }

  int denom = static_cast<int>(batch.size());
  ad::Var l_mask = mean_of(std::move(mask_terms), denom);
  ad::Var l_sep = mean_of(std::move(sep_terms), denom);
  ad::Var l_enh = mean_of(std::move(enh_terms), denom);
  ad::Var l_all = total_loss(l_mask, l_sep, l_enh, cfg.weights);

  StepReport rep;
  rep.l_mask = l_mask.value()[0];
  rep.l_sep = l_sep.value()[0];
  rep.l_enh = l_enh.value()[0];
  rep.l_all = l_all.value()[0];
  rep.lr = lr_at(step, cfg);
  if (!std::isfinite(rep.l_all)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << step << " (mask " << rep.l_mask << ", sep " << rep.l_sep
        << ", enh " << rep.l_enh << ")";
    throw NonFiniteLoss(msg.str());
  }

  opt.zero_grad();
  ad::backward(l_all);
  rep.grad_norm = opt.clip_global_norm(cfg.grad_clip_norm);
  if (!std::isfinite(rep.grad_norm)) {
    std::ostringstream msg;
    msg << "non-finite gradient norm at step " << step;
    throw NonFiniteLoss(msg.str());
  }
  opt.step(rep.lr);
  return rep;
}

// ---- evaluation ----

namespace {

MetricReport eval_core(const std::vector<Sample>& split, const Taxonomy& tax,
                       bool include_background, const std::string& protocol,
                       const std::function<LabelGrid(const Sample&)>& predict,
                       const std::function<std::optional<double>(const Sample&)>& diag) {
  if (split.empty()) throw EmptySplit("evaluation split is empty");
  int n_classes = tax.n_pairs() + 1;
  int d = default_boundary_d(split.front().label.h, split.front().label.w);
  ConfusionAccumulator conf(n_classes);
  BoundaryAccumulator bnd(n_classes, d);
  double overlap_sum = 0.0;
  int overlap_images = 0;

  for (const Sample& s : split) {
    LabelGrid pred = predict(s);
    conf.accumulate(pred, s.label);
    bnd.accumulate(pred, s.label);
    if (diag) {
      if (auto frac = diag(s)) {
        overlap_sum += *frac;
        ++overlap_images;
      }
    }
  }

  SplitIndices si = tax.split_indices();
  std::vector<int> seen_classes, unseen_classes;
  if (include_background) seen_classes.push_back(0);
  for (int p : si.seen_pairs) seen_classes.push_back(p + 1);
  for (int p : si.unseen_pairs) unseen_classes.push_back(p + 1);

  auto safe = [](auto&& fn) {
    try {
      return fn();
    } catch (const NoDefinedClasses&) {
      return 0.0;
    }
  };

  MetricReport r;
  r.protocol = protocol;
  r.n_images = static_cast<int>(split.size());
  r.include_background = include_background;
  r.seen_miou = safe([&] { return miou(conf, seen_classes); });
  r.unseen_miou = safe([&] { return miou(conf, unseen_classes); });
  r.harmonic_miou = harmonic(r.seen_miou, r.unseen_miou);
  r.seen_boundary = safe([&] { return bnd.mean_over(seen_classes); });
  r.unseen_boundary = safe([&] { return bnd.mean_over(unseen_classes); });
  r.harmonic_boundary = harmonic(r.seen_boundary, r.unseen_boundary);
  r.seen_recall = safe([&] { return recall(conf, seen_classes); });
  r.unseen_recall = safe([&] { return recall(conf, unseen_classes); });
  r.harmonic_recall = harmonic(r.seen_recall, r.unseen_recall);
  for (int k : seen_classes)
    if (conf.defined(k)) ++r.n_seen_defined;
  for (int k : unseen_classes)
    if (conf.defined(k)) ++r.n_unseen_defined;
  for (int k = 0; k < n_classes; ++k) {
    if (conf.defined(k)) r.per_class_iou[k] = conf.iou(k);
    if (conf.gt_count(k) > 0)
      r.per_class_recall[k] =
          static_cast<double>(conf.tp(k)) / static_cast<double>(conf.gt_count(k));
  }
  if (overlap_images > 0) {
    r.has_overlap_diag = true;
    r.overlap_fraction = overlap_sum / overlap_images;
  }
  return r;
}

}  // namespace

MetricReport evaluate(const Model& model, const std::vector<Sample>& split,
                      const Taxonomy& tax, const EvalOptions& opts) {
  if (opts.protocol != "oracle_obj" && opts.protocol != "pred_all")
    throw ConfigError("train.select_protocol", "must be oracle_obj or pred_all");
  opts.attn.validate();

  auto predict = [&](const Sample& s) {
    ad::NoGradGuard off;
    DecoderOutput out = model.forward(s.image, tax);
    return opts.protocol == "oracle_obj" ? oracle_obj_compose(out, s.object_label, tax)
                                         : pred_all_decode(out);
  };
  std::function<std::optional<double>(const Sample&)> diag;
  if (opts.attention_diagnostic) {
    diag = [&](const Sample& s) -> std::optional<double> {
      ad::NoGradGuard off;
      DecoderOutput out = model.forward(s.image, tax);
      auto maps = collect_pair_attention(out, s.label, tax, opts.attn);
      if (maps.empty()) return std::nullopt;
      std::vector<Tensor> bins;
      bins.reserve(maps.size());
      for (auto& m : maps) bins.push_back(binarize(m.norm.value(), opts.attn.gamma));
      return overlap_fraction(bins);
    };
  }
  return eval_core(split, tax, opts.include_background, opts.protocol, predict, diag);
}

MetricReport evaluate_predictions(const std::function<LabelGrid(const Sample&)>& predict,
                                  const std::vector<Sample>& split, const Taxonomy& tax,
                                  bool include_background, const std::string& protocol_name) {
  return eval_core(split, tax, include_background, protocol_name, predict, nullptr);
}

// ---- checkpoints ----

void checkpoint_save(const std::string& path, const Model& model, const AdamW* opt,
                     std::uint64_t step, const std::string& config_hash) {
  auto names = model.param_names();
  auto params = model.trainable_params();
  std::vector<std::pair<std::string, Tensor>> arrays;
  arrays.reserve(names.size() + (opt ? 2 * names.size() + 1 : 0));
  for (std::size_t i = 0; i < names.size(); ++i)
    arrays.emplace_back(names[i], params[i].value());
  if (opt) {
    auto st = opt->state(names);
    arrays.insert(arrays.end(), st.begin(), st.end());
  }
  save_archive(path, arrays, step, config_hash);
}

std::uint64_t checkpoint_load(const std::string& path, Model& model, AdamW* opt,
                              const std::string& expected_hash, bool allow_config_mismatch,
                              std::ostream* warnings) {
  Archive a = load_archive(path);
  if (!expected_hash.empty() && a.config_hash != expected_hash) {
    if (!allow_config_mismatch)
      throw ConfigError("checkpoint",
                        "config hash " + a.config_hash + " in " + path +
                            " does not match the current config " + expected_hash +
                            "; pass the explicit override to load anyway");
    if (warnings)
      *warnings << "warning: loading checkpoint with config hash " << a.config_hash
                << " into a run configured as " << expected_hash << "\n";
  }
  auto names = model.param_names();
  auto params = model.trainable_params();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const Tensor& stored = a.get(names[i]);
    if (!stored.same_shape(params[i].value()))
      throw ShapeMismatch("checkpoint array " + names[i] + " has shape " + stored.shape_str() +
                          ", model expects " + params[i].value().shape_str());
    params[i].mutable_value() = stored;
  }
  if (opt && a.has("opt.t")) opt->load_state(a, names);
  return a.step;
}

// ---- training loop ----

namespace {

Sample remap_to_train(const Sample& s, const std::vector<int>& remap, const Taxonomy& train_tax) {
  Sample out;
  out.id = s.id;
  out.image = s.image;
  out.label = s.label;
  out.object_label = s.label;
  for (std::size_t i = 0; i < out.label.v.size(); ++i) {
    int v = s.label.v[i];
    if (v == 0) {
      out.label.v[i] = 0;
      out.object_label.v[i] = 0;
      continue;
    }
    int m = remap[static_cast<std::size_t>(v - 1)];
    if (m < 0)
      throw LabelOutOfRange("train sample " + s.id + " contains a pair outside the seen split");
    out.label.v[i] = m + 1;
    out.object_label.v[i] = train_tax.pair_object(m) + 1;
  }
  return out;
}

std::string step_checkpoint_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%06d.ckpt", step);
  return buf;
}

}  // namespace

TrainResult train_loop(Model& model, const std::vector<Sample>& train_split,
                       const std::vector<Sample>& val_split, const Taxonomy& full_tax,
                       const TrainConfig& cfg, const std::string& out_dir,
                       const std::string& config_hash, std::ostream* progress) {
  cfg.validate();
  if (train_split.empty()) throw EmptySplit("train split is empty");
  if (val_split.empty()) throw EmptySplit("val split is empty");
  Taxonomy train_tax = seen_subtaxonomy(full_tax);
  if (train_tax.n_pairs() == 0)
    throw EmptyCategoryList("no seen categories left to train on");

  fs::create_directories(out_dir);
  std::ofstream log(out_dir + "/train_log.jsonl", std::ios::trunc);
  if (!log) throw MissingFile("cannot open " + out_dir + "/train_log.jsonl for writing");

  auto remap = pair_remap(full_tax, train_tax);
  std::vector<Sample> train;
  train.reserve(train_split.size());
  for (const Sample& s : train_split) train.push_back(remap_to_train(s, remap, train_tax));

  AdamW opt(model.trainable_params(), cfg.weight_decay);
  std::uint64_t frozen_before = model.frozen_checksum();

  Rng order_rng(cfg.seed ^ 0x5DEECE66DULL);
  std::vector<int> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::size_t cursor = order.size();  // forces a shuffle before the first batch

  EvalOptions eopts;
  eopts.protocol = cfg.select_protocol;
  eopts.include_background = false;
  eopts.attention_diagnostic = true;
  eopts.attn = cfg.attn;

  TrainResult res;
  for (int step = 0; step < cfg.total_iters; ++step) {
    std::vector<const Sample*> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(&train[static_cast<std::size_t>(order[cursor++])]);
    }

    StepReport rep = train_step(model, opt, batch, train_tax, cfg, step);
    ordered_json j;
    j["step"] = step;
    j["lr"] = rep.lr;
    j["L_mask"] = rep.l_mask;
    j["L_sep"] = rep.l_sep;
    j["L_enh"] = rep.l_enh;
    j["L_all"] = rep.l_all;
    j["grad_norm"] = rep.grad_norm;
    log << j.dump() << "\n";

    int done = step + 1;
    if (done % cfg.checkpoint_every != 0 && done != cfg.total_iters) continue;

    std::string path = out_dir + "/" + step_checkpoint_name(done);
    checkpoint_save(path, model, &opt, static_cast<std::uint64_t>(done), config_hash);
    MetricReport r = evaluate(model, val_split, full_tax, eopts);
    r.config_hash = config_hash;
    if (progress)
      *progress << "step " << done << "  L_all " << rep.l_all << "  val harmonic "
                << r.harmonic_miou << " (seen " << r.seen_miou << ", unseen " << r.unseen_miou
                << ")\n";
    res.last_path = path;
    if (r.harmonic_miou > res.best_score) {
      res.best_score = r.harmonic_miou;
      res.best_step = done;
      res.best_report = r;
      res.best_path = path;
    }
  }
  log.flush();

  if (model.frozen_checksum() != frozen_before)
    throw Error("frozen encoder state changed during training");

  if (!res.best_path.empty()) {
    std::string best_copy = out_dir + "/best.ckpt";
    fs::copy_file(res.best_path, best_copy, fs::copy_options::overwrite_existing);
    res.best_path = best_copy;
    std::ofstream rep(out_dir + "/best_report.json", std::ios::trunc);
    rep << metric_report_json(res.best_report) << "\n";
  }
  return res;
}

// ---- ablations ----

namespace {

struct AblationData {
  Taxonomy tax;
  std::vector<Sample> train, val;
};

AblationData load_ablation_data(const RunConfig& rc) {
  std::string root = rc.get("data.root");
  if (root.empty())
    throw ConfigError("data.root", "ablations need a dataset; generate one first");
  AblationData d;
  d.tax = load_taxonomy(root + "/taxonomy.json");
  d.train = load_split(root + "/train", d.tax);
  d.val = load_split(root + "/val", d.tax);
  return d;
}

AblationRow run_ablation_row(const RunConfig& rc, const AblationData& data,
                             const std::string& label, const std::string& run_dir,
                             std::ostream* progress) {
  TrainConfig tc = train_config_from(rc);
  Model model(image_spec_from(rc), tc.seed);
  if (progress) *progress << "[" << label << "]\n";
  TrainResult res = train_loop(model, data.train, data.val, data.tax, tc, run_dir, rc.hash(),
                               progress);
  AblationRow row;
  row.label = label;
  row.report = res.best_report;
  return row;
}

std::string format_gamma(double g) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", g);
  return buf;
}

}  // namespace

std::vector<AblationRow> ablation_gamma(const RunConfig& base, const std::vector<double>& gammas,
                                        const std::string& out_dir, std::ostream* progress) {
  std::vector<double> unique;
  for (double g : gammas) {
    if (std::find(unique.begin(), unique.end(), g) != unique.end()) {
      if (progress) *progress << "warning: duplicate gamma " << format_gamma(g) << " skipped\n";
      continue;
    }
    unique.push_back(g);
  }
  if (unique.empty()) throw ConfigError("attn.gamma", "no gamma values to sweep");

  AblationData data = load_ablation_data(base);
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < unique.size(); ++i) {
    RunConfig rc = base;
    rc.set("attn.gamma", format_gamma(unique[i]));
    std::string label = "gamma=" + format_gamma(unique[i]);
    rows.push_back(run_ablation_row(rc, data, label,
                                    out_dir + "/gamma_" + format_gamma(unique[i]), progress));
  }
  return rows;
}

std::vector<AblationRow> ablation_lambda(const RunConfig& base, const std::string& out_dir,
                                         std::ostream* progress) {
  struct Cell {
    const char* obj;
    const char* part;
    bool attn_on;
    const char* dir;
  };
  const Cell grid[] = {
      {"0", "0", true, "w00_on"},  {"1", "0", true, "w10_on"}, {"0", "1", true, "w01_on"},
      {"1", "1", false, "w11_off"}, {"1", "1", true, "w11_on"},
  };
  AblationData data = load_ablation_data(base);
  std::vector<AblationRow> rows;
  for (const Cell& c : grid) {
    RunConfig rc = base;
    rc.set("loss.lambda_obj", c.obj);
    rc.set("loss.lambda_part", c.part);
    if (!c.attn_on) {
      rc.set("loss.lambda_sep", "0");
      rc.set("loss.lambda_enh", "0");
    }
    std::string label = std::string("obj=") + c.obj + " part=" + c.part +
                        (c.attn_on ? " attn=on" : " attn=off");
    rows.push_back(run_ablation_row(rc, data, label, out_dir + "/" + c.dir, progress));
  }
  return rows;
}

std::string ablation_table_json(const std::vector<AblationRow>& rows, const std::string& sweep,
                                const std::string& config_hash) {
  ordered_json j;
  j["sweep"] = sweep;
  j["config_hash"] = config_hash;
  j["rows"] = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json row;
    row["label"] = r.label;
    row["seen_miou"] = r.report.seen_miou;
    row["unseen_miou"] = r.report.unseen_miou;
    row["harmonic_miou"] = r.report.harmonic_miou;
    row["seen_boundary"] = r.report.seen_boundary;
    row["unseen_boundary"] = r.report.unseen_boundary;
    row["harmonic_boundary"] = r.report.harmonic_boundary;
    row["overlap_fraction"] = r.report.has_overlap_diag ? r.report.overlap_fraction : -1.0;
    j["rows"].push_back(row);
  }
  return j.dump(2);
}

std::string ablation_table_text(const std::vector<AblationRow>& rows, const std::string& sweep) {
  std::ostringstream os;
  std::size_t width = 12;
  for (const auto& r : rows) width = std::max(width, r.label.size() + 2);
  os << sweep << " sweep\n";
  os << std::string(width, ' ') << "    Seen  Unseen    Harm  Overlap\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%8.4f%8.4f%8.4f%9.4f", r.report.seen_miou,
                  r.report.unseen_miou, r.report.harmonic_miou,
                  r.report.has_overlap_diag ? r.report.overlap_fraction : -1.0);
    os << r.label << std::string(width - r.label.size(), ' ') << buf << "\n";
  }
  return os.str();
}

}  // namespace partseg
