#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "partseg/archive.hpp"
#include "partseg/attncontrol.hpp"
#include "partseg/config.hpp"
#include "partseg/data.hpp"
#include "partseg/losses.hpp"
#include "partseg/metrics.hpp"
#include "partseg/model.hpp"

namespace partseg {

struct TrainConfig {
  double base_lr = 1e-4;
  int total_iters = 20000;
  int batch_size = 8;
  int warmup_iters = 200;
  double poly_power = 0.9;
  double grad_clip_norm = 0.01;
  int checkpoint_every = 1000;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
  std::string select_protocol = "oracle_obj";
  LossWeights weights;
  AttnControlConfig attn;

  void validate() const;
};

// typed views over the flat config
TrainConfig train_config_from(const RunConfig& rc);
ImageSpec image_spec_from(const RunConfig& rc);
SynthConfig synth_config_from(const RunConfig& rc);
AttnControlConfig attn_config_from(const RunConfig& rc);
LossWeights loss_weights_from(const RunConfig& rc);

// Linear warmup to base_lr, then polynomial decay to zero.
double lr_at(int step, const TrainConfig& cfg);

// Decoupled-weight-decay adaptive-moment optimizer (beta 0.9/0.999, eps 1e-8).
class AdamW {
 public:
  AdamW(std::vector<ad::Var> params, double weight_decay);

  void zero_grad();
  double clip_global_norm(double max_norm);  // returns the pre-clip norm
  void step(double lr);
  int steps_taken() const { return t_; }

  std::vector<std::pair<std::string, Tensor>> state(
      const std::vector<std::string>& param_names) const;
  void load_state(const Archive& a, const std::vector<std::string>& param_names);

 private:
  std::vector<ad::Var> params_;
  std::vector<Tensor> m_, v_;
  double wd_;
  int t_ = 0;
};

struct StepReport {
  double l_mask = 0.0, l_sep = 0.0, l_enh = 0.0, l_all = 0.0;
  double grad_norm = 0.0, lr = 0.0;
};

// One optimizer step: forward, targets, mask loss, attention losses from GT
// masks on the token grid, total loss, backward, clip, update.
StepReport train_step(Model& model, AdamW& opt, const std::vector<const Sample*>& batch,
                      const Taxonomy& train_tax, const TrainConfig& cfg, int step);

struct EvalOptions {
  std::string protocol = "oracle_obj";  // or "pred_all"
  bool include_background = false;
  bool attention_diagnostic = true;  // mean binarized-attention overlap fraction
  AttnControlConfig attn;
};

MetricReport evaluate(const Model& model, const std::vector<Sample>& split,
                      const Taxonomy& tax, const EvalOptions& opts);

// Metric accumulation with injected predictions (oracle self-tests).
MetricReport evaluate_predictions(const std::function<LabelGrid(const Sample&)>& predict,
                                  const std::vector<Sample>& split, const Taxonomy& tax,
                                  bool include_background, const std::string& protocol_name);

void checkpoint_save(const std::string& path, const Model& model, const AdamW* opt,
                     std::uint64_t step, const std::string& config_hash);

// Returns the archived step count. A config-hash mismatch throws unless
// allow_config_mismatch; then a warning goes to *warnings.
std::uint64_t checkpoint_load(const std::string& path, Model& model, AdamW* opt,
                              const std::string& expected_hash, bool allow_config_mismatch,
                              std::ostream* warnings);

struct TrainResult {
  int best_step = -1;
  double best_score = -1.0;
  MetricReport best_report;
  std::string best_path;
  std::string last_path;
};

// Runs the full loop on the seen-only training view, logging one JSON line
// per step, checkpointing and evaluating every checkpoint_every steps, and
// keeping the checkpoint with the best validation harmonic mIoU.
TrainResult train_loop(Model& model, const std::vector<Sample>& train_split,
                       const std::vector<Sample>& val_split, const Taxonomy& full_tax,
                       const TrainConfig& cfg, const std::string& out_dir,
                       const std::string& config_hash, std::ostream* progress);

struct AblationRow {
  std::string label;
  MetricReport report;
};

std::vector<AblationRow> ablation_gamma(const RunConfig& base, const std::vector<double>& gammas,
                                        const std::string& out_dir, std::ostream* progress);

// Fixed grid mirroring the weight ablation: lambda_obj/lambda_part in
// {0/0, 1/0, 0/1, 1/1} with attention losses on, plus 1/1 with them off.
std::vector<AblationRow> ablation_lambda(const RunConfig& base, const std::string& out_dir,
                                         std::ostream* progress);

std::string ablation_table_json(const std::vector<AblationRow>& rows, const std::string& sweep,
                                const std::string& config_hash);
std::string ablation_table_text(const std::vector<AblationRow>& rows, const std::string& sweep);

}  // namespace partseg
