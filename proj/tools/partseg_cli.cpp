#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "partseg/harness.hpp"

namespace fs = std::filesystem;
using namespace partseg;

namespace {

struct CommonOpts {
  std::vector<std::string> config_files;
  std::vector<std::string> sets;
  std::string out;
  std::string seed;      // overrides train.seed when given
  std::string protocol;  // overrides train.select_protocol when given
};

void add_common(CLI::App* sub, CommonOpts& c) {
  sub->add_option("--config", c.config_files, "config file(s), later ones win")
      ->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "override, key=value (repeatable)");
  sub->add_option("--out", c.out, "artifact directory (default $PARTSEG_OUT or ./out)");
  sub->add_option("--seed", c.seed, "shorthand for --set train.seed=...");
  sub->add_option("--protocol", c.protocol, "oracle_obj or pred_all");
}

RunConfig make_config(const CommonOpts& c) {
  RunConfig rc;
  for (const auto& f : c.config_files) rc.load_file(f);
  for (const auto& s : c.sets) rc.set_kv(s);
  if (!c.seed.empty()) rc.set("train.seed", c.seed);
  if (!c.protocol.empty()) rc.set("train.select_protocol", c.protocol);
  return rc;
}

std::string artifact_dir(const CommonOpts& c) {
  if (!c.out.empty()) return c.out;
  if (const char* env = std::getenv("PARTSEG_OUT"); env && *env) return env;
  return "out";
}

// The echo file round-trips through load_file; the hash line is a comment.
void write_config_echo(const std::string& dir, const RunConfig& rc) {
  fs::create_directories(dir);
  std::ofstream f(dir + "/config_echo.txt", std::ios::trunc);
  f << "# config hash: " << rc.hash() << "\n" << rc.echo();
}

std::string config_footer() {
  std::ostringstream os;
  os << "Config keys (set via --set key=value or a --config file):\n";
  for (const auto& [key, info] : RunConfig::registry()) {
    os << "  " << key << " = " << (info.default_value.empty() ? "\"\"" : info.default_value)
       << "\n      " << info.help << "\n";
  }
  return os.str();
}

struct LoadedData {
  Taxonomy tax;
  std::vector<Sample> train, val;
};

LoadedData load_data(const RunConfig& rc, bool need_train) {
  std::string root = rc.get("data.root");
  if (root.empty())
    throw ConfigError("data.root", "point this at a dataset root (see `synth generate`)");
  LoadedData d;
  d.tax = load_taxonomy(root + "/taxonomy.json");
  if (need_train) d.train = load_split(root + "/train", d.tax);
  d.val = load_split(root + "/val", d.tax);
  return d;
}

int run_taxonomy_validate(const std::string& input) {
  Taxonomy t = load_taxonomy(input);
  std::string round = taxonomy_to_json(t);
  Taxonomy t2 = taxonomy_from_json(round);
  bool ok = t2.n_pairs() == t.n_pairs();
  for (int i = 0; ok && i < t.n_pairs(); ++i)
    ok = t2.pairs()[static_cast<std::size_t>(i)].name == t.pairs()[static_cast<std::size_t>(i)].name;
  SplitIndices si = t.split_indices();
  std::cout << input << ": " << t.n_pairs() << " categories, " << t.n_objects() << " objects ("
            << si.seen_objects.size() << " seen, " << si.unseen_objects.size() << " unseen), "
            << t.n_parts() << " distinct parts\n";
  if (!ok) {
    std::cout << "round-trip FAILED\n";
    return 1;
  }
  std::cout << "round-trip ok\n";
  return 0;
}

int run_synth(const CommonOpts& c) {
  RunConfig rc = make_config(c);
  SynthConfig sc = synth_config_from(rc);
  std::string root = rc.get("data.root");
  if (root.empty()) root = artifact_dir(c) + "/dataset";
  generate_synthetic(sc, root);
  write_config_echo(root, rc);
  std::cout << "wrote " << sc.train_samples << " train / " << sc.val_samples
            << " val samples under " << root << "\n";
  return 0;
}

int run_train(const CommonOpts& c) {
  RunConfig rc = make_config(c);
  TrainConfig tc = train_config_from(rc);
  LoadedData data = load_data(rc, true);
  std::string out = artifact_dir(c);
  write_config_echo(out, rc);

  Model model(image_spec_from(rc), tc.seed);
  TrainResult res = train_loop(model, data.train, data.val, data.tax, tc, out, rc.hash(),
                               &std::cout);
  std::cout << "\nbest step " << res.best_step << " (" << res.best_path << ")\n"
            << metric_report_table(res.best_report);
  return 0;
}

int run_eval(const CommonOpts& c, const std::string& checkpoint, bool allow_mismatch) {
  RunConfig rc = make_config(c);
  LoadedData data = load_data(rc, false);
  std::string out = artifact_dir(c);
  write_config_echo(out, rc);

  Model model(image_spec_from(rc), rc.get_u64("train.seed"));
  checkpoint_load(checkpoint, model, nullptr, rc.hash(), allow_mismatch, &std::cerr);

  EvalOptions opts;
  opts.protocol = rc.get("train.select_protocol");
  opts.include_background = rc.get_bool("eval.include_background");
  opts.attn = attn_config_from(rc);
  MetricReport r = evaluate(model, data.val, data.tax, opts);
  r.config_hash = rc.hash();

  std::ofstream f(out + "/eval_report.json", std::ios::trunc);
  f << metric_report_json(r) << "\n";
  std::cout << metric_report_table(r);
  return 0;
}

int run_infer(const CommonOpts& c, const std::string& checkpoint, const std::string& image_path,
              const std::string& label_path, const std::string& output_path,
              bool allow_mismatch) {
  RunConfig rc = make_config(c);
  std::string protocol = rc.get("train.select_protocol");
  if (protocol == "oracle_obj" && label_path.empty())
    throw ConfigError("train.select_protocol",
                      "oracle_obj inference needs --label with the object annotation");

  LoadedData data = load_data(rc, false);
  Model model(image_spec_from(rc), rc.get_u64("train.seed"));
  checkpoint_load(checkpoint, model, nullptr, rc.hash(), allow_mismatch, &std::cerr);

  Tensor image = read_ppm(image_path);
  ad::NoGradGuard off;
  DecoderOutput out = model.forward(image, data.tax);
  LabelGrid pred;
  if (protocol == "oracle_obj") {
    SampleRef ref;
    ref.image_path = image_path;
    ref.label_path = label_path;
    ref.id = fs::path(image_path).stem().string();
    Sample s = load_sample(ref, data.tax);
    pred = oracle_obj_compose(out, s.object_label, data.tax);
  } else {
    pred = pred_all_decode(out);
  }
  std::string dest = output_path;
  if (dest.empty()) dest = artifact_dir(c) + "/pred.pgm";
  fs::create_directories(fs::path(dest).parent_path().empty() ? "." : fs::path(dest).parent_path());
  write_label_pgm(dest, pred);
  std::cout << "wrote " << dest << "\n";
  return 0;
}

// Quick numeric smoke test over the documented worked cases.
int run_losscheck() {
  struct Row {
    std::string name;
    double got, want, tol;
  };
  std::vector<Row> rows;
  auto push = [&](const std::string& n, double got, double want, double tol) {
    rows.push_back({n, got, want, tol});
  };

  AttnControlConfig attn;
  attn.gaussian_kernel = 1;

  ad::Var raw = ad::Var::constant(Tensor::from({1, 3}, {2, 4, 6}));
  Tensor norm = normalize_and_smooth(raw, attn).value();
  push("minmax[2,4,6] low", norm[0], 0.0, 1e-12);
  push("minmax[2,4,6] mid", norm[1], 0.5, 1e-12);
  push("minmax[2,4,6] high", norm[2], 1.0, 1e-12);

  Tensor bin = binarize(Tensor::from({1, 3}, {0.1, 0.35, 0.3}), 0.3);
  push("binarize boundary", bin[0] * 100 + bin[1] * 10 + bin[2], 11.0, 0.0);

  Tensor m = Tensor::from({2, 2}, {1, 1, 0, 1});
  push("sep identical masks", separation_loss_hard({m, m}, 2), 0.5, 0.0);

  Tensor a4 = Tensor::zeros({4, 4});
  Tensor b4 = Tensor::zeros({4, 4});
  for (int j = 0; j < 4; ++j) a4.at(0, j) = 1;  // row 0
  for (int j = 0; j < 4; ++j) b4.at(0, j) = (j >= 2) ? 1 : 0;
  for (int j = 0; j < 2; ++j) b4.at(1, j) = 1;  // overlap 2, union 6
  push("sep 2/6 union", separation_loss_hard({a4, b4}, 2), 1.0 / 6.0, 1e-15);

  std::vector<std::pair<ad::Var, Tensor>> peaks;
  Tensor full = Tensor::full({1, 1}, 1.0);
  peaks.emplace_back(ad::Var::constant(Tensor::from({1, 1}, {1.0})), full);
  peaks.emplace_back(ad::Var::constant(Tensor::from({1, 1}, {0.7})), full);
  peaks.emplace_back(ad::Var::constant(Tensor::from({1, 1}, {0.9})), full);
  push("enhancement weakest peak", enhancement_loss(peaks).value()[0], 0.3, 1e-15);

  ad::Var logits = ad::Var::constant(Tensor::zeros({2, 2}));
  push("bce at zero logits", bce_masked(logits, Tensor::from({2, 2}, {0, 1, 1, 0})).value()[0],
       std::log(2.0), 1e-12);

  LossWeights w;
  ad::Var total = total_loss(ad::Var::constant(Tensor::scalar(1.0)),
                             ad::Var::constant(Tensor::scalar(0.2)),
                             ad::Var::constant(Tensor::scalar(0.3)), w);
  push("total 1 + 0.1*0.2 + 0.1*0.3", total.value()[0], 1.05, 1e-12);

  push("harmonic mean", harmonic(50.02, 31.67), 38.79, 0.02);

  bool ok = true;
  for (const auto& r : rows) {
    bool pass = std::abs(r.got - r.want) <= r.tol;
    ok = ok && pass;
    std::printf("%-28s %12.8f  want %12.8f  [%s]\n", r.name.c_str(), r.got, r.want,
                pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

int run_ablate(const CommonOpts& c, const std::string& sweep, const std::string& values) {
  RunConfig rc = make_config(c);
  std::string out = artifact_dir(c);
  write_config_echo(out, rc);

  std::vector<AblationRow> rows;
  if (sweep == "gamma") {
    std::vector<double> gammas;
    std::stringstream ss(values);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (tok.empty()) continue;
      gammas.push_back(std::stod(tok));
    }
    rows = ablation_gamma(rc, gammas, out, &std::cout);
  } else {
    rows = ablation_lambda(rc, out, &std::cout);
  }
  std::ofstream f(out + "/ablation_" + sweep + ".json", std::ios::trunc);
  f << ablation_table_json(rows, sweep, rc.hash()) << "\n";
  std::cout << "\n" << ablation_table_text(rows, sweep);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"open-vocabulary object-part segmentation workbench"};
  app.require_subcommand(1);
  app.footer(config_footer());

  CommonOpts c;
  int rc_code = 0;

  auto* taxo = app.add_subcommand("taxonomy", "taxonomy file utilities");
  taxo->require_subcommand(1);
  auto* taxo_val = taxo->add_subcommand("validate", "load, round-trip and summarize a taxonomy");
  std::string taxo_input;
  taxo_val->add_option("file", taxo_input, "taxonomy json")->required()->check(CLI::ExistingFile);
  taxo_val->callback([&] { rc_code = run_taxonomy_validate(taxo_input); });

  auto* synth = app.add_subcommand("synth", "synthetic dataset tools");
  synth->require_subcommand(1);
  auto* synth_gen = synth->add_subcommand("generate", "write a synthetic dataset to data.root");
  add_common(synth_gen, c);
  synth_gen->callback([&] { rc_code = run_synth(c); });

  auto* train = app.add_subcommand("train", "train on data.root, checkpointing to --out");
  add_common(train, c);
  train->callback([&] { rc_code = run_train(c); });

  std::string ckpt, image_path, label_path, output_path;
  bool allow_mismatch = false;

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the val split");
  add_common(eval_cmd, c);
  eval_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_flag("--allow-config-mismatch", allow_mismatch,
                     "load even if the checkpoint was written under another config");
  eval_cmd->callback([&] { rc_code = run_eval(c, ckpt, allow_mismatch); });

  auto* infer = app.add_subcommand("infer", "predict a label map for one image");
  add_common(infer, c);
  infer->add_option("--checkpoint", ckpt, "checkpoint file")->required()
      ->check(CLI::ExistingFile);
  infer->add_option("--image", image_path, "input image (binary 8-bit PPM)")->required()
      ->check(CLI::ExistingFile);
  infer->add_option("--label", label_path, "object annotation, required for oracle_obj");
  infer->add_option("--output", output_path, "output label map path (16-bit PGM)");
  infer->add_flag("--allow-config-mismatch", allow_mismatch,
                  "load even if the checkpoint was written under another config");
  infer->callback(
      [&] { rc_code = run_infer(c, ckpt, image_path, label_path, output_path, allow_mismatch); });

  auto* losscheck = app.add_subcommand("losscheck", "print the worked loss/metric examples");
  losscheck->callback([&] { rc_code = run_losscheck(); });

  auto* ablate = app.add_subcommand("ablate", "train small sweeps and tabulate them");
  ablate->require_subcommand(1);
  std::string gamma_values = "0.1,0.2,0.3,0.4,0.5";
  auto* ab_gamma = ablate->add_subcommand("gamma", "sweep the binarization threshold");
  add_common(ab_gamma, c);
  ab_gamma->add_option("--values", gamma_values, "comma-separated thresholds");
  ab_gamma->callback([&] { rc_code = run_ablate(c, "gamma", gamma_values); });
  auto* ab_lambda = ablate->add_subcommand("lambda", "sweep the mask-group loss weights");
  add_common(ab_lambda, c);
  ab_lambda->callback([&] { rc_code = run_ablate(c, "lambda", ""); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.key << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc_code;
}
