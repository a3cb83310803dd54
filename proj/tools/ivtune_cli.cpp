// Copyright 2026 The ivtune Authors
// SPDX-License-Identifier: Apache-2.0
//
// ivtune: dataset generation, training, evaluation and analyses.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ivtune/analysis.hpp"
#include "ivtune/checkpoint.hpp"
#include "ivtune/dataset.hpp"
#include "ivtune/error.hpp"
#include "ivtune/training.hpp"

namespace fs = std::filesystem;
using namespace ivtune;

namespace {

// Run variants accepted by `train --variant`: the three architectures plus
// two baselines on the standard architecture.
struct RunVariant {
  Variant arch;
  TrainPolicy policy;
};

RunVariant parse_run_variant(const std::string& s) {
  if (s == "fft") return {Variant::standard, TrainPolicy::full};
  if (s == "frozen") return {Variant::standard, TrainPolicy::head_only};
  return {parse_variant(s), TrainPolicy::prompt};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read '" + p.string() + "'");
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw FormatError("cannot create '" + p.string() + "': " + ec.message());
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string variant = "standard";
  std::string data;
};

KeyValues to_key_values(const RunConfig& rc) {
  KeyValues kv;
  write_model_config(rc.model, kv);
  kv["run_variant"] = rc.variant;
  kv["policy"] = to_string(parse_run_variant(rc.variant).policy);
  kv["data"] = rc.data;
  kv["epochs"] = std::to_string(rc.train.epochs);
  kv["batch_size"] = std::to_string(rc.train.batch_size);
  kv["max_steps"] = std::to_string(rc.train.max_steps);
  kv["optimizer"] = to_string(rc.train.optimizer.kind);
  kv["lr"] = format_double(rc.train.optimizer.lr);
  kv["weight_decay"] = format_double(rc.train.optimizer.weight_decay);
  kv["beta1"] = format_double(rc.train.optimizer.beta1);
  kv["beta2"] = format_double(rc.train.optimizer.beta2);
  kv["eps"] = format_double(rc.train.optimizer.eps);
  return kv;
}

void apply_key_values(const KeyValues& kv, RunConfig& rc) {
  static const char* const known[] = {"image_size", "patch_size", "depth", "width", "heads", "mlp_ratio",
                                      "num_classes", "d_alpha", "d_beta", "split_ratio_inv", "variant",
                                      "seed", "run_variant", "policy", "data", "epochs", "batch_size",
                                      "max_steps", "optimizer", "lr", "weight_decay", "beta1", "beta2", "eps"};
  for (const auto& [k, v] : kv)
    if (std::find(std::begin(known), std::end(known), k) == std::end(known))
      throw ConfigError("unknown config key '" + k + "'");
  rc.model = read_model_config(kv, rc.model);
  // run_variant wins; a bare architecture key selects the prompt policy.
  if (auto it = kv.find("run_variant"); it != kv.end()) rc.variant = it->second;
  else if (auto v = kv.find("variant"); v != kv.end()) rc.variant = v->second;
  if (auto it = kv.find("data"); it != kv.end()) rc.data = it->second;
  rc.train.epochs = kv_uint(kv, "epochs", rc.train.epochs);
  rc.train.batch_size = kv_uint(kv, "batch_size", rc.train.batch_size);
  rc.train.max_steps = kv_uint(kv, "max_steps", rc.train.max_steps);
  if (auto it = kv.find("optimizer"); it != kv.end()) rc.train.optimizer.kind = parse_optimizer(it->second);
  auto& o = rc.train.optimizer;
  o.lr = kv_double(kv, "lr", o.lr);
  o.weight_decay = kv_double(kv, "weight_decay", o.weight_decay);
  o.beta1 = kv_double(kv, "beta1", o.beta1);
  o.beta2 = kv_double(kv, "beta2", o.beta2);
  o.eps = kv_double(kv, "eps", o.eps);
}

// ---- gen-data ---------------------------------------------------------------

struct GenArgs {
  DatasetSpec spec;
  std::size_t n = 512;
  long long n_val = -1;
  std::string out;
};

int cmd_gen_data(const GenArgs& a) {
  DatasetSpec spec = a.spec;
  spec.n_train = a.n;
  spec.n_val = a.n_val < 0 ? a.n / 4 : static_cast<std::size_t>(a.n_val);
  if (a.n == 0) throw ConfigError("empty dataset");
  const Dataset d = generate_dataset(spec);
  write_dataset(a.out, d);
  std::cout << "wrote " << spec.n_train << " train + " << spec.n_val << " val samples to " << a.out << "\n";
  return 0;
}

// ---- train --------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string data;
  std::string variant;
  std::string out;
  std::vector<std::string> set;
  std::string sweep;
  bool quiet = false;
};

void run_training(RunConfig rc, const Dataset& data, const fs::path& out, bool quiet) {
  const RunVariant rv = parse_run_variant(rc.variant);
  rc.model.variant = rv.arch;
  make_dir(out);
  write_text(out / "config.txt", "# ivtune run config v1\n" + format_key_values(to_key_values(rc)));

  IvModel model(rc.model, rv.policy);
  auto report = [&](const EpochLog& e) {
    if (!quiet)
      std::cout << "epoch " << e.epoch << " " << e.split << " loss=" << e.metrics.loss
                << " acc=" << e.metrics.accuracy << " miou=" << e.metrics.miou << std::endl;
  };
  const TrainResult result = train(model, data, rc.train, report);
  write_metrics_csv(out / "metrics.csv", result.log);
  save_checkpoint(out / "checkpoint.ivtn", model, &result.optimizer);
  std::cout << "trained " << rc.variant << " for " << result.steps << " steps; outputs in " << out.string()
            << "\n";
}

int cmd_train(const TrainArgs& a) {
  RunConfig rc;
  if (!a.config.empty()) apply_key_values(parse_key_values(read_file(a.config)), rc);
  for (const auto& s : a.set) apply_key_values(parse_key_values(s), rc);
  if (!a.data.empty()) rc.data = a.data;
  if (!a.variant.empty()) rc.variant = a.variant;
  parse_run_variant(rc.variant);
  if (rc.data.empty()) throw ConfigError("no dataset given (--data or data= in the config)");

  const Dataset data = read_dataset(rc.data);
  // Geometry follows the dataset unless the config pins it.
  KeyValues pinned;
  if (!a.config.empty()) pinned = parse_key_values(read_file(a.config));
  for (const auto& s : a.set)
    for (const auto& [k, v] : parse_key_values(s)) pinned[k] = v;
  if (!pinned.contains("image_size")) rc.model.image_size = data.spec.image_size;
  if (!pinned.contains("patch_size")) rc.model.patch_size = data.spec.patch_size;
  if (!pinned.contains("num_classes")) rc.model.num_classes = data.spec.num_classes;

  if (a.sweep.empty()) {
    run_training(rc, data, a.out, a.quiet);
    return 0;
  }
  const auto eq = a.sweep.find('=');
  if (eq == std::string::npos) throw ConfigError("--sweep expects key=v1,v2,...");
  const std::string key = a.sweep.substr(0, eq);
  std::stringstream values(a.sweep.substr(eq + 1));
  std::string v;
  while (std::getline(values, v, ',')) {
    RunConfig point = rc;
    apply_key_values({{key, v}}, point);
    run_training(point, data, fs::path(a.out) / (key + "_" + v), a.quiet);
  }
  return 0;
}

// ---- evaluate -------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "val";
};

int cmd_evaluate(const EvalArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  const Dataset data = read_dataset(a.data);
  if (a.split != "train" && a.split != "val") throw ConfigError("--split must be train or val");
  if (ck.model.config().num_classes != data.spec.num_classes)
    throw ConfigError("checkpoint has " + std::to_string(ck.model.config().num_classes) + " classes, dataset has " +
                      std::to_string(data.spec.num_classes));
  const Metrics m = evaluate(ck.model, a.split == "train" ? data.train : data.val);
  std::cout << "split=" << a.split << " loss=" << format_double(m.loss) << " accuracy=" << format_double(m.accuracy)
            << " miou=" << format_double(m.miou) << "\n";
  return 0;
}

// ---- analyze --------------------------------------------------------------------

struct AnalyzeArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string preset = "toy";
  bool pca = false;
  bool spectrum = false;
  bool params = false;
  std::size_t k = 5;
  std::size_t bands = 16;
  std::size_t probe = 8;
  std::uint64_t operator_seed = 0;
};

int cmd_analyze(const AnalyzeArgs& a) {
  if (!a.pca && !a.spectrum && !a.params) throw ConfigError("choose at least one of --pca, --spectrum, --params");
  make_dir(a.out);
  std::optional<Checkpoint> ck;
  if (!a.checkpoint.empty()) ck.emplace(load_checkpoint(a.checkpoint));
  std::optional<Dataset> data;
  if (!a.data.empty()) data = read_dataset(a.data);

  if (a.pca) {
    if (!ck || !data) throw ConfigError("--pca needs --checkpoint and --data");
    const ModelConfig& mc = ck->model.config();
    if (mc.image_size != data->spec.image_size || mc.patch_size != data->spec.patch_size)
      throw ConfigError("checkpoint geometry does not match the dataset");
    const Split& src = data->val.size() > 0 ? data->val : data->train;
    const Split::Batch b = src.range(0, std::min(a.probe, src.size()));
    std::vector<Tensor> layers;
    ck->model.forward(b.vis, ck->model.has_infrared() ? b.ir : Tensor(), ops::Mode::eval, &layers);
    write_text(fs::path(a.out) / "pca.csv", pca_csv(pca_layer_report(layers, a.k)));
  }
  if (a.spectrum) {
    if (!data) throw ConfigError("--spectrum needs --data");
    const Split& s = data->train.size() > 0 ? data->train : data->val;
    std::string csv = "# ivtune spectrum v1\nsource,band_lo,band_hi,energy\n";
    csv += spectrum_csv(mean_radial_energy(s.ir, a.bands), "ir");
    csv += spectrum_csv(mean_radial_energy(s.vis, a.bands), "vis");
    for (auto kind : {SpectrumOperator::conv3x3, SpectrumOperator::linear_projection}) {
      const std::string name = kind == SpectrumOperator::conv3x3 ? "conv3x3" : "linear_projection";
      const auto shift = operator_spectrum_shift(
          s.ir, random_operator(kind, data->spec.patch_size, a.operator_seed), a.bands);
      csv += spectrum_csv(shift.after, "ir+" + name);
    }
    write_text(fs::path(a.out) / "spectrum.csv", csv);
  }
  if (a.params) {
    const ParamReport r = ck ? param_report(ck->model.config(), ck->model.policy()) : param_report(preset_config(a.preset));
    write_text(fs::path(a.out) / "params.csv", params_csv(r));
    std::cout << "trainable backbone-side ratio " << format_double(r.ratio) << "\n";
  }
  std::cout << "analysis written to " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ivtune: infrared-prompted tuning of a frozen ViT at toy scale"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate the synthetic infrared/visible dataset");
  g->add_option("--seed", gen.spec.seed, "Generator seed")->capture_default_str();
  g->add_option("--n", gen.n, "Training samples")->capture_default_str();
  g->add_option("--n-val", gen.n_val, "Validation samples (default n/4)");
  g->add_option("--size", gen.spec.image_size, "Image side in pixels")->capture_default_str();
  g->add_option("--patch", gen.spec.patch_size, "Patch size for labels")->capture_default_str();
  g->add_option("--classes", gen.spec.num_classes, "Number of classes K")->capture_default_str();
  g->add_option("--ambiguity", gen.spec.ambiguity, "Visible label ambiguity in [0,1]")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one variant and write checkpoint + metrics");
  t->add_option("--config", tr.config, "key=value run config file");
  t->add_option("--data", tr.data, "Dataset directory");
  t->add_option("--variant", tr.variant, "standard|vis_only|uni_fusion|fft|frozen");
  t->add_option("--set", tr.set, "Override one config key (key=value), repeatable");
  t->add_option("--sweep", tr.sweep, "Sweep one key, e.g. d_beta=4,8,16,32");
  t->add_flag("--quiet", tr.quiet, "No per-epoch output");
  t->add_option("--out", tr.out, "Output directory")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset split");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--split", ev.split, "train|val")->capture_default_str();

  AnalyzeArgs an;
  auto* a = app.add_subcommand("analyze", "PCA, radial spectrum and parameter reports");
  a->add_option("--checkpoint", an.checkpoint);
  a->add_option("--data", an.data);
  a->add_flag("--pca", an.pca, "Layer-wise explained variance (pca.csv)");
  a->add_flag("--spectrum", an.spectrum, "Radial band energy (spectrum.csv)");
  a->add_flag("--params", an.params, "Parameter counts (params.csv)");
  a->add_option("--preset", an.preset, "Geometry for --params without a checkpoint: toy|vit_l")->capture_default_str();
  a->add_option("--k", an.k, "Principal components per layer")->capture_default_str();
  a->add_option("--bands", an.bands, "Radial bands")->capture_default_str();
  a->add_option("--probe", an.probe, "Probe batch size for --pca")->capture_default_str();
  a->add_option("--operator-seed", an.operator_seed)->capture_default_str();
  a->add_option("--out", an.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::string msg = ex.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: usage: " << msg << "\n";
    return 2;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_evaluate(ev);
    if (*a) return cmd_analyze(an);
  } catch (const Error& ex) {
    std::cerr << "error: " << ex.kind() << ": " << ex.what() << "\n";
    return 1;
  } catch (const std::exception& ex) {
    std::cerr << "error: internal: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
