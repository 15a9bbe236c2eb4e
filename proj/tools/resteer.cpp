// resteer: command-line driver for probe training, residual steering, SAE
// ablation and the probing diagnostics.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "resteer/dataset.hpp"
#include "resteer/diagnostics.hpp"
#include "resteer/error.hpp"
#include "resteer/io.hpp"
#include "resteer/labels.hpp"
#include "resteer/metrics.hpp"
#include "resteer/probes.hpp"
#include "resteer/sae.hpp"
#include "resteer/steering.hpp"
#include "resteer/synth.hpp"

namespace fs = std::filesystem;
using namespace resteer;

namespace {

using io::format_double;

struct ReportFlags {
  int bins = kDefaultBins;
  std::string scale = "both";
  bool length_normalize = false;
  std::string fallback = "unsteered";
};

void add_report_flags(CLI::App* cmd, ReportFlags& f) {
  cmd->add_option("--bins", f.bins, "Calibration bins")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--report-scale", f.scale, "Report values raw, x100 or both")
      ->capture_default_str()
      ->check(CLI::IsMember({"raw", "x100", "both"}));
  cmd->add_flag("--length-normalize", f.length_normalize, "Divide option log scores by token counts");
  cmd->add_option("--fallback", f.fallback, "Result when every steered probability clamps to zero")
      ->capture_default_str()
      ->check(CLI::IsMember({"unsteered", "uniform"}));
}

SteeringConfig steering_config(const ReportFlags& f, double gamma, int layer) {
  SteeringConfig cfg;
  cfg.gamma = gamma;
  cfg.layer_id = layer;
  cfg.fallback = parse_fallback(f.fallback);
  cfg.length_normalize = f.length_normalize;
  return cfg;
}

std::string report_row(const CalibrationReport& r) {
  return format_double(r.accuracy) + "," + format_double(r.ece) + "," + format_double(r.cwece) + "," +
         format_double(r.brier) + "," + format_double(r.nll);
}

fs::path layer_probe_dir(const fs::path& root, int layer) {
  const fs::path nested = root / ("layer_" + std::to_string(layer));
  return fs::exists(nested / "probe.json") ? nested : root;
}

std::vector<ActivationDataset> load_all(const std::vector<std::string>& dirs) {
  std::vector<ActivationDataset> out;
  for (const auto& d : dirs) out.push_back(load_dataset(d));
  return out;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  SynthConfig cfg;
  int layers = 1;
  int planted_layer = -1;
};

void cmd_synth(const SynthArgs& a) {
  if (a.layers <= 1) {
    save_task(gen_task(a.cfg), a.out);
    return;
  }
  const int planted = a.planted_layer < 0 ? a.layers / 2 : a.planted_layer;
  SynthTask task;
  const auto layers = gen_layered_task(a.cfg, a.layers, planted, &task);
  for (const auto& ds : layers) save_dataset(ds, fs::path(a.out) / ("layer_" + std::to_string(ds.layer_id)));
  save_task_json(task, fs::path(a.out) / "task.json");
}

struct TrainProbeArgs {
  std::string dataset;
  std::string out;
  std::uint64_t seed = 0;
  std::vector<double> split{0.6, 0.2, 0.2};
  std::vector<int> hidden = kDefaultProbeHidden;
  double dropout = 0.2;
  std::vector<double> grid_lr = ProbeGrid{}.learning_rates;
  std::vector<double> grid_wd = ProbeGrid{}.weight_decays;
  std::vector<double> grid_lambda_out = ProbeGrid{}.lambda_outs;
  int epochs = 100;
  int patience = 10;
  int batch_size = 256;
  bool length_normalize = false;
};

void cmd_train_probe(const TrainProbeArgs& a) {
  require(a.split.size() == 3, Errc::InvalidArgument, "--split needs three fractions");
  const auto ds = load_dataset(a.dataset);
  const auto splits = split_grouped(ds, {{a.split[0], a.split[1], a.split[2]}, a.seed});
  const fs::path out = a.out;
  save_dataset(splits.train, out / "splits" / "train");
  save_dataset(splits.val, out / "splits" / "val");
  save_dataset(splits.test, out / "splits" / "test");

  const Normalizer norm = fit_normalizer(splits.train);
  const RowMatrixXf x_train = norm.apply_rows(splits.train.activations);
  const RowMatrixXf x_val = norm.apply_rows(splits.val.activations);
  const Eigen::VectorXf y_train = residual_targets(splits.train, a.length_normalize);
  const Eigen::VectorXf y_val = residual_targets(splits.val, a.length_normalize);

  TrainConfig base;
  base.max_epochs = a.epochs;
  base.early_stop_patience = a.patience;
  base.batch_size = a.batch_size;
  const ProbeGrid grid{a.grid_lr, a.grid_wd, a.grid_lambda_out};
  const auto result =
      grid_search(ds.d_model, a.hidden, a.dropout, grid, base, x_train, y_train, x_val, y_val, a.seed);

  save_probe(out, result.probe, norm);
  save_normalizer(norm, out / "norm.json");
  io::write_text(out / "grid.csv", grid_table_csv(result.table));
  io::write_text(out / "history.csv", history_csv(result.history));
  std::printf("best cell %zu: lr=%s wd=%s lambda_out=%s val_r2=%s\n", result.best,
              format_double(result.config.learning_rate).c_str(), format_double(result.config.weight_decay).c_str(),
              format_double(result.config.lambda_out).c_str(), format_double(result.table[result.best].val_r2).c_str());
}

struct SteerArgs {
  std::string dataset;
  std::string probe;
  std::string out;
  double gamma = 1.0;
  ReportFlags report;
};

void cmd_steer(const SteerArgs& a) {
  const auto ds = load_dataset(a.dataset);
  const auto stored = load_probe(a.probe);
  const auto preds = steer_dataset(ds, stored.probe, stored.normalizer, steering_config(a.report, a.gamma, ds.layer_id));
  const auto base = report(base_eval_set(preds), a.report.bins);
  const auto steered = report(steered_eval_set(preds), a.report.bins);
  const ReportScale scale = parse_report_scale(a.report.scale);

  const fs::path out = a.out;
  io::ensure_directory(out);
  write_steered_jsonl(preds, out / "steered.jsonl");
  nlohmann::ordered_json doc;
  doc["gamma"] = a.gamma;
  doc["layer_id"] = ds.layer_id;
  doc["n_questions"] = ds.n_questions();
  doc["base"] = report_to_json(base, scale);
  doc["steered"] = report_to_json(steered, scale);
  io::write_json(out / "report.json", doc);
  write_reliability_csv(base, out / "reliability_base.csv");
  write_reliability_csv(steered, out / "reliability_steered.csv");
  std::printf("base acc=%.4f ece=%.4f | steered acc=%.4f ece=%.4f\n", base.accuracy, base.ece, steered.accuracy,
              steered.ece);
}

struct SweepArgs {
  std::vector<std::string> datasets;
  std::string probe;
  std::string out;
  std::vector<double> gammas = default_gamma_grid();
  std::vector<int> layers;
  ReportFlags report;
};

void cmd_sweep(const SweepArgs& a) {
  auto datasets = load_all(a.datasets);
  if (!a.layers.empty()) {
    std::erase_if(datasets, [&](const ActivationDataset& ds) {
      return std::find(a.layers.begin(), a.layers.end(), ds.layer_id) == a.layers.end();
    });
  }
  require(!datasets.empty(), Errc::EmptyInput, "no datasets left to sweep");

  std::string gamma_table = "layer,gamma,acc,ece,cwece,brier,nll\n";
  std::string layer_table = "layer,gamma,acc,ece,brier,base_acc,base_ece,base_brier\n";
  std::vector<LayerReport> best_reports;
  std::map<int, double> best_gamma;
  for (const auto& ds : datasets) {
    const auto stored = load_probe(layer_probe_dir(a.probe, ds.layer_id));
    const auto sweep = sweep_gamma(ds, stored.probe, stored.normalizer, a.gammas,
                                   steering_config(a.report, 0.0, ds.layer_id), a.report.bins);
    for (std::size_t g = 0; g < sweep.gammas.size(); ++g) {
      gamma_table += std::to_string(ds.layer_id) + "," + format_double(sweep.gammas[g]) + "," +
                     report_row(sweep.reports[g]) + "\n";
    }
    EvalSet base_ev;
    base_ev.probs = base_probabilities(ds, a.report.length_normalize);
    for (const auto& q : ds.questions) base_ev.correct.push_back(q.correct);
    const auto base = report(base_ev, a.report.bins);
    const auto& best = sweep.reports[sweep.best];
    layer_table += std::to_string(ds.layer_id) + "," + format_double(sweep.best_gamma) + "," +
                   format_double(best.accuracy) + "," + format_double(best.ece) + "," + format_double(best.brier) +
                   "," + format_double(base.accuracy) + "," + format_double(base.ece) + "," +
                   format_double(base.brier) + "\n";
    best_reports.push_back({ds.layer_id, best});
    best_gamma[ds.layer_id] = sweep.best_gamma;
  }
  const int layer = select_layer(best_reports);

  const fs::path out = a.out;
  io::ensure_directory(out);
  io::write_text(out / "gammas.csv", gamma_table);
  io::write_text(out / "layers.csv", layer_table);
  nlohmann::ordered_json sel;
  sel["layer_id"] = layer;
  sel["gamma"] = best_gamma[layer];
  sel["criterion"] = "min validation brier, then ece";
  io::write_json(out / "selection.json", sel);
  std::printf("selected layer %d gamma %s\n", layer, format_double(best_gamma[layer]).c_str());
}

struct SaeArgs {
  std::string dataset;
  std::string sae;
  std::string out;
  std::string task;
  std::string impacts;
  std::uint64_t seed = 0;
  int expansion = 4;
  double lambda = 1.0;
  int epochs = 30;
  double lr = 1e-3;
  int batch_size = 256;
  std::vector<long> features;
  double gamma = 1.0;
  double alpha_acc = 1.0;
  double alpha_cal = 1.0;
  ReportFlags report;
};

void cmd_sae_train(const SaeArgs& a) {
  const auto ds = load_dataset(a.dataset);
  const Normalizer norm = fit_normalizer(ds);
  TrainConfig cfg;
  cfg.learning_rate = a.lr;
  cfg.weight_decay = 0.0;
  cfg.batch_size = a.batch_size;
  cfg.max_epochs = a.epochs;
  cfg.seed = a.seed;
  auto result = train_sae(norm.apply_rows(ds.activations), a.expansion, a.lambda, cfg);
  result.model.normalizer = norm;
  save_sae(a.out, result.model);
  std::string history = "epoch,reconstruction,penalty\n";
  for (std::size_t e = 0; e < result.history.reconstruction.size(); ++e) {
    history += std::to_string(e) + "," + format_double(result.history.reconstruction[e]) + "," +
               format_double(result.history.penalty[e]) + "\n";
  }
  io::write_text(fs::path(a.out) / "history.csv", history);
}

fs::path task_file(const SaeArgs& a) {
  if (!a.task.empty()) return a.task;
  const fs::path own = fs::path(a.dataset) / "task.json";
  if (fs::exists(own)) return own;
  return fs::path(a.dataset).parent_path() / "task.json";
}

nlohmann::ordered_json summary_json(const QuantileSummary& s) {
  nlohmann::ordered_json doc;
  doc["mean"] = s.mean;
  doc["min"] = s.min;
  doc["q1"] = s.q1;
  doc["median"] = s.median;
  doc["q3"] = s.q3;
  doc["max"] = s.max;
  return doc;
}

void cmd_sae_ablate(const SaeArgs& a) {
  const auto ds = load_dataset(a.dataset);
  const auto model = load_sae(a.sae);
  const auto task = load_task(task_file(a));
  std::vector<Index> features(a.features.begin(), a.features.end());
  if (features.empty()) {
    for (Index j = 0; j < model.features(); ++j) features.push_back(j);
  }
  const Readout readout = [&](const Eigen::VectorXf& x) { return readout_score(task, x); };
  const auto sweep = ablation_sweep(model, ds, readout, features, a.report.bins);

  const fs::path out = a.out;
  io::ensure_directory(out);
  io::write_text(out / "impacts.csv", impacts_csv(sweep.impacts));
  std::vector<double> acc, ece;
  for (const auto& imp : sweep.impacts) {
    acc.push_back(imp.delta_acc);
    ece.push_back(imp.delta_ece);
  }
  nlohmann::ordered_json doc;
  doc["baseline_acc"] = sweep.baseline_acc;
  doc["baseline_ece"] = sweep.baseline_ece;
  doc["n_features"] = sweep.impacts.size();
  doc["delta_acc"] = summary_json(summarize(acc));
  doc["delta_ece"] = summary_json(summarize(ece));
  io::write_json(out / "summary.json", doc);
}

void cmd_sae_steer(const SaeArgs& a) {
  auto ds = load_dataset(a.dataset);
  const auto model = load_sae(a.sae);
  const auto task = load_task(task_file(a));
  const auto weights = steering_weights(read_impacts_csv(a.impacts), a.alpha_acc, a.alpha_cal);

  const auto score_all = [&](const ActivationDataset& d) {
    EvalSet ev;
    ev.probs.resize(d.n_questions(), d.n_options);
    for (Index q = 0; q < d.n_questions(); ++q) {
      std::vector<double> scores;
      for (Index j = 0; j < d.n_options; ++j) {
        scores.push_back(readout_score(task, d.activations.row(q * d.n_options + j).transpose()));
      }
      ev.probs.row(q) = softmax_scores(scores).transpose();
      ev.correct.push_back(d.questions[static_cast<std::size_t>(q)].correct);
    }
    return ev;
  };
  const auto base = report(score_all(ds), a.report.bins);
  for (Index r = 0; r < ds.n_rows(); ++r) {
    ds.activations.row(r) = apply_sae_steering(model, ds.activations.row(r).transpose(), weights, a.gamma).transpose();
  }
  const auto steered = report(score_all(ds), a.report.bins);

  const ReportScale scale = parse_report_scale(a.report.scale);
  const fs::path out = a.out;
  io::ensure_directory(out);
  nlohmann::ordered_json doc;
  doc["gamma"] = a.gamma;
  doc["n_features"] = weights.size();
  doc["base"] = report_to_json(base, scale);
  doc["steered"] = report_to_json(steered, scale);
  io::write_json(out / "report.json", doc);
  std::printf("base acc=%.4f ece=%.4f | sae-steered acc=%.4f ece=%.4f\n", base.accuracy, base.ece, steered.accuracy,
              steered.ece);
}

struct DiagnoseArgs {
  std::vector<std::string> datasets;
  std::string probe;
  std::string out;
  std::uint64_t seed = 0;
  int folds = 5;
  std::vector<int> hidden = kDefaultHeadHidden;
  int epochs = 100;
  std::vector<long> ks{1, 2, 5, 10, 20, 50, 100};
  double ridge_alpha = 1.0;
  double gamma = 1.0;
  double target = 0.8;
  ReportFlags report;
};

void cmd_diagnose_heads(const DiagnoseArgs& a) {
  const auto datasets = load_all(a.datasets);
  require(!datasets.empty(), Errc::EmptyInput, "no head datasets given");
  const auto hs = head_set_from_datasets(datasets);
  TrainConfig cfg;
  cfg.max_epochs = a.epochs;
  const auto scores = probe_heads(hs, residual_targets(datasets.front(), a.report.length_normalize), a.folds,
                                  a.hidden, cfg, a.seed);
  const fs::path out = a.out;
  io::ensure_directory(out);
  io::write_text(out / "heads.csv", heads_csv(scores));
  nlohmann::ordered_json doc;
  doc["n_heads"] = scores.size();
  doc["target"] = a.target;
  doc["heads_needed"] = cumulative_signal(scores, a.target);
  io::write_json(out / "summary.json", doc);
}

void cmd_diagnose_pca(const DiagnoseArgs& a) {
  require(a.datasets.size() == 1, Errc::InvalidArgument, "pca takes exactly one --dataset");
  const auto ds = load_dataset(a.datasets.front());
  const Normalizer norm = fit_normalizer(ds);
  const Eigen::MatrixXd x = norm.apply_rows(ds.activations).cast<double>();
  const Eigen::VectorXd y = residual_targets(ds, a.report.length_normalize).cast<double>();
  const Index k_cap = std::min<Index>(x.rows() - 1, x.cols());
  std::vector<Index> ks;
  for (long k : a.ks) {
    if (k >= 1 && k <= k_cap) ks.push_back(k);
  }
  require(!ks.empty(), Errc::InvalidArgument, "no usable k values");
  const auto curve = dimensionality_curve(x, y, ds.n_options, ks, a.ridge_alpha, a.folds, a.seed);
  io::ensure_directory(a.out);
  io::write_text(fs::path(a.out) / "dimcurve.csv", dimcurve_csv(curve));
}

void cmd_diagnose_layers(const DiagnoseArgs& a) {
  const auto datasets = load_all(a.datasets);
  std::vector<LayerProbe> probes;
  for (const auto& ds : datasets) {
    auto stored = load_probe(layer_probe_dir(a.probe, ds.layer_id));
    probes.push_back({std::move(stored.probe), std::move(stored.normalizer)});
  }
  const auto rows = layer_sweep_report(datasets, probes, a.gamma, a.report.bins);
  io::ensure_directory(a.out);
  io::write_text(fs::path(a.out) / "layers.csv", layers_csv(rows));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Residual-correctness probes, probability steering and SAE diagnostics"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic multiple-choice activation task");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--seed", synth.cfg.seed, "Generator seed")->capture_default_str();
  c_synth->add_option("--n-questions", synth.cfg.n_questions)->capture_default_str();
  c_synth->add_option("--n-options", synth.cfg.n_options)->capture_default_str();
  c_synth->add_option("--d-model", synth.cfg.d_model)->capture_default_str();
  c_synth->add_option("--signal-dims", synth.cfg.signal_dims)->capture_default_str();
  c_synth->add_option("--signal-scale", synth.cfg.signal_scale)->capture_default_str();
  c_synth->add_option("--noise-scale", synth.cfg.noise_scale)->capture_default_str();
  c_synth->add_option("--nuisance-scale", synth.cfg.nuisance_scale)->capture_default_str();
  c_synth->add_option("--score-noise", synth.cfg.score_noise)->capture_default_str();
  c_synth->add_option("--temperature", synth.cfg.readout_temperature)->capture_default_str();
  c_synth->add_option("--layers", synth.layers, "Number of layers to emit (layer_<l>/ subdirectories)")
      ->capture_default_str();
  c_synth->add_option("--planted-layer", synth.planted_layer, "Layer carrying the signal (default: middle)");

  TrainProbeArgs tp;
  auto* c_train = app.add_subcommand("train-probe", "Grid-search and train a residual-correctness probe");
  c_train->add_option("--dataset", tp.dataset, "ACTV1 dataset directory")->required();
  c_train->add_option("--out", tp.out, "Output directory")->required();
  c_train->add_option("--seed", tp.seed)->capture_default_str();
  c_train->add_option("--split", tp.split, "Train,val,test question fractions")->delimiter(',')->capture_default_str();
  c_train->add_option("--hidden", tp.hidden, "Hidden widths")->delimiter(',')->capture_default_str();
  c_train->add_option("--dropout", tp.dropout)->capture_default_str();
  c_train->add_option("--grid-lr", tp.grid_lr, "Learning rates")->delimiter(',')->capture_default_str();
  c_train->add_option("--grid-wd", tp.grid_wd, "Weight decays")->delimiter(',')->capture_default_str();
  c_train->add_option("--grid-lambda-out", tp.grid_lambda_out, "Output penalties")
      ->delimiter(',')
      ->capture_default_str();
  c_train->add_option("--epochs", tp.epochs)->capture_default_str();
  c_train->add_option("--patience", tp.patience)->capture_default_str();
  c_train->add_option("--batch-size", tp.batch_size)->capture_default_str();
  c_train->add_flag("--length-normalize", tp.length_normalize, "Divide option log scores by token counts");

  SteerArgs st;
  auto* c_steer = app.add_subcommand("steer", "Apply residual steering to a dataset");
  c_steer->add_option("--dataset", st.dataset)->required();
  c_steer->add_option("--probe", st.probe, "Directory holding probe.json")->required();
  c_steer->add_option("--out", st.out)->required();
  c_steer->add_option("--gamma", st.gamma)->capture_default_str();
  add_report_flags(c_steer, st.report);

  SweepArgs sw;
  auto* c_sweep = app.add_subcommand("sweep", "Select steering layer and gamma on validation data");
  c_sweep->add_option("--dataset", sw.datasets, "One validation dataset per layer")->required();
  c_sweep->add_option("--probe", sw.probe, "Probe directory (layer_<id>/ subdirectories for several layers)")
      ->required();
  c_sweep->add_option("--out", sw.out)->required();
  c_sweep->add_option("--gammas", sw.gammas)->delimiter(',')->capture_default_str();
  c_sweep->add_option("--layers", sw.layers, "Restrict to these layer ids")->delimiter(',');
  add_report_flags(c_sweep, sw.report);

  SaeArgs sae;
  auto* c_sae = app.add_subcommand("sae", "Sparse autoencoder training, ablation and steering");
  c_sae->require_subcommand(1);
  auto* c_sae_train = c_sae->add_subcommand("train", "Train an SAE on z-scored activations");
  c_sae_train->add_option("--dataset", sae.dataset)->required();
  c_sae_train->add_option("--out", sae.out)->required();
  c_sae_train->add_option("--seed", sae.seed)->capture_default_str();
  c_sae_train->add_option("--expansion", sae.expansion)->capture_default_str();
  c_sae_train->add_option("--sae-lambda", sae.lambda)->capture_default_str();
  c_sae_train->add_option("--epochs", sae.epochs)->capture_default_str();
  c_sae_train->add_option("--lr", sae.lr)->capture_default_str();
  c_sae_train->add_option("--batch-size", sae.batch_size)->capture_default_str();
  auto* c_sae_ablate = c_sae->add_subcommand("ablate", "Single-feature ablation against the synthetic readout");
  c_sae_ablate->add_option("--dataset", sae.dataset)->required();
  c_sae_ablate->add_option("--sae", sae.sae)->required();
  c_sae_ablate->add_option("--out", sae.out)->required();
  c_sae_ablate->add_option("--task", sae.task, "task.json (default: next to the dataset)");
  c_sae_ablate->add_option("--features", sae.features, "Feature indices (default: all)")->delimiter(',');
  c_sae_ablate->add_option("--bins", sae.report.bins)->capture_default_str();
  auto* c_sae_steer = c_sae->add_subcommand("steer", "Additive steering along beneficial SAE features");
  c_sae_steer->add_option("--dataset", sae.dataset)->required();
  c_sae_steer->add_option("--sae", sae.sae)->required();
  c_sae_steer->add_option("--impacts", sae.impacts, "impacts.csv from sae ablate")->required();
  c_sae_steer->add_option("--out", sae.out)->required();
  c_sae_steer->add_option("--task", sae.task, "task.json (default: next to the dataset)");
  c_sae_steer->add_option("--gamma", sae.gamma)->capture_default_str();
  c_sae_steer->add_option("--alpha-acc", sae.alpha_acc)->capture_default_str();
  c_sae_steer->add_option("--alpha-cal", sae.alpha_cal)->capture_default_str();
  c_sae_steer->add_option("--bins", sae.report.bins)->capture_default_str();
  c_sae_steer->add_option("--report-scale", sae.report.scale)
      ->capture_default_str()
      ->check(CLI::IsMember({"raw", "x100", "both"}));

  DiagnoseArgs dg;
  auto* c_diag = app.add_subcommand("diagnose", "Head probing, PCA dimensionality and layer sweeps");
  c_diag->require_subcommand(1);
  auto* c_heads = c_diag->add_subcommand("heads", "Grouped k-fold probes per attention head");
  c_heads->add_option("--dataset", dg.datasets, "One dataset per head (tag carries layer= and head=)")->required();
  c_heads->add_option("--out", dg.out)->required();
  c_heads->add_option("--seed", dg.seed)->capture_default_str();
  c_heads->add_option("--folds", dg.folds)->capture_default_str();
  c_heads->add_option("--hidden", dg.hidden)->delimiter(',')->capture_default_str();
  c_heads->add_option("--epochs", dg.epochs)->capture_default_str();
  c_heads->add_option("--target", dg.target, "Signal fraction for the head count")->capture_default_str();
  c_heads->add_flag("--length-normalize", dg.report.length_normalize);
  auto* c_pca = c_diag->add_subcommand("pca", "Ridge R^2 on the top-k principal components");
  c_pca->add_option("--dataset", dg.datasets)->required();
  c_pca->add_option("--out", dg.out)->required();
  c_pca->add_option("--seed", dg.seed)->capture_default_str();
  c_pca->add_option("--folds", dg.folds)->capture_default_str();
  c_pca->add_option("--ks", dg.ks)->delimiter(',')->capture_default_str();
  c_pca->add_option("--ridge-alpha", dg.ridge_alpha)->capture_default_str();
  c_pca->add_flag("--length-normalize", dg.report.length_normalize);
  auto* c_layers = c_diag->add_subcommand("layers", "Steered vs base metrics per layer at fixed gamma");
  c_layers->add_option("--dataset", dg.datasets, "One dataset per layer")->required();
  c_layers->add_option("--probe", dg.probe)->required();
  c_layers->add_option("--out", dg.out)->required();
  c_layers->add_option("--gamma", dg.gamma)->capture_default_str();
  c_layers->add_option("--bins", dg.report.bins)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_synth->parsed()) cmd_synth(synth);
    if (c_train->parsed()) cmd_train_probe(tp);
    if (c_steer->parsed()) cmd_steer(st);
    if (c_sweep->parsed()) cmd_sweep(sw);
    if (c_sae_train->parsed()) cmd_sae_train(sae);
    if (c_sae_ablate->parsed()) cmd_sae_ablate(sae);
    if (c_sae_steer->parsed()) cmd_sae_steer(sae);
    if (c_heads->parsed()) cmd_diagnose_heads(dg);
    if (c_pca->parsed()) cmd_diagnose_pca(dg);
    if (c_layers->parsed()) cmd_diagnose_layers(dg);
  } catch (const Error& e) {
    std::cerr << "resteer: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "resteer: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
