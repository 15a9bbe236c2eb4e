#include "resteer/steering.hpp"

#include <cmath>
#include <limits>

#include "json.hpp"
#include "resteer/error.hpp"
#include "resteer/io.hpp"
#include "resteer/labels.hpp"

namespace resteer {

FallbackPolicy parse_fallback(const std::string& text) {
  if (text == "unsteered") return FallbackPolicy::Unsteered;
  if (text == "uniform") return FallbackPolicy::Uniform;
  fail(Errc::InvalidArgument, "fallback must be unsteered or uniform (got '" + text + "')");
}

std::vector<double> default_gamma_grid() {
  std::vector<double> grid;
  for (int k = 1; k <= 12; ++k) grid.push_back(0.25 * k);
  return grid;
}

Eigen::VectorXd center_residuals(const Eigen::Ref<const Eigen::VectorXd>& predicted) {
  require(predicted.size() >= 1, Errc::InvalidArgument, "nothing to center");
  return predicted.array() - predicted.mean();
}

Eigen::VectorXd steer_probs(const Eigen::Ref<const Eigen::VectorXd>& probs,
                            const Eigen::Ref<const Eigen::VectorXd>& centered, double gamma,
                            FallbackPolicy fallback) {
  require(probs.size() == centered.size(), Errc::DimMismatch, "probs and residuals differ in length");
  require(std::isfinite(gamma) && probs.allFinite() && centered.allFinite(), Errc::NonFiniteInput,
          "steering inputs must be finite");
  if (gamma == 0.0 || (centered.array() == 0.0).all()) return probs;
  const Eigen::VectorXd shifted = (probs + gamma * centered).cwiseMax(0.0);
  const double total = shifted.sum();
  if (total > 0.0) return shifted / total;
  if (fallback == FallbackPolicy::Uniform) {
    return Eigen::VectorXd::Constant(probs.size(), 1.0 / static_cast<double>(probs.size()));
  }
  return probs;
}

Eigen::MatrixXd probe_residuals(const ActivationDataset& ds, const MlpProbe<float>& probe,
                                const Normalizer& normalizer) {
  require(probe.d_in() == ds.d_model, Errc::DimMismatch,
          "probe expects " + std::to_string(probe.d_in()) + " dims, dataset has " + std::to_string(ds.d_model));
  const Eigen::VectorXf flat = predict_rows(probe, normalizer.apply_rows(ds.activations));
  // Rows of the dataset are question-major, so the flat vector reshapes directly.
  return Eigen::Map<const RowMatrix<float>>(flat.data(), ds.n_questions(), ds.n_options).cast<double>();
}

std::vector<SteeredPrediction> steer_with_residuals(const ActivationDataset& ds, const Eigen::MatrixXd& residuals,
                                                    const SteeringConfig& cfg) {
  require(residuals.rows() == ds.n_questions() && residuals.cols() == ds.n_options, Errc::DimMismatch,
          "residual matrix does not match dataset shape");
  const Eigen::MatrixXd base = base_probabilities(ds, cfg.length_normalize);
  std::vector<SteeredPrediction> out;
  out.reserve(static_cast<std::size_t>(ds.n_questions()));
  for (Index q = 0; q < ds.n_questions(); ++q) {
    SteeredPrediction pred;
    const auto& rec = ds.questions[static_cast<std::size_t>(q)];
    pred.qid = rec.qid;
    pred.correct = rec.correct;
    pred.base_probs = base.row(q).transpose();
    pred.centered_residuals = center_residuals(residuals.row(q).transpose());
    pred.steered_probs = steer_probs(pred.base_probs, pred.centered_residuals, cfg.gamma, cfg.fallback);
    pred.predicted = static_cast<int>(argmax_lowest(pred.steered_probs.transpose()));
    out.push_back(std::move(pred));
  }
  return out;
}

std::vector<SteeredPrediction> steer_dataset(const ActivationDataset& ds, const MlpProbe<float>& probe,
                                             const Normalizer& normalizer, const SteeringConfig& cfg) {
  return steer_with_residuals(ds, probe_residuals(ds, probe, normalizer), cfg);
}

namespace {

EvalSet collect(const std::vector<SteeredPrediction>& preds, bool steered) {
  EvalSet ev;
  if (preds.empty()) return ev;
  ev.probs.resize(static_cast<Index>(preds.size()), preds.front().base_probs.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ev.probs.row(static_cast<Index>(i)) = (steered ? preds[i].steered_probs : preds[i].base_probs).transpose();
    ev.correct.push_back(preds[i].correct);
  }
  return ev;
}

}  // namespace

EvalSet base_eval_set(const std::vector<SteeredPrediction>& preds) { return collect(preds, false); }
EvalSet steered_eval_set(const std::vector<SteeredPrediction>& preds) { return collect(preds, true); }

GammaSweep sweep_gamma(const ActivationDataset& val, const MlpProbe<float>& probe, const Normalizer& normalizer,
                       const std::vector<double>& gammas, const SteeringConfig& base, int bins) {
  require(!gammas.empty(), Errc::EmptyInput, "gamma grid is empty");
  const Eigen::MatrixXd residuals = probe_residuals(val, probe, normalizer);
  GammaSweep sweep;
  sweep.gammas = gammas;
  for (double gamma : gammas) {
    SteeringConfig cfg = base;
    cfg.gamma = gamma;
    sweep.reports.push_back(report(steered_eval_set(steer_with_residuals(val, residuals, cfg)), bins));
  }
  for (std::size_t i = 1; i < gammas.size(); ++i) {
    const auto& a = sweep.reports[i];
    const auto& b = sweep.reports[sweep.best];
    const bool better = a.brier < b.brier || (a.brier == b.brier && (a.ece < b.ece || (a.ece == b.ece && gammas[i] < gammas[sweep.best])));
    if (better) sweep.best = i;
  }
  sweep.best_gamma = gammas[sweep.best];
  return sweep;
}

int select_layer(const std::vector<LayerReport>& reports) {
  require(!reports.empty(), Errc::EmptyInput, "no layer reports to select from");
  const LayerReport* best = &reports.front();
  for (const auto& r : reports) {
    const auto& a = r.report;
    const auto& b = best->report;
    if (a.brier < b.brier || (a.brier == b.brier && (a.ece < b.ece || (a.ece == b.ece && r.layer_id < best->layer_id)))) {
      best = &r;
    }
  }
  return best->layer_id;
}

void write_steered_jsonl(const std::vector<SteeredPrediction>& preds, const std::filesystem::path& file) {
  std::string text;
  for (const auto& p : preds) {
    nlohmann::ordered_json line;
    line["qid"] = p.qid;
    line["base_probs"] = std::vector<double>(p.base_probs.data(), p.base_probs.data() + p.base_probs.size());
    line["steered_probs"] = std::vector<double>(p.steered_probs.data(), p.steered_probs.data() + p.steered_probs.size());
    line["predicted"] = p.predicted;
    line["correct"] = p.correct;
    text += line.dump() + "\n";
  }
  io::write_text(file, text);
}

}  // namespace resteer
