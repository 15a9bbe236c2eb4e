#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "resteer/dataset.hpp"
#include "resteer/metrics.hpp"
#include "resteer/probes.hpp"

namespace resteer {

/// What to return when every shifted probability clamps to zero.
enum class FallbackPolicy { Unsteered, Uniform };

FallbackPolicy parse_fallback(const std::string& text);

struct SteeringConfig {
  double gamma = 1.0;
  int layer_id = 0;
  FallbackPolicy fallback = FallbackPolicy::Unsteered;
  bool length_normalize = false;
};

struct SteeredPrediction {
  std::string qid;
  int correct = 0;
  Eigen::VectorXd base_probs;
  Eigen::VectorXd centered_residuals;
  Eigen::VectorXd steered_probs;
  int predicted = 0;
};

/// Gamma grid used when none is given: 0.25, 0.5, ..., 3.0.
std::vector<double> default_gamma_grid();

Eigen::VectorXd center_residuals(const Eigen::Ref<const Eigen::VectorXd>& predicted);

/// p'_j = max(p_j + gamma * r_j, 0), renormalized to sum to one.
Eigen::VectorXd steer_probs(const Eigen::Ref<const Eigen::VectorXd>& probs,
                            const Eigen::Ref<const Eigen::VectorXd>& centered, double gamma,
                            FallbackPolicy fallback = FallbackPolicy::Unsteered);

/// Raw (uncentered) probe outputs for every option row, n_questions x n_options.
Eigen::MatrixXd probe_residuals(const ActivationDataset& ds, const MlpProbe<float>& probe,
                                const Normalizer& normalizer);

std::vector<SteeredPrediction> steer_dataset(const ActivationDataset& ds, const MlpProbe<float>& probe,
                                             const Normalizer& normalizer, const SteeringConfig& cfg);

/// Steering from precomputed probe outputs; lets sweeps reuse one forward pass.
std::vector<SteeredPrediction> steer_with_residuals(const ActivationDataset& ds, const Eigen::MatrixXd& residuals,
                                                    const SteeringConfig& cfg);

EvalSet base_eval_set(const std::vector<SteeredPrediction>& preds);
EvalSet steered_eval_set(const std::vector<SteeredPrediction>& preds);

struct GammaSweep {
  double best_gamma = 0.0;
  std::size_t best = 0;
  std::vector<double> gammas;
  std::vector<CalibrationReport> reports;
};

/// Picks the gamma with the lowest validation Brier score; ties go to lower
/// ECE, then the smaller gamma.
GammaSweep sweep_gamma(const ActivationDataset& val, const MlpProbe<float>& probe, const Normalizer& normalizer,
                       const std::vector<double>& gammas, const SteeringConfig& base = {}, int bins = kDefaultBins);

struct LayerReport {
  int layer_id = 0;
  CalibrationReport report;
};

/// Lowest validation Brier; ties go to lower ECE, then lower layer id.
int select_layer(const std::vector<LayerReport>& reports);

void write_steered_jsonl(const std::vector<SteeredPrediction>& preds, const std::filesystem::path& file);

}  // namespace resteer
