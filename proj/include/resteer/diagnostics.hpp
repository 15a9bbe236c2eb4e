#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resteer/dataset.hpp"
#include "resteer/metrics.hpp"
#include "resteer/probes.hpp"

namespace resteer {

/// Fold id per question: a seeded shuffle dealt round-robin into `folds`.
std::vector<int> grouped_folds(Index n_questions, int folds, std::uint64_t seed);

struct HeadActivations {
  int layer = 0;
  int head = 0;
  RowMatrixXf rows;  // one row per option, aligned across heads
};

struct HeadActivationSet {
  int n_options = 0;
  int d_head = 0;
  std::vector<HeadActivations> heads;

  Index n_rows() const { return heads.empty() ? 0 : heads.front().rows.rows(); }
  void validate() const;
};

/// Builds a head set from ACTV1 directories whose source_tag carries
/// "layer=<l>" and "head=<h>". All directories must share records.
HeadActivationSet head_set_from_datasets(const std::vector<ActivationDataset>& datasets);

struct HeadScore {
  int layer = 0;
  int head = 0;
  double r2 = 0.0;  // mean held-out R^2 over folds
};

inline const std::vector<int> kDefaultHeadHidden{256, 128, 64, 32};

/// Question-grouped k-fold probing of every head. Each fold fits its own
/// normalizer and trains a probe with early stopping on an inner split of the
/// training questions; the held-out fold gives the reported R^2.
std::vector<HeadScore> probe_heads(const HeadActivationSet& hs, const Eigen::VectorXf& labels, int folds,
                                   const std::vector<int>& hidden, const TrainConfig& cfg, std::uint64_t seed);

/// Smallest number of heads whose clamped R^2 mass reaches target * total.
int cumulative_signal(const std::vector<HeadScore>& scores, double target = 0.8);

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;       // d x k, orthonormal columns
  Eigen::VectorXd explained_ratio;  // descending, relative to total variance

  Eigen::MatrixXd project(const Eigen::Ref<const Eigen::MatrixXd>& x, Index k) const;
  Eigen::MatrixXd reconstruct(const Eigen::Ref<const Eigen::MatrixXd>& scores) const;
};

PcaModel pca_fit(const Eigen::Ref<const Eigen::MatrixXd>& x, Index k_max);

struct DimCurve {
  std::vector<Index> ks;
  std::vector<double> r2;
  std::vector<double> cumulative_variance;
};

/// Cross-validated ridge R^2 on the top-k principal components, with rows
/// grouped `group_size` at a time (options of one question) when folding.
DimCurve dimensionality_curve(const Eigen::Ref<const Eigen::MatrixXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                              Index group_size, const std::vector<Index>& ks, double ridge_alpha, int folds,
                              std::uint64_t seed);

struct LayerSweepRow {
  int layer = 0;
  double accuracy = 0.0;
  double ece = 0.0;
  double base_accuracy = 0.0;
  double base_ece = 0.0;
};

struct LayerProbe {
  MlpProbe<float> probe;
  Normalizer normalizer;
};

/// Steered vs unsteered accuracy and ECE per layer at a fixed gamma.
std::vector<LayerSweepRow> layer_sweep_report(const std::vector<ActivationDataset>& layers,
                                              const std::vector<LayerProbe>& probes, double gamma,
                                              int bins = kDefaultBins);

std::string heads_csv(const std::vector<HeadScore>& scores);
std::string dimcurve_csv(const DimCurve& curve);
std::string layers_csv(const std::vector<LayerSweepRow>& rows);

}  // namespace resteer
