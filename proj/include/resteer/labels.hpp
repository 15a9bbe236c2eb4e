#pragma once

#include <span>

#include "resteer/dataset.hpp"
#include "resteer/types.hpp"

namespace resteer {

/// Numerically stable softmax of per-option log scores. With
/// `length_normalize`, each score is first divided by its token count.
Eigen::VectorXd softmax_scores(std::span<const double> log_scores, bool length_normalize = false,
                               std::span<const int> token_counts = {});

/// Residual correctness: 1 - p_j on the correct option, -p_j elsewhere.
Eigen::VectorXd residual_labels(const Eigen::Ref<const Eigen::VectorXd>& probs, int correct);

/// Sum of squared residuals, i.e. the per-question Brier score.
double brier_from_residuals(const Eigen::Ref<const Eigen::VectorXd>& residuals);

/// Base option probabilities for every question (n_questions x n_options).
Eigen::MatrixXd base_probabilities(const ActivationDataset& ds, bool length_normalize = false);

/// Residual targets for every option row, aligned with ds.activations.
Eigen::VectorXf residual_targets(const ActivationDataset& ds, bool length_normalize = false);

}  // namespace resteer
