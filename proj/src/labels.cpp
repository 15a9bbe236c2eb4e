#include "resteer/labels.hpp"

#include <cmath>

#include "resteer/error.hpp"

namespace resteer {

Eigen::VectorXd softmax_scores(std::span<const double> log_scores, bool length_normalize,
                               std::span<const int> token_counts) {
  const auto n = static_cast<Index>(log_scores.size());
  require(n >= 1, Errc::InvalidArgument, "softmax needs at least one score");
  if (length_normalize) {
    require(token_counts.size() == log_scores.size(), Errc::LengthMismatch, "token_counts length differs from scores");
  }
  Eigen::VectorXd s(n);
  for (Index j = 0; j < n; ++j) {
    const double raw = log_scores[static_cast<std::size_t>(j)];
    require(std::isfinite(raw), Errc::NonFiniteScore, "log score " + std::to_string(j) + " is not finite");
    if (length_normalize) {
      const int count = token_counts[static_cast<std::size_t>(j)];
      require(count >= 1, Errc::InvalidArgument, "token count must be >= 1");
      s[j] = raw / count;
    } else {
      s[j] = raw;
    }
  }
  Eigen::VectorXd e = (s.array() - s.maxCoeff()).exp();
  return e / e.sum();
}

Eigen::VectorXd residual_labels(const Eigen::Ref<const Eigen::VectorXd>& probs, int correct) {
  require(correct >= 0 && correct < probs.size(), Errc::IndexOutOfRange,
          "correct index " + std::to_string(correct) + " out of range");
  Eigen::VectorXd r = -probs;
  r[correct] += 1.0;
  return r;
}

double brier_from_residuals(const Eigen::Ref<const Eigen::VectorXd>& residuals) { return residuals.squaredNorm(); }

Eigen::MatrixXd base_probabilities(const ActivationDataset& ds, bool length_normalize) {
  Eigen::MatrixXd probs(ds.n_questions(), ds.n_options);
  for (Index q = 0; q < ds.n_questions(); ++q) {
    const auto& rec = ds.questions[static_cast<std::size_t>(q)];
    probs.row(q) = softmax_scores(rec.log_scores, length_normalize, rec.token_counts).transpose();
  }
  return probs;
}

Eigen::VectorXf residual_targets(const ActivationDataset& ds, bool length_normalize) {
  const Eigen::MatrixXd probs = base_probabilities(ds, length_normalize);
  Eigen::VectorXf targets(ds.n_rows());
  for (Index q = 0; q < ds.n_questions(); ++q) {
    const Eigen::VectorXd r = residual_labels(probs.row(q).transpose(), ds.questions[static_cast<std::size_t>(q)].correct);
    targets.segment(q * ds.n_options, ds.n_options) = r.cast<float>();
  }
  return targets;
}

}  // namespace resteer
