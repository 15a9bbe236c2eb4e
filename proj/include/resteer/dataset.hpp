#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "resteer/types.hpp"

namespace resteer {

struct QuestionRecord {
  std::string qid;
  int correct = 0;
  std::vector<double> log_scores;  // summed answer-token log-likelihoods
  std::vector<int> token_counts;

  bool operator==(const QuestionRecord&) const = default;
};

/// Per-option activations grouped by question. Row q * n_options + j of
/// `activations` belongs to option j of question q.
struct ActivationDataset {
  int d_model = 0;
  int n_options = 0;
  int layer_id = 0;
  std::string source_tag;
  std::vector<QuestionRecord> questions;
  RowMatrixXf activations;

  Index n_questions() const { return static_cast<Index>(questions.size()); }
  Index n_rows() const { return n_questions() * n_options; }

  auto option_rows(Index q) const { return activations.middleRows(q * n_options, n_options); }

  /// Throws on any broken invariant (shape, duplicate qid, record ranges).
  void validate() const;

  /// Builds a dataset holding the listed questions, in the given order.
  ActivationDataset subset(const std::vector<Index>& question_indices) const;
};

/// CRC-based identity of the activations and records; used to tag normalizers.
std::string fingerprint(const ActivationDataset& ds);

ActivationDataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const ActivationDataset& ds, const std::filesystem::path& dir);

struct SplitSpec {
  std::array<double, 3> fractions{0.8, 0.2, 0.0};  // train, val, test
  std::uint64_t seed = 0;

  void validate() const;
};

struct DatasetSplits {
  ActivationDataset train, val, test;
};

/// Question-level split: every option of a question lands in the same part.
DatasetSplits split_grouped(const ActivationDataset& ds, const SplitSpec& spec);

/// Question indices per split (train, val, test) as produced by split_grouped.
std::array<std::vector<Index>, 3> split_indices(Index n_questions, const SplitSpec& spec);

inline constexpr float kStdFloor = 1e-6f;

struct Normalizer {
  Eigen::VectorXf mean;
  Eigen::VectorXf std;
  std::string fitted_on;

  Index dim() const { return mean.size(); }

  Eigen::VectorXf apply(const Eigen::Ref<const Eigen::VectorXf>& x) const;
  RowMatrixXf apply_rows(const Eigen::Ref<const RowMatrixXf>& rows) const;
  /// Inverse transform, mapping z-scores back to raw activation space.
  Eigen::VectorXf invert(const Eigen::Ref<const Eigen::VectorXf>& z) const;

  nlohmann::json to_json() const;
  static Normalizer from_json(const nlohmann::json& doc);
};

Normalizer fit_normalizer(const ActivationDataset& train);
Normalizer fit_normalizer(const Eigen::Ref<const RowMatrixXf>& rows, std::string fitted_on);

Eigen::VectorXf apply_normalizer(const Normalizer& n, const Eigen::Ref<const Eigen::VectorXf>& x);

void save_normalizer(const Normalizer& n, const std::filesystem::path& file);
Normalizer load_normalizer(const std::filesystem::path& file);

/// Feature-wise concatenation of several layers recorded for the same questions.
ActivationDataset concat_layers(const std::vector<ActivationDataset>& datasets);

}  // namespace resteer
