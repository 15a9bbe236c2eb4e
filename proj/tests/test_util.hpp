#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include "resteer/dataset.hpp"
#include "resteer/random.hpp"

namespace resteer::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("resteer-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Random dataset with Gaussian activations and log scores.
inline ActivationDataset random_dataset(int n_questions, int n_options, int d, std::uint64_t seed, int layer = 0) {
  Rng rng(seed);
  ActivationDataset ds;
  ds.d_model = d;
  ds.n_options = n_options;
  ds.layer_id = layer;
  ds.source_tag = "test";
  ds.activations.resize(static_cast<Index>(n_questions) * n_options, d);
  for (Index r = 0; r < ds.activations.rows(); ++r)
    for (Index c = 0; c < d; ++c) ds.activations(r, c) = static_cast<float>(rng.normal());
  for (int q = 0; q < n_questions; ++q) {
    QuestionRecord rec;
    rec.qid = "q" + std::to_string(q);
    rec.correct = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_options)));
    for (int j = 0; j < n_options; ++j) {
      rec.log_scores.push_back(-rng.uniform(0.1, 5.0));
      rec.token_counts.push_back(1 + static_cast<int>(rng.below(5)));
    }
    ds.questions.push_back(rec);
  }
  return ds;
}

/// Rows z = sum of `active` atoms of a random unit-norm dictionary with
/// nonnegative weights in [0.5, 1.5], z-scored over the sample.
inline RowMatrixXf planted_dictionary(Index n, Index d, Index atoms, int active, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXf dict(d, atoms);
  for (Index j = 0; j < atoms; ++j) {
    for (Index c = 0; c < d; ++c) dict(c, j) = static_cast<float>(rng.normal());
    dict.col(j).normalize();
  }
  RowMatrixXf z = RowMatrixXf::Zero(n, d);
  std::vector<Index> idx(static_cast<std::size_t>(atoms));
  for (Index j = 0; j < atoms; ++j) idx[static_cast<std::size_t>(j)] = j;
  for (Index i = 0; i < n; ++i) {
    rng.shuffle(idx);
    for (int k = 0; k < active; ++k) {
      z.row(i) += static_cast<float>(rng.uniform(0.5, 1.5)) * dict.col(idx[static_cast<std::size_t>(k)]).transpose();
    }
  }
  return fit_normalizer(z, "planted").apply_rows(z);
}

}  // namespace resteer::testing
