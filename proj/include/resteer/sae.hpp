#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "resteer/dataset.hpp"
#include "resteer/error.hpp"
#include "resteer/probes.hpp"
#include "resteer/random.hpp"
#include "resteer/types.hpp"

namespace resteer {

/// Sparse autoencoder over z-scored activations: f = relu(W_enc z + b_enc),
/// z_hat = W_dec f + b_dec. Column j of W_dec is feature j's direction.
template <typename Scalar>
struct SaeModel {
  Matrix<Scalar> w_enc;  // D x d
  Vector<Scalar> b_enc;  // D
  Matrix<Scalar> w_dec;  // d x D
  Vector<Scalar> b_dec;  // d
  double lambda = 0.0;
  std::uint64_t seed = 0;
  Normalizer normalizer;  // statistics of the raw activations the SAE was trained on

  Index d() const { return w_dec.rows(); }
  Index features() const { return w_enc.rows(); }

  Vector<Scalar> decoder_norms() const { return w_dec.colwise().norm().transpose(); }

  template <typename Other>
  SaeModel<Other> cast() const {
    SaeModel<Other> out;
    out.w_enc = w_enc.template cast<Other>();
    out.b_enc = b_enc.template cast<Other>();
    out.w_dec = w_dec.template cast<Other>();
    out.b_dec = b_dec.template cast<Other>();
    out.lambda = lambda;
    out.seed = seed;
    out.normalizer = normalizer;
    return out;
  }
};

template <typename Scalar>
struct SaeGradients {
  Matrix<Scalar> w_enc;
  Vector<Scalar> b_enc;
  Matrix<Scalar> w_dec;
  Vector<Scalar> b_dec;
};

/// Same seeded uniform +-1/sqrt(fan_in) scheme as the probes.
template <typename Scalar>
SaeModel<Scalar> init_sae(Index d, Index features, double lambda, std::uint64_t seed) {
  require(d >= 1 && features >= 1, Errc::BadWidth, "SAE widths must be >= 1");
  SaeModel<Scalar> m;
  m.lambda = lambda;
  m.seed = seed;
  Rng rng(seed);
  const auto fill = [&rng](Index rows, Index cols, double bound) {
    Matrix<Scalar> w(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) w(r, c) = static_cast<Scalar>(rng.uniform(-bound, bound));
    return w;
  };
  const double enc_bound = 1.0 / std::sqrt(static_cast<double>(d));
  const double dec_bound = 1.0 / std::sqrt(static_cast<double>(features));
  m.w_enc = fill(features, d, enc_bound);
  m.b_enc = fill(features, 1, enc_bound);
  m.w_dec = fill(d, features, dec_bound);
  m.b_dec = fill(d, 1, dec_bound);
  return m;
}

template <typename Scalar>
Vector<Scalar> sae_encode(const SaeModel<Scalar>& m, const std::type_identity_t<Eigen::Ref<const Vector<Scalar>>>& z) {
  require(z.size() == m.d(), Errc::DimMismatch, "SAE input width mismatch");
  return (m.w_enc * z + m.b_enc).cwiseMax(Scalar(0));
}

template <typename Scalar>
Vector<Scalar> sae_decode(const SaeModel<Scalar>& m, const std::type_identity_t<Eigen::Ref<const Vector<Scalar>>>& f) {
  require(f.size() == m.features(), Errc::DimMismatch, "SAE code width mismatch");
  return m.w_dec * f + m.b_dec;
}

/// Batched encode, one sample per row.
template <typename Scalar, typename Derived>
Matrix<Scalar> sae_encode_rows(const SaeModel<Scalar>& m, const Eigen::MatrixBase<Derived>& z) {
  require(z.cols() == m.d(), Errc::DimMismatch, "SAE input width mismatch");
  Matrix<Scalar> pre = z.template cast<Scalar>() * m.w_enc.transpose();
  pre.rowwise() += m.b_enc.transpose();
  return pre.cwiseMax(Scalar(0));
}

template <typename Scalar, typename Derived>
Matrix<Scalar> sae_decode_rows(const SaeModel<Scalar>& m, const Eigen::MatrixBase<Derived>& f) {
  require(f.cols() == m.features(), Errc::DimMismatch, "SAE code width mismatch");
  Matrix<Scalar> out = f.template cast<Scalar>() * m.w_dec.transpose();
  out.rowwise() += m.b_dec.transpose();
  return out;
}

/// ||z - z_hat||^2 + lambda * sum_j |f_j| * ||d_j||.
template <typename Scalar>
double sae_loss(const SaeModel<Scalar>& m, const std::type_identity_t<Eigen::Ref<const Vector<Scalar>>>& z,
                const std::type_identity_t<Eigen::Ref<const Vector<Scalar>>>& f, const std::type_identity_t<Eigen::Ref<const Vector<Scalar>>>& z_hat) {
  require(z.size() == z_hat.size() && f.size() == m.features(), Errc::DimMismatch, "SAE loss shape mismatch");
  const double recon = (z - z_hat).template cast<double>().squaredNorm();
  const double penalty = f.template cast<double>().cwiseAbs().dot(m.decoder_norms().template cast<double>());
  return recon + m.lambda * penalty;
}

struct SaeLossParts {
  double reconstruction = 0.0;  // batch mean of ||z - z_hat||^2
  double penalty = 0.0;         // batch mean of lambda * sum_j f_j ||d_j||

  double total() const { return reconstruction + penalty; }
};

/// Batch-mean loss and its gradient. The decoder norms inside the penalty are
/// differentiated through.
template <typename Scalar, typename Derived>
SaeLossParts sae_loss_and_gradient(const SaeModel<Scalar>& m, const Eigen::MatrixBase<Derived>& z_rows,
                                   SaeGradients<Scalar>& grads) {
  require(z_rows.cols() == m.d() && z_rows.rows() >= 1, Errc::DimMismatch, "SAE batch shape mismatch");
  const Matrix<Scalar> z = z_rows.template cast<Scalar>();
  const auto batch = static_cast<Scalar>(z.rows());
  Matrix<Scalar> pre = z * m.w_enc.transpose();
  pre.rowwise() += m.b_enc.transpose();
  const Matrix<Scalar> f = pre.cwiseMax(Scalar(0));
  Matrix<Scalar> err = f * m.w_dec.transpose();
  err.rowwise() += m.b_dec.transpose();
  err -= z;
  const Vector<Scalar> norms = m.decoder_norms();
  const auto lam = static_cast<Scalar>(m.lambda);

  SaeLossParts parts;
  parts.reconstruction = err.template cast<double>().squaredNorm() / static_cast<double>(z.rows());
  const Vector<Scalar> code_mass = f.colwise().sum().transpose();  // f >= 0, so |f| = f
  parts.penalty = m.lambda * code_mass.template cast<double>().dot(norms.template cast<double>()) /
                  static_cast<double>(z.rows());

  const Matrix<Scalar> d_zhat = (Scalar(2) / batch) * err;
  grads.b_dec = d_zhat.colwise().sum().transpose();
  grads.w_dec.noalias() = d_zhat.transpose() * f;
  for (Index j = 0; j < m.features(); ++j) {
    if (norms[j] > Scalar(0)) grads.w_dec.col(j) += (lam / batch) * code_mass[j] / norms[j] * m.w_dec.col(j);
  }
  Matrix<Scalar> d_pre = d_zhat * m.w_dec;
  d_pre.rowwise() += (lam / batch) * norms.transpose();
  d_pre.array() *= (pre.array() > Scalar(0)).template cast<Scalar>();
  grads.b_enc = d_pre.colwise().sum().transpose();
  grads.w_enc.noalias() = d_pre.transpose() * z;
  return parts;
}

/// z_hat - f_j d_j, i.e. the reconstruction with feature j removed.
template <typename Scalar>
Vector<Scalar> ablate_feature(const SaeModel<Scalar>& m, const std::type_identity_t<Eigen::Ref<const Vector<Scalar>>>& z, Index feature) {
  require(feature >= 0 && feature < m.features(), Errc::IndexOutOfRange,
          "feature " + std::to_string(feature) + " out of range");
  const Vector<Scalar> f = sae_encode(m, z);
  return sae_decode<Scalar>(m, f) - f[feature] * m.w_dec.col(feature);
}

// ---------------------------------------------------------------------------

struct SaeHistory {
  std::vector<double> reconstruction;
  std::vector<double> penalty;
};

struct SaeTrainResult {
  SaeModel<float> model;
  SaeHistory history;
};

/// AdamW mini-batch training on z-scored rows; D = expansion * d. Uses the
/// learning rate, weight decay, batch size, epoch budget and seed of `cfg`.
SaeTrainResult train_sae(const RowMatrixXf& z_rows, int expansion, double lambda, const TrainConfig& cfg);

struct FeatureStats {
  Eigen::VectorXd frequency;        // fraction of rows with f_j > 1e-4
  Eigen::VectorXi active_count;
  Eigen::VectorXd mean_activation;
  Eigen::VectorXd correlation;      // Pearson with the residual label, 0 if undefined
};

inline constexpr double kActiveThreshold = 1e-4;
inline constexpr int kMinActiveCount = 10;
inline constexpr double kMinActiveFrequency = 1e-4;

FeatureStats feature_stats(const SaeModel<float>& m, const RowMatrixXf& z_rows, const Eigen::VectorXf& labels);

/// Features passing the activity filter (>= 10 active rows, frequency > 1e-4).
bool passes_activity_filter(const FeatureStats& stats, Index feature);

/// Top-k positively correlated features among those passing the activity
/// filter; ties go to the lower index.
std::vector<Index> select_by_correlation(const FeatureStats& stats, std::size_t k);

/// impact_j = ((d_j * sigma) . w) * mean_activation_j, with w the ridge weights
/// over raw activations.
Eigen::VectorXd impact_scores(const SaeModel<float>& m, const FeatureStats& stats, const RidgeModel& ridge,
                              const Eigen::VectorXf& sigma);

/// Top-k features by |impact|; ties go to the lower index.
std::vector<Index> select_by_impact(const SaeModel<float>& m, const FeatureStats& stats, const RidgeModel& ridge,
                                    const Eigen::VectorXf& sigma, std::size_t k);

/// Maps a raw activation to an option log score. Used to re-score ablated
/// activations.
using Readout = std::function<double(const Eigen::VectorXf&)>;

struct AblationImpact {
  Index feature = 0;
  double delta_acc = 0.0;
  double delta_ece = 0.0;
};

struct AblationSweep {
  double baseline_acc = 0.0;
  double baseline_ece = 0.0;
  std::vector<AblationImpact> impacts;
};

/// For each feature: ablate it on every option row, map back to raw space,
/// re-score with `readout` and report accuracy/ECE changes relative to the
/// unablated SAE reconstruction.
AblationSweep ablation_sweep(const SaeModel<float>& m, const ActivationDataset& task, const Readout& readout,
                             const std::vector<Index>& features, int bins = 25);

/// Weights for beneficial features, normalized to sum to one.
std::vector<std::pair<Index, double>> steering_weights(const std::vector<AblationImpact>& impacts, double alpha_acc,
                                                       double alpha_cal);

/// h + gamma * (sum_j f_j w_j d_j) * sigma, with f computed from the SAE's
/// normalization of h and sigma the SAE training std.
Eigen::VectorXf apply_sae_steering(const SaeModel<float>& m, const Eigen::VectorXf& h,
                                   const std::vector<std::pair<Index, double>>& weights, double gamma);

struct QuantileSummary {
  double mean = 0.0, min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

/// Quartiles by linear interpolation between order statistics.
QuantileSummary summarize(std::vector<double> values);

void save_sae(const std::filesystem::path& dir, const SaeModel<float>& m);
SaeModel<float> load_sae(const std::filesystem::path& dir);

std::string impacts_csv(const std::vector<AblationImpact>& impacts);
std::vector<AblationImpact> read_impacts_csv(const std::filesystem::path& file);

}  // namespace resteer
