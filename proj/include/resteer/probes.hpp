#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <type_traits>
#include <vector>

#include "resteer/dataset.hpp"
#include "resteer/error.hpp"
#include "resteer/random.hpp"
#include "resteer/types.hpp"

namespace resteer {

inline const std::vector<int> kDefaultProbeHidden{1024, 512, 256, 128};

/// MLP regressor: affine layers with ReLU (and dropout in training) between
/// them, tanh on the single output so predictions stay in [-1, 1].
template <typename Scalar>
struct MlpProbe {
  std::vector<int> dims;                  // d_in, hidden..., 1
  std::vector<Matrix<Scalar>> weights;    // weights[l] is dims[l+1] x dims[l]
  std::vector<Vector<Scalar>> biases;
  double dropout_p = 0.2;
  std::uint64_t seed = 0;

  int d_in() const { return dims.front(); }
  std::size_t n_layers() const { return weights.size(); }

  template <typename Other>
  MlpProbe<Other> cast() const {
    MlpProbe<Other> out;
    out.dims = dims;
    out.dropout_p = dropout_p;
    out.seed = seed;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.weights.push_back(weights[l].template cast<Other>());
      out.biases.push_back(biases[l].template cast<Other>());
    }
    return out;
  }
};

template <typename Scalar>
struct MlpGradients {
  std::vector<Matrix<Scalar>> weights;
  std::vector<Vector<Scalar>> biases;
};

/// Seeded init: every weight and bias uniform in +-1/sqrt(fan_in).
template <typename Scalar>
MlpProbe<Scalar> init_probe(int d_in, const std::vector<int>& hidden, double dropout_p, std::uint64_t seed) {
  require(d_in >= 1, Errc::BadWidth, "input width must be >= 1");
  for (int w : hidden) require(w >= 1, Errc::BadWidth, "hidden widths must be >= 1");
  require(dropout_p >= 0.0 && dropout_p < 1.0, Errc::InvalidArgument, "dropout must lie in [0, 1)");
  MlpProbe<Scalar> p;
  p.dims.push_back(d_in);
  p.dims.insert(p.dims.end(), hidden.begin(), hidden.end());
  p.dims.push_back(1);
  p.dropout_p = dropout_p;
  p.seed = seed;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < p.dims.size(); ++l) {
    const int fan_in = p.dims[l];
    const int fan_out = p.dims[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix<Scalar> w(fan_out, fan_in);
    // Row-major fill order keeps the stream layout independent of storage.
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c) w(r, c) = static_cast<Scalar>(rng.uniform(-bound, bound));
    Vector<Scalar> b(fan_out);
    for (int r = 0; r < fan_out; ++r) b[r] = static_cast<Scalar>(rng.uniform(-bound, bound));
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

namespace detail {

template <typename Scalar>
struct ForwardTrace {
  std::vector<Matrix<Scalar>> inputs;  // inputs[l] feeds layer l (batch x dims[l])
  std::vector<Matrix<Scalar>> masks;   // scaled dropout masks for hidden outputs
  Vector<Scalar> output;
};

template <typename Scalar, typename Derived>
ForwardTrace<Scalar> run_forward(const MlpProbe<Scalar>& p, const Eigen::MatrixBase<Derived>& x, Rng* dropout_rng) {
  require(x.cols() == p.d_in(), Errc::DimMismatch,
          "input has " + std::to_string(x.cols()) + " dims, probe expects " + std::to_string(p.d_in()));
  ForwardTrace<Scalar> trace;
  trace.inputs.reserve(p.n_layers());
  trace.inputs.push_back(x.template cast<Scalar>());
  const bool dropout = dropout_rng != nullptr && p.dropout_p > 0.0;
  const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - p.dropout_p));
  for (std::size_t l = 0; l < p.n_layers(); ++l) {
    Matrix<Scalar> z = trace.inputs[l] * p.weights[l].transpose();
    z.rowwise() += p.biases[l].transpose();
    if (l + 1 == p.n_layers()) {
      trace.output = z.col(0).array().tanh().matrix();
      break;
    }
    z = z.cwiseMax(Scalar(0));
    if (dropout) {
      Matrix<Scalar> mask(z.rows(), z.cols());
      for (Index c = 0; c < mask.cols(); ++c)
        for (Index r = 0; r < mask.rows(); ++r)
          mask(r, c) = dropout_rng->uniform() < p.dropout_p ? Scalar(0) : keep_scale;
      z.array() *= mask.array();
      trace.masks.push_back(std::move(mask));
    }
    trace.inputs.push_back(std::move(z));
  }
  return trace;
}

}  // namespace detail

/// Eval-mode predictions for a batch (one sample per row).
template <typename Scalar, typename Derived>
Vector<Scalar> predict(const MlpProbe<Scalar>& p, const Eigen::MatrixBase<Derived>& x) {
  return detail::run_forward(p, x, nullptr).output;
}

/// Single-sample forward. Dropout is applied only in train mode, drawing
/// from `rng`; eval mode is deterministic.
template <typename Scalar>
Scalar forward(const MlpProbe<Scalar>& p, const std::type_identity_t<Eigen::Ref<const Vector<Scalar>>>& x, bool train_mode = false,
               Rng* rng = nullptr) {
  require(!train_mode || rng != nullptr, Errc::InvalidArgument, "train-mode forward needs an rng");
  return detail::run_forward(p, x.transpose(), train_mode ? rng : nullptr).output[0];
}

/// Mean squared error plus lambda_out times the mean squared prediction.
template <typename A, typename B>
double probe_loss(const Eigen::MatrixBase<A>& preds, const Eigen::MatrixBase<B>& targets, double lambda_out) {
  require(preds.size() == targets.size(), Errc::LengthMismatch, "preds and targets differ in length");
  require(preds.size() >= 1, Errc::LengthMismatch, "loss needs at least one sample");
  const auto p = preds.template cast<double>().array();
  const auto t = targets.template cast<double>().array();
  const double n = static_cast<double>(preds.size());
  return (t - p).square().sum() / n + lambda_out * p.square().sum() / n;
}

/// Loss and full backpropagated gradient over one batch. Passing a
/// `dropout_rng` runs the batch in train mode.
template <typename Scalar, typename DX, typename DY>
double probe_loss_and_gradient(const MlpProbe<Scalar>& p, const Eigen::MatrixBase<DX>& x,
                               const Eigen::MatrixBase<DY>& targets, double lambda_out, Rng* dropout_rng,
                               MlpGradients<Scalar>& grads) {
  require(x.rows() == targets.size(), Errc::LengthMismatch, "batch rows and targets differ");
  auto trace = detail::run_forward(p, x, dropout_rng);
  const Vector<Scalar>& out = trace.output;
  const double loss = probe_loss(out, targets, lambda_out);
  const auto n = static_cast<Scalar>(out.size());
  const auto lam = static_cast<Scalar>(lambda_out);
  const Vector<Scalar> t = targets.template cast<Scalar>();
  // dL/dout, then through tanh.
  Vector<Scalar> d_out = (Scalar(2) / n) * ((out - t) + lam * out);
  Matrix<Scalar> delta = (d_out.array() * (Scalar(1) - out.array().square())).matrix();

  grads.weights.resize(p.n_layers());
  grads.biases.resize(p.n_layers());
  const bool dropout = !trace.masks.empty();
  for (std::size_t l = p.n_layers(); l-- > 0;) {
    grads.weights[l].noalias() = delta.transpose() * trace.inputs[l];
    grads.biases[l] = delta.colwise().sum().transpose();
    if (l == 0) break;
    Matrix<Scalar> upstream = delta * p.weights[l];
    const Matrix<Scalar>& act = trace.inputs[l];
    // act = relu(z) * mask, so act > 0 exactly where both the ReLU and the
    // mask pass; the mask value itself carries the inverted-dropout scale.
    if (dropout) {
      upstream.array() *= trace.masks[l - 1].array();
    }
    upstream.array() *= (act.array() > Scalar(0)).template cast<Scalar>();
    delta = std::move(upstream);
  }
  return loss;
}

/// 1 - SS_res / SS_tot about the target mean.
template <typename A, typename B>
double r_squared(const Eigen::MatrixBase<A>& preds, const Eigen::MatrixBase<B>& targets) {
  require(preds.size() == targets.size(), Errc::LengthMismatch, "preds and targets differ in length");
  require(targets.size() >= 2, Errc::DegenerateTargets, "R^2 needs at least two samples");
  const auto p = preds.template cast<double>().array();
  const auto t = targets.template cast<double>().array();
  const double mean = t.mean();
  const double ss_tot = (t - mean).square().sum();
  require(ss_tot > 0.0, Errc::DegenerateTargets, "targets have zero variance");
  return 1.0 - (t - p).square().sum() / ss_tot;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  double lambda_out = 0.0;
  int batch_size = 256;
  int max_epochs = 100;
  int early_stop_patience = 10;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

struct TrainHistory {
  double initial_train_loss = 0.0;  // eval-mode loss before the first update
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> val_r2;
  std::size_t best_epoch = 0;

  bool operator==(const TrainHistory&) const = default;
};

struct TrainResult {
  MlpProbe<float> probe;
  TrainHistory history;
};

/// AdamW mini-batch training. Restores the weights from the epoch with the
/// best validation R^2 and stops after `early_stop_patience` epochs without
/// improvement. Inputs are expected to be z-scored already.
TrainResult train(MlpProbe<float> probe, const RowMatrixXf& x_train, const Eigen::VectorXf& y_train,
                  const RowMatrixXf& x_val, const Eigen::VectorXf& y_val, const TrainConfig& cfg);

/// Chunked eval-mode prediction over many rows.
Eigen::VectorXf predict_rows(const MlpProbe<float>& p, const RowMatrixXf& x);

struct ProbeGrid {
  std::vector<double> learning_rates{1e-4, 3e-4, 1e-3};
  std::vector<double> weight_decays{1e-4, 1e-2};
  std::vector<double> lambda_outs{0.0, 0.01, 0.1};
};

struct GridCell {
  TrainConfig config;
  double val_r2 = 0.0;
  std::size_t best_epoch = 0;
  bool ok = false;
  std::string error;
};

struct GridSearchResult {
  MlpProbe<float> probe;
  TrainConfig config;
  TrainHistory history;
  std::vector<GridCell> table;  // enumeration order: lr, then weight decay, then lambda_out
  std::size_t best = 0;
};

/// Trains one probe per grid point (cells run concurrently, each with its own
/// probe and RNG) and keeps the one with the highest validation R^2. Ties go
/// to lower weight decay, then lower learning rate, then enumeration order.
GridSearchResult grid_search(int d_in, const std::vector<int>& hidden, double dropout_p, const ProbeGrid& grid,
                             const TrainConfig& base, const RowMatrixXf& x_train, const Eigen::VectorXf& y_train,
                             const RowMatrixXf& x_val, const Eigen::VectorXf& y_val, std::uint64_t seed);

std::string grid_table_csv(const std::vector<GridCell>& table);
std::string history_csv(const TrainHistory& history);

// ---------------------------------------------------------------------------
// Ridge regression

struct RidgeModel {
  Eigen::VectorXd weights;
  double bias = 0.0;
  double alpha = 0.0;

  template <typename Derived>
  Eigen::VectorXd predict(const Eigen::MatrixBase<Derived>& x) const {
    require(x.cols() == weights.size(), Errc::DimMismatch, "ridge input width mismatch");
    return (x.template cast<double>() * weights).array() + bias;
  }
};

/// Solves (Xc^T Xc + alpha I) w = Xc^T yc on centered data; the bias restores
/// the means.
RidgeModel fit_ridge(const Eigen::Ref<const Eigen::MatrixXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                     double alpha);

// ---------------------------------------------------------------------------
// Persistence

struct StoredProbe {
  MlpProbe<float> probe;
  Normalizer normalizer;
};

void save_probe(const std::filesystem::path& dir, const MlpProbe<float>& probe, const Normalizer& normalizer);
StoredProbe load_probe(const std::filesystem::path& dir);

}  // namespace resteer
