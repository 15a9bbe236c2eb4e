#include "resteer/diagnostics.hpp"

#include <algorithm>
#include <numeric>
#include <optional>

#include "resteer/error.hpp"
#include "resteer/io.hpp"
#include "resteer/parallel.hpp"
#include "resteer/random.hpp"
#include "resteer/steering.hpp"

namespace resteer {

std::vector<int> grouped_folds(Index n_questions, int folds, std::uint64_t seed) {
  require(folds >= 2, Errc::InvalidArgument, "need at least 2 folds");
  require(n_questions >= folds, Errc::TooFewQuestions,
          std::to_string(n_questions) + " questions cannot fill " + std::to_string(folds) + " folds");
  std::vector<Index> order(static_cast<std::size_t>(n_questions));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<int> fold(static_cast<std::size_t>(n_questions));
  for (std::size_t pos = 0; pos < order.size(); ++pos) fold[static_cast<std::size_t>(order[pos])] = static_cast<int>(pos % folds);
  return fold;
}

void HeadActivationSet::validate() const {
  require(!heads.empty(), Errc::EmptyInput, "head set is empty");
  require(n_options >= 1, Errc::ShapeMismatch, "n_options must be positive");
  for (const auto& h : heads) {
    require(h.rows.rows() == n_rows(), Errc::ShapeMismatch, "head matrices differ in row count");
    require(h.rows.cols() == d_head, Errc::ShapeMismatch, "head matrices differ in width");
  }
  require(n_rows() % n_options == 0, Errc::ShapeMismatch, "row count is not a multiple of n_options");
}

namespace {

std::optional<int> tag_value(const std::string& tag, const std::string& key) {
  const std::string needle = key + "=";
  std::size_t pos = 0;
  while ((pos = tag.find(needle, pos)) != std::string::npos) {
    // Only match whole keys ("head=" must not hit "subhead=").
    if (pos == 0 || !std::isalnum(static_cast<unsigned char>(tag[pos - 1]))) {
      try {
        return std::stoi(tag.substr(pos + needle.size()));
      } catch (const std::exception&) {
        return std::nullopt;
      }
    }
    pos += needle.size();
  }
  return std::nullopt;
}

}  // namespace

HeadActivationSet head_set_from_datasets(const std::vector<ActivationDataset>& datasets) {
  require(!datasets.empty(), Errc::EmptyInput, "no head datasets given");
  HeadActivationSet hs;
  hs.n_options = datasets.front().n_options;
  hs.d_head = datasets.front().d_model;
  for (const auto& ds : datasets) {
    require(ds.n_options == hs.n_options, Errc::OptionCountMismatch, "head datasets disagree on n_options");
    require(ds.questions == datasets.front().questions, Errc::QidOrderMismatch, "head datasets disagree on records");
    const auto layer = tag_value(ds.source_tag, "layer");
    const auto head = tag_value(ds.source_tag, "head");
    require(layer && head, Errc::CorruptRecord, "source_tag '" + ds.source_tag + "' lacks layer=/head=");
    hs.heads.push_back({*layer, *head, ds.activations});
  }
  hs.validate();
  return hs;
}

std::vector<HeadScore> probe_heads(const HeadActivationSet& hs, const Eigen::VectorXf& labels, int folds,
                                   const std::vector<int>& hidden, const TrainConfig& cfg, std::uint64_t seed) {
  hs.validate();
  require(labels.size() == hs.n_rows(), Errc::LengthMismatch, "labels are not aligned with head rows");
  const Index n_questions = hs.n_rows() / hs.n_options;
  const std::vector<int> fold_of = grouped_folds(n_questions, folds, seed);
  // Inner split of each training fold for early stopping: every tenth question
  // in a seeded order.
  std::vector<Index> inner_order(static_cast<std::size_t>(n_questions));
  std::iota(inner_order.begin(), inner_order.end(), Index{0});
  Rng inner_rng(seed + 1);
  inner_rng.shuffle(inner_order);
  std::vector<bool> inner_val(static_cast<std::size_t>(n_questions), false);
  for (std::size_t pos = 0; pos < inner_order.size(); pos += 10) inner_val[static_cast<std::size_t>(inner_order[pos])] = true;

  const auto gather = [&](const RowMatrixXf& rows, const std::vector<Index>& questions, RowMatrixXf& x, Eigen::VectorXf& y) {
    x.resize(static_cast<Index>(questions.size()) * hs.n_options, rows.cols());
    y.resize(x.rows());
    Index dst = 0;
    for (Index q : questions) {
      x.middleRows(dst, hs.n_options) = rows.middleRows(q * hs.n_options, hs.n_options);
      y.segment(dst, hs.n_options) = labels.segment(q * hs.n_options, hs.n_options);
      dst += hs.n_options;
    }
  };

  std::vector<HeadScore> scores(hs.heads.size());
  parallel_for(hs.heads.size(), [&](std::size_t h) {
    const auto& head = hs.heads[h];
    double r2_sum = 0.0;
    for (int f = 0; f < folds; ++f) {
      std::vector<Index> fit_q, stop_q, test_q;
      for (Index q = 0; q < n_questions; ++q) {
        if (fold_of[static_cast<std::size_t>(q)] == f) test_q.push_back(q);
        else if (inner_val[static_cast<std::size_t>(q)]) stop_q.push_back(q);
        else fit_q.push_back(q);
      }
      RowMatrixXf x_fit, x_stop, x_test;
      Eigen::VectorXf y_fit, y_stop, y_test;
      gather(head.rows, fit_q, x_fit, y_fit);
      gather(head.rows, stop_q, x_stop, y_stop);
      gather(head.rows, test_q, x_test, y_test);
      const Normalizer norm = fit_normalizer(x_fit, "fold");
      TrainConfig fold_cfg = cfg;
      fold_cfg.seed = seed + static_cast<std::uint64_t>(f);
      auto probe = init_probe<float>(hs.d_head, hidden, 0.2, fold_cfg.seed);
      auto trained = train(std::move(probe), norm.apply_rows(x_fit), y_fit, norm.apply_rows(x_stop), y_stop, fold_cfg);
      r2_sum += r_squared(predict_rows(trained.probe, norm.apply_rows(x_test)), y_test);
    }
    scores[h] = {head.layer, head.head, r2_sum / folds};
  });
  return scores;
}

int cumulative_signal(const std::vector<HeadScore>& scores, double target) {
  require(target > 0.0 && target <= 1.0, Errc::InvalidArgument, "target must lie in (0, 1]");
  std::vector<double> mass;
  for (const auto& s : scores) mass.push_back(std::max(s.r2, 0.0));
  std::sort(mass.begin(), mass.end(), std::greater<>());
  const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
  require(total > 0.0, Errc::AllZeroSignal, "no head has positive R^2");
  double running = 0.0;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    running += mass[i];
    // Relative slack absorbs summation-order rounding at target = 1.
    if (running >= target * total * (1.0 - 1e-12)) return static_cast<int>(i + 1);
  }
  return static_cast<int>(mass.size());
}

Eigen::MatrixXd PcaModel::project(const Eigen::Ref<const Eigen::MatrixXd>& x, Index k) const {
  require(x.cols() == mean.size(), Errc::DimMismatch, "PCA input width mismatch");
  require(k >= 0 && k <= components.cols(), Errc::IndexOutOfRange, "too many components requested");
  return (x.rowwise() - mean.transpose()) * components.leftCols(k);
}

Eigen::MatrixXd PcaModel::reconstruct(const Eigen::Ref<const Eigen::MatrixXd>& scores) const {
  require(scores.cols() <= components.cols(), Errc::DimMismatch, "too many component scores");
  Eigen::MatrixXd out = scores * components.leftCols(scores.cols()).transpose();
  out.rowwise() += mean.transpose();
  return out;
}

PcaModel pca_fit(const Eigen::Ref<const Eigen::MatrixXd>& x, Index k_max) {
  require(x.rows() >= 2, Errc::DegenerateData, "PCA needs at least two rows");
  require(k_max >= 1 && k_max <= x.cols(), Errc::InvalidArgument, "k_max must lie in [1, d]");
  PcaModel model;
  model.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - model.mean.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
  const double total = cov.trace();
  require(total > 0.0, Errc::DegenerateData, "data has zero variance");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  require(eig.info() == Eigen::Success, Errc::DegenerateData, "covariance eigendecomposition failed");
  // Eigenvalues come back ascending.
  const Index d = x.cols();
  model.components.resize(d, k_max);
  model.explained_ratio.resize(k_max);
  for (Index i = 0; i < k_max; ++i) {
    const Index src = d - 1 - i;
    Eigen::VectorXd v = eig.eigenvectors().col(src);
    // Sign convention: largest-magnitude entry positive.
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    model.components.col(i) = v;
    model.explained_ratio[i] = std::max(eig.eigenvalues()[src], 0.0) / total;
  }
  return model;
}

DimCurve dimensionality_curve(const Eigen::Ref<const Eigen::MatrixXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                              Index group_size, const std::vector<Index>& ks, double ridge_alpha, int folds,
                              std::uint64_t seed) {
  require(!ks.empty(), Errc::EmptyInput, "no component counts given");
  require(x.rows() == y.size(), Errc::LengthMismatch, "rows and targets differ");
  require(group_size >= 1 && x.rows() % group_size == 0, Errc::ShapeMismatch, "rows are not whole groups");
  const Index k_max = *std::max_element(ks.begin(), ks.end());
  require(*std::min_element(ks.begin(), ks.end()) >= 1, Errc::InvalidArgument, "component counts must be >= 1");
  require(k_max <= std::min(x.rows() - 1, x.cols()), Errc::InvalidArgument, "max(ks) exceeds min(N - 1, d)");
  const Index n_groups = x.rows() / group_size;
  const std::vector<int> fold_of = grouped_folds(n_groups, folds, seed);

  DimCurve curve;
  curve.ks = ks;
  curve.r2.assign(ks.size(), 0.0);
  for (int f = 0; f < folds; ++f) {
    std::vector<Index> train_rows, test_rows;
    for (Index r = 0; r < x.rows(); ++r) (fold_of[static_cast<std::size_t>(r / group_size)] == f ? test_rows : train_rows).push_back(r);
    const Eigen::MatrixXd x_train = x(train_rows, Eigen::all);
    const Eigen::MatrixXd x_test = x(test_rows, Eigen::all);
    const Eigen::VectorXd y_train = y(train_rows);
    const Eigen::VectorXd y_test = y(test_rows);
    const Index fold_k = std::min<Index>(k_max, std::min(x_train.rows() - 1, x.cols()));
    const PcaModel pca = pca_fit(x_train, fold_k);
    const Eigen::MatrixXd p_train = pca.project(x_train, fold_k);
    const Eigen::MatrixXd p_test = pca.project(x_test, fold_k);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const Index k = std::min(ks[i], fold_k);
      const RidgeModel ridge = fit_ridge(p_train.leftCols(k), y_train, ridge_alpha);
      curve.r2[i] += r_squared(ridge.predict(p_test.leftCols(k)), y_test) / folds;
    }
  }
  const PcaModel full = pca_fit(x, k_max);
  for (Index k : ks) curve.cumulative_variance.push_back(full.explained_ratio.head(k).sum());
  return curve;
}

std::vector<LayerSweepRow> layer_sweep_report(const std::vector<ActivationDataset>& layers,
                                              const std::vector<LayerProbe>& probes, double gamma, int bins) {
  require(layers.size() == probes.size(), Errc::LengthMismatch, "need one probe per layer");
  std::vector<LayerSweepRow> rows;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    SteeringConfig cfg;
    cfg.gamma = gamma;
    cfg.layer_id = layers[i].layer_id;
    const auto preds = steer_dataset(layers[i], probes[i].probe, probes[i].normalizer, cfg);
    const EvalSet steered = steered_eval_set(preds);
    const EvalSet base = base_eval_set(preds);
    rows.push_back({layers[i].layer_id, accuracy(steered), ece(steered, bins), accuracy(base), ece(base, bins)});
  }
  return rows;
}

std::string heads_csv(const std::vector<HeadScore>& scores) {
  std::string text = "layer,head,r2\n";
  for (const auto& s : scores) text += std::to_string(s.layer) + "," + std::to_string(s.head) + "," + io::format_double(s.r2) + "\n";
  return text;
}

std::string dimcurve_csv(const DimCurve& curve) {
  std::string text = "k,r2,cum_var\n";
  for (std::size_t i = 0; i < curve.ks.size(); ++i) {
    text += std::to_string(curve.ks[i]) + "," + io::format_double(curve.r2[i]) + "," +
            io::format_double(curve.cumulative_variance[i]) + "\n";
  }
  return text;
}

std::string layers_csv(const std::vector<LayerSweepRow>& rows) {
  std::string text = "layer,acc,ece,base_acc,base_ece\n";
  for (const auto& r : rows) {
    text += std::to_string(r.layer) + "," + io::format_double(r.accuracy) + "," + io::format_double(r.ece) + "," +
            io::format_double(r.base_accuracy) + "," + io::format_double(r.base_ece) + "\n";
  }
  return text;
}

}  // namespace resteer
