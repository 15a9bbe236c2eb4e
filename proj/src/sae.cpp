#include "resteer/sae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "resteer/adamw.hpp"
#include "resteer/io.hpp"
#include "resteer/labels.hpp"
#include "resteer/metrics.hpp"
#include "resteer/parallel.hpp"

namespace resteer {

namespace fs = std::filesystem;

SaeTrainResult train_sae(const RowMatrixXf& z_rows, int expansion, double lambda, const TrainConfig& cfg) {
  require(z_rows.rows() > 0, Errc::EmptyTrainSet, "SAE training data is empty");
  require(expansion >= 1, Errc::BadWidth, "expansion must be >= 1");
  require(lambda >= 0.0, Errc::InvalidArgument, "lambda must be >= 0");
  require(cfg.learning_rate > 0.0 && cfg.batch_size >= 1 && cfg.max_epochs >= 1, Errc::InvalidArgument,
          "invalid SAE training config");
  const Index d = z_rows.cols();
  SaeTrainResult result;
  SaeModel<float>& m = result.model;
  m = init_sae<float>(d, d * expansion, lambda, cfg.seed);

  AdamW<float> opt({cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps});
  const auto s_we = opt.add_slot(m.w_enc.size());
  const auto s_be = opt.add_slot(m.b_enc.size());
  const auto s_wd = opt.add_slot(m.w_dec.size());
  const auto s_bd = opt.add_slot(m.b_dec.size());

  Rng rng(cfg.seed);
  const Index n = z_rows.rows();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  SaeGradients<float> grads;
  RowMatrixXf batch;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double recon = 0.0, penalty = 0.0;
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index len = std::min<Index>(cfg.batch_size, n - start);
      batch.resize(len, d);
      for (Index i = 0; i < len; ++i) batch.row(i) = z_rows.row(order[static_cast<std::size_t>(start + i)]);
      const SaeLossParts parts = sae_loss_and_gradient(m, batch, grads);
      require(std::isfinite(parts.total()), Errc::DivergedLoss,
              "non-finite SAE loss at epoch " + std::to_string(epoch));
      recon += parts.reconstruction * static_cast<double>(len);
      penalty += parts.penalty * static_cast<double>(len);
      opt.begin_step();
      opt.update(s_we, m.w_enc, grads.w_enc);
      opt.update(s_be, m.b_enc, grads.b_enc);
      opt.update(s_wd, m.w_dec, grads.w_dec);
      opt.update(s_bd, m.b_dec, grads.b_dec);
    }
    result.history.reconstruction.push_back(recon / static_cast<double>(n));
    result.history.penalty.push_back(penalty / static_cast<double>(n));
  }
  return result;
}

FeatureStats feature_stats(const SaeModel<float>& m, const RowMatrixXf& z_rows, const Eigen::VectorXf& labels) {
  require(z_rows.rows() == labels.size(), Errc::LengthMismatch, "labels are not aligned with rows");
  require(z_rows.rows() >= 1, Errc::EmptyInput, "no rows for feature statistics");
  const Index features = m.features();
  const auto n = static_cast<double>(z_rows.rows());
  Eigen::VectorXd sum_f = Eigen::VectorXd::Zero(features);
  Eigen::VectorXd sum_ff = Eigen::VectorXd::Zero(features);
  Eigen::VectorXd sum_fy = Eigen::VectorXd::Zero(features);
  Eigen::VectorXi count = Eigen::VectorXi::Zero(features);
  const Eigen::VectorXd y = labels.cast<double>();
  const double mean_y = y.mean();
  const Eigen::VectorXd yc = y.array() - mean_y;
  constexpr Index kChunk = 2048;
  for (Index start = 0; start < z_rows.rows(); start += kChunk) {
    const Index len = std::min(kChunk, z_rows.rows() - start);
    const Eigen::MatrixXd f = sae_encode_rows(m, z_rows.middleRows(start, len)).cast<double>();
    sum_f += f.colwise().sum().transpose();
    sum_ff += f.array().square().colwise().sum().matrix().transpose();
    sum_fy += f.transpose() * yc.segment(start, len);
    count += (f.array() > kActiveThreshold).cast<int>().colwise().sum().matrix().transpose();
  }
  FeatureStats stats;
  stats.active_count = count;
  stats.frequency = count.cast<double>() / n;
  stats.mean_activation = sum_f / n;
  const double var_y = yc.squaredNorm() / n;
  stats.correlation = Eigen::VectorXd::Zero(features);
  for (Index j = 0; j < features; ++j) {
    const double mean_f = stats.mean_activation[j];
    const double var_f = sum_ff[j] / n - mean_f * mean_f;
    // Centered labels make sum_fy the covariance numerator directly.
    if (var_f > 1e-18 && var_y > 0.0) stats.correlation[j] = (sum_fy[j] / n) / std::sqrt(var_f * var_y);
  }
  return stats;
}

bool passes_activity_filter(const FeatureStats& stats, Index feature) {
  return stats.active_count[feature] >= kMinActiveCount && stats.frequency[feature] > kMinActiveFrequency;
}

namespace {

std::vector<Index> top_k(const Eigen::VectorXd& score, std::vector<Index> candidates, std::size_t k) {
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](Index a, Index b) { return score[a] > score[b] || (score[a] == score[b] && a < b); });
  if (candidates.size() > k) candidates.resize(k);
  return candidates;
}

}  // namespace

std::vector<Index> select_by_correlation(const FeatureStats& stats, std::size_t k) {
  require(k >= 1, Errc::InvalidArgument, "k must be >= 1");
  std::vector<Index> survivors;
  for (Index j = 0; j < stats.correlation.size(); ++j) {
    if (passes_activity_filter(stats, j) && stats.correlation[j] > 0.0) survivors.push_back(j);
  }
  return top_k(stats.correlation, std::move(survivors), k);
}

Eigen::VectorXd impact_scores(const SaeModel<float>& m, const FeatureStats& stats, const RidgeModel& ridge,
                              const Eigen::VectorXf& sigma) {
  require(sigma.size() == m.d() && ridge.weights.size() == m.d(), Errc::DimMismatch,
          "sigma and ridge weights must match the SAE input width");
  require(stats.mean_activation.size() == m.features(), Errc::DimMismatch, "stats do not match the SAE");
  // s_j = (d_j * sigma)^T w for all j at once.
  const Eigen::VectorXd scaled_w = sigma.cast<double>().cwiseProduct(ridge.weights);
  const Eigen::VectorXd sensitivity = m.w_dec.cast<double>().transpose() * scaled_w;
  return sensitivity.cwiseProduct(stats.mean_activation);
}

std::vector<Index> select_by_impact(const SaeModel<float>& m, const FeatureStats& stats, const RidgeModel& ridge,
                                    const Eigen::VectorXf& sigma, std::size_t k) {
  require(k >= 1, Errc::InvalidArgument, "k must be >= 1");
  const Eigen::VectorXd magnitude = impact_scores(m, stats, ridge, sigma).cwiseAbs();
  std::vector<Index> all(static_cast<std::size_t>(magnitude.size()));
  std::iota(all.begin(), all.end(), Index{0});
  return top_k(magnitude, std::move(all), k);
}

namespace {

struct ScoredOutcome {
  double accuracy;
  double ece;
};

ScoredOutcome score_outcome(const ActivationDataset& task, const Eigen::VectorXd& scores, int bins) {
  EvalSet ev;
  ev.probs.resize(task.n_questions(), task.n_options);
  for (Index q = 0; q < task.n_questions(); ++q) {
    const Eigen::VectorXd s = scores.segment(q * task.n_options, task.n_options);
    ev.probs.row(q) = softmax_scores(std::span(s.data(), static_cast<std::size_t>(s.size()))).transpose();
    ev.correct.push_back(task.questions[static_cast<std::size_t>(q)].correct);
  }
  return {accuracy(ev), ece(ev, bins)};
}

}  // namespace

AblationSweep ablation_sweep(const SaeModel<float>& m, const ActivationDataset& task, const Readout& readout,
                             const std::vector<Index>& features, int bins) {
  require(task.d_model == m.d(), Errc::DimMismatch, "task width does not match the SAE");
  require(m.normalizer.dim() == m.d(), Errc::DimMismatch, "SAE has no normalizer for its input space");
  require(task.n_questions() >= 1, Errc::EmptyDataset, "ablation task is empty");
  for (Index j : features) {
    require(j >= 0 && j < m.features(), Errc::IndexOutOfRange, "feature " + std::to_string(j) + " out of range");
  }
  const RowMatrixXf z = m.normalizer.apply_rows(task.activations);
  const Matrix<float> codes = sae_encode_rows(m, z);
  const Matrix<float> recon = sae_decode_rows(m, codes);
  Eigen::VectorXd base_scores(task.n_rows());
  for (Index r = 0; r < task.n_rows(); ++r) base_scores[r] = readout(m.normalizer.invert(recon.row(r).transpose()));

  AblationSweep sweep;
  const ScoredOutcome base = score_outcome(task, base_scores, bins);
  sweep.baseline_acc = base.accuracy;
  sweep.baseline_ece = base.ece;
  sweep.impacts.resize(features.size());
  parallel_for(features.size(), [&](std::size_t i) {
    const Index j = features[i];
    Eigen::VectorXd scores = base_scores;
    // Rows where f_j == 0 are unchanged by the ablation.
    for (Index r = 0; r < task.n_rows(); ++r) {
      const float f = codes(r, j);
      if (f == 0.0f) continue;
      const Eigen::VectorXf ablated = recon.row(r).transpose() - f * m.w_dec.col(j);
      scores[r] = readout(m.normalizer.invert(ablated));
    }
    const ScoredOutcome out = score_outcome(task, scores, bins);
    sweep.impacts[i] = {j, out.accuracy - base.accuracy, out.ece - base.ece};
  });
  return sweep;
}

std::vector<std::pair<Index, double>> steering_weights(const std::vector<AblationImpact>& impacts, double alpha_acc,
                                                       double alpha_cal) {
  std::vector<std::pair<Index, double>> weights;
  double total = 0.0;
  for (const auto& imp : impacts) {
    const double w = alpha_acc * std::max(-imp.delta_acc, 0.0) + alpha_cal * std::max(imp.delta_ece, 0.0);
    if (w > 0.0) {
      weights.emplace_back(imp.feature, w);
      total += w;
    }
  }
  require(!weights.empty() && total > 0.0, Errc::NoBeneficialFeatures, "no feature has a positive steering weight");
  for (auto& [feature, w] : weights) w /= total;
  return weights;
}

Eigen::VectorXf apply_sae_steering(const SaeModel<float>& m, const Eigen::VectorXf& h,
                                   const std::vector<std::pair<Index, double>>& weights, double gamma) {
  require(h.size() == m.d(), Errc::DimMismatch, "activation width does not match the SAE");
  if (gamma == 0.0 || weights.empty()) return h;
  const Eigen::VectorXf f = sae_encode<float>(m, m.normalizer.apply(h));
  Eigen::VectorXf perturbation = Eigen::VectorXf::Zero(m.d());
  for (const auto& [feature, w] : weights) {
    require(feature >= 0 && feature < m.features(), Errc::IndexOutOfRange, "steering feature out of range");
    perturbation += (f[feature] * static_cast<float>(w)) * m.w_dec.col(feature);
  }
  return h + static_cast<float>(gamma) * perturbation.cwiseProduct(m.normalizer.std);
}

QuantileSummary summarize(std::vector<double> values) {
  require(!values.empty(), Errc::EmptyInput, "nothing to summarize");
  std::sort(values.begin(), values.end());
  const auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  QuantileSummary s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  s.min = values.front();
  s.max = values.back();
  s.q1 = quantile(0.25);
  s.median = quantile(0.5);
  s.q3 = quantile(0.75);
  return s;
}

namespace {
constexpr const char* kSaeFormat = "SAE1";
}

void save_sae(const fs::path& dir, const SaeModel<float>& m) {
  io::ensure_directory(dir);
  std::vector<float> blob;
  const auto append = [&blob](const auto& tensor) {
    const RowMatrix<float> rows = tensor;
    blob.insert(blob.end(), rows.data(), rows.data() + rows.size());
  };
  append(m.w_enc);
  append(m.b_enc);
  append(m.w_dec);
  append(m.b_dec);
  io::write_f32(dir / "weights.f32", blob);

  nlohmann::ordered_json doc;
  doc["format"] = kSaeFormat;
  doc["d"] = m.d();
  doc["D"] = m.features();
  doc["lambda"] = m.lambda;
  doc["seed"] = m.seed;
  doc["normalizer"] = m.normalizer.to_json();
  doc["tensor_order"] = {"W_enc", "b_enc", "W_dec", "b_dec"};
  doc["checksum"] = io::hex32(io::crc32(std::as_bytes(std::span(blob))));
  io::write_text(dir / "sae.json", doc.dump(2) + "\n");
}

SaeModel<float> load_sae(const fs::path& dir) {
  require(fs::exists(dir / "sae.json"), Errc::MissingFile, (dir / "sae.json").string() + " not found");
  require(fs::exists(dir / "weights.f32"), Errc::MissingFile, (dir / "weights.f32").string() + " not found");
  const auto doc = io::read_json(dir / "sae.json");
  SaeModel<float> m;
  Index d = 0, features = 0;
  std::string checksum;
  try {
    const auto format = doc.at("format").get<std::string>();
    require(format == kSaeFormat, Errc::UnsupportedVersion, "SAE format '" + format + "' is not " + kSaeFormat);
    d = doc.at("d").get<Index>();
    features = doc.at("D").get<Index>();
    m.lambda = doc.at("lambda").get<double>();
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.normalizer = Normalizer::from_json(doc.at("normalizer"));
    checksum = doc.at("checksum").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::CorruptRecord, std::string("sae.json: ") + e.what());
  }
  require(d >= 1 && features >= 1, Errc::CorruptRecord, "SAE widths must be positive");
  const std::vector<float> blob = io::read_f32(dir / "weights.f32");
  const auto expected = static_cast<std::size_t>(2 * d * features + d + features);
  require(blob.size() == expected, Errc::ShapeMismatch, "weights.f32 size does not match SAE dims");
  require(io::hex32(io::crc32(std::as_bytes(std::span(blob)))) == checksum, Errc::ChecksumMismatch,
          "weights.f32 does not match the recorded checksum");
  const float* p = blob.data();
  m.w_enc = Eigen::Map<const RowMatrix<float>>(p, features, d);
  p += features * d;
  m.b_enc = Eigen::Map<const Eigen::VectorXf>(p, features);
  p += features;
  m.w_dec = Eigen::Map<const RowMatrix<float>>(p, d, features);
  p += d * features;
  m.b_dec = Eigen::Map<const Eigen::VectorXf>(p, d);
  return m;
}

std::string impacts_csv(const std::vector<AblationImpact>& impacts) {
  std::string text = "feature,delta_acc,delta_ece\n";
  for (const auto& imp : impacts) {
    text += std::to_string(imp.feature) + "," + io::format_double(imp.delta_acc) + "," +
            io::format_double(imp.delta_ece) + "\n";
  }
  return text;
}

std::vector<AblationImpact> read_impacts_csv(const fs::path& file) {
  std::istringstream lines(io::read_text(file));
  std::string line;
  std::vector<AblationImpact> out;
  std::getline(lines, line);  // header
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    AblationImpact imp;
    char comma1 = 0, comma2 = 0;
    std::istringstream row(line);
    row >> imp.feature >> comma1 >> imp.delta_acc >> comma2 >> imp.delta_ece;
    require(!row.fail() && comma1 == ',' && comma2 == ',', Errc::CorruptRecord, "bad impacts.csv row: " + line);
    out.push_back(imp);
  }
  return out;
}

}  // namespace resteer
