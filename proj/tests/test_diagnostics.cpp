#include <cmath>
#include <set>

#include "doctest.h"
#include "resteer/diagnostics.hpp"
#include "resteer/error.hpp"
#include "resteer/labels.hpp"
#include "resteer/synth.hpp"
#include "test_util.hpp"

using namespace resteer;

namespace {

std::vector<HeadScore> scores_of(std::vector<double> r2) {
  std::vector<HeadScore> out;
  for (std::size_t i = 0; i < r2.size(); ++i) out.push_back({0, static_cast<int>(i), r2[i]});
  return out;
}

/// Rows with a decaying spectrum along a random rotation; `scores` receives
/// the unit-variance coordinates along each true axis.
Eigen::MatrixXd spectral_rows(Index n, Index d, std::uint64_t seed, Eigen::MatrixXd& scores, double lead = 3.0) {
  Rng rng(seed);
  Eigen::MatrixXd g(d, d);
  for (Index i = 0; i < g.size(); ++i) g(i) = rng.normal();
  const Eigen::MatrixXd basis = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
  scores.resize(n, d);
  for (Index i = 0; i < scores.size(); ++i) scores(i) = rng.normal();
  Eigen::VectorXd sd(d);
  for (Index k = 0; k < d; ++k) sd[k] = 3.0 * std::pow(0.97, static_cast<double>(k));
  sd[0] = std::max(sd[0], lead);
  return (scores * sd.asDiagonal()) * basis.transpose();
}

}  // namespace

TEST_CASE("grouped folds are balanced and disjoint") {
  const auto f = grouped_folds(103, 5, 7);
  CHECK(f.size() == 103);
  std::vector<int> counts(5, 0);
  for (int id : f) {
    REQUIRE(id >= 0);
    REQUIRE(id < 5);
    ++counts[static_cast<std::size_t>(id)];
  }
  for (int c : counts) CHECK((c == 20 || c == 21));
  CHECK(grouped_folds(103, 5, 7) == f);
  CHECK(grouped_folds(103, 5, 8) != f);
  CHECK_THROWS_AS(grouped_folds(3, 5, 1), Error);
  CHECK_THROWS_AS(grouped_folds(10, 1, 1), Error);
}

TEST_CASE("cumulative_signal") {
  CHECK(cumulative_signal(scores_of({0.5, 0.3, 0.2}), 0.8) == 2);
  CHECK(cumulative_signal(scores_of({0.2, 0.5, 0.3}), 0.8) == 2);
  CHECK(cumulative_signal(scores_of({0.0, 0.7, -0.2}), 0.5) == 1);
  CHECK(cumulative_signal(scores_of({0.0, 0.7, -0.2}), 1.0) == 1);
  CHECK(cumulative_signal(scores_of({0.1, 0.2, 0.3, -0.5}), 1.0) == 3);
  CHECK_THROWS_AS(cumulative_signal(scores_of({-0.1, 0.0}), 0.8), Error);
  CHECK_THROWS_AS(cumulative_signal(scores_of({0.5}), 0.0), Error);
  CHECK_THROWS_AS(cumulative_signal({}, 0.8), Error);
}

TEST_CASE("pca basics") {
  Rng rng(1);
  Eigen::MatrixXd line(200, 3);
  for (Index i = 0; i < 200; ++i) line.row(i) = rng.normal() * Eigen::RowVector3d(1, 2, -1) + Eigen::RowVector3d(5, 0, 1);
  const auto pl = pca_fit(line, 3);
  CHECK(pl.explained_ratio[0] == doctest::Approx(1.0).epsilon(1e-9));

  Eigen::MatrixXd iso(20000, 2);
  for (Index i = 0; i < iso.size(); ++i) iso(i) = rng.normal();
  const auto pi = pca_fit(iso, 2);
  CHECK(std::abs(pi.explained_ratio[0] - 0.5) < 0.05);
  CHECK(std::abs(pi.explained_ratio[1] - 0.5) < 0.05);

  Eigen::MatrixXd scores;
  const Eigen::MatrixXd x = spectral_rows(300, 12, 2, scores);
  const auto p = pca_fit(x, 12);
  CHECK((p.components.transpose() * p.components - Eigen::MatrixXd::Identity(12, 12)).cwiseAbs().maxCoeff() < 1e-5);
  for (Index k = 1; k < 12; ++k) CHECK(p.explained_ratio[k] <= p.explained_ratio[k - 1]);
  CHECK((p.reconstruct(p.project(x, 12)) - x).cwiseAbs().maxCoeff() < 1e-4);
  // Sign convention: the largest-magnitude entry of each component is positive.
  for (Index k = 0; k < 12; ++k) {
    Index at = 0;
    p.components.col(k).cwiseAbs().maxCoeff(&at);
    CHECK(p.components(at, k) > 0.0);
  }
  CHECK_THROWS_AS(pca_fit(x.topRows(1), 1), Error);
}

TEST_CASE("dimensionality curve shapes") {
  Eigen::MatrixXd lead_scores;
  const Eigen::MatrixXd lead = spectral_rows(2000, 60, 3, lead_scores, 10.0);
  Eigen::MatrixXd scores;
  const Eigen::MatrixXd x = spectral_rows(2000, 60, 3, scores);
  Rng rng(4);
  Eigen::VectorXd noise(2000);
  for (Index i = 0; i < 2000; ++i) noise[i] = rng.normal(0.0, 0.3);

  const Eigen::VectorXd first = lead_scores.col(0) + noise;
  const auto c1 = dimensionality_curve(lead, first, 4, {1, 5, 20}, 1.0, 5, 1);
  CHECK(c1.r2[0] > 0.85);
  CHECK(std::abs(c1.r2[2] - c1.r2[0]) < 0.02);

  const Eigen::VectorXd spread = scores.leftCols(50).rowwise().sum() / std::sqrt(50.0) + noise;
  const auto c50 = dimensionality_curve(x, spread, 4, {1, 5, 50}, 1.0, 5, 1);
  CHECK(c50.r2[1] < 0.6 * c50.r2[2]);
  CHECK(c50.r2[2] > 0.8);
  CHECK(c50.cumulative_variance[2] > c50.cumulative_variance[1]);

  Eigen::VectorXd unrelated(2000);
  for (Index i = 0; i < 2000; ++i) unrelated[i] = rng.normal();
  const auto c0 = dimensionality_curve(x, unrelated, 4, {1, 10}, 1.0, 5, 1);
  for (double r : c0.r2) CHECK(std::abs(r) < 0.05);

  CHECK_THROWS_AS(dimensionality_curve(x, first, 4, {61}, 1.0, 5, 1), Error);
  CHECK(dimcurve_csv(c0).rfind("k,r2,cum_var\n", 0) == 0);
}

TEST_CASE("head probes find planted signal and ignore noise") {
  const Index questions = 500;
  const int options = 4;
  Rng rng(5);
  Eigen::VectorXf labels(questions * options);
  for (Index i = 0; i < labels.size(); ++i) labels[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  HeadActivationSet hs;
  hs.n_options = options;
  hs.d_head = 6;
  for (int h = 0; h < 2; ++h) {
    HeadActivations a;
    a.layer = 3;
    a.head = h;
    a.rows.resize(labels.size(), 6);
    for (Index i = 0; i < a.rows.size(); ++i) a.rows(i) = static_cast<float>(rng.normal());
    if (h == 1) a.rows.col(0) = labels;
    hs.heads.push_back(std::move(a));
  }
  TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.max_epochs = 30;
  cfg.early_stop_patience = 5;
  cfg.batch_size = 128;
  const std::vector<int> hidden{32, 16};
  const auto s = probe_heads(hs, labels, 3, hidden, cfg, 11);
  REQUIRE(s.size() == 2);
  CHECK(s[0].r2 < 0.05);
  CHECK(s[1].r2 > 0.9);
  CHECK(s[1].head == 1);
  CHECK(s[1].layer == 3);
  const auto again = probe_heads(hs, labels, 3, hidden, cfg, 11);
  CHECK(again[0].r2 == s[0].r2);
  CHECK(again[1].r2 == s[1].r2);
  CHECK(heads_csv(s).rfind("layer,head,r2\n", 0) == 0);
  CHECK_THROWS_AS(probe_heads(hs, labels.head(10), 3, hidden, cfg, 11), Error);
}

TEST_CASE("head set from tagged datasets") {
  auto a = resteer::testing::random_dataset(5, 4, 3, 1);
  auto b = resteer::testing::random_dataset(5, 4, 3, 2);
  b.questions = a.questions;
  a.source_tag = "model;layer=4;head=0";
  b.source_tag = "model;layer=4;head=1";
  const auto hs = head_set_from_datasets({a, b});
  CHECK(hs.heads.size() == 2);
  CHECK(hs.heads[1].head == 1);
  CHECK(hs.heads[0].layer == 4);
  CHECK(hs.n_rows() == 20);
  b.source_tag = "model;layer=4";
  CHECK_THROWS_AS(head_set_from_datasets({a, b}), Error);
}

TEST_CASE("layer sweep report") {
  SynthConfig cfg;
  cfg.n_questions = 40;
  cfg.d_model = 8;
  cfg.signal_dims = 2;
  const auto layers = gen_layered_task(cfg, 3, 1);
  std::vector<LayerProbe> probes;
  for (const auto& l : layers) {
    LayerProbe lp{init_probe<float>(8, {4}, 0.0, 1), fit_normalizer(l)};
    for (auto& w : lp.probe.weights) w.setZero();
    for (auto& bias : lp.probe.biases) bias.setZero();
    probes.push_back(lp);
  }
  const auto rows = layer_sweep_report(layers, probes, 1.0);
  CHECK(rows.size() == 3);
  for (const auto& r : rows) {
    CHECK(r.accuracy == r.base_accuracy);
    CHECK(r.ece == doctest::Approx(r.base_ece));
  }
  CHECK(rows[2].layer == 2);
  CHECK(layers_csv(rows).rfind("layer,acc,ece,base_acc,base_ece\n", 0) == 0);
  probes.pop_back();
  CHECK_THROWS_AS(layer_sweep_report(layers, probes, 1.0), Error);
}
