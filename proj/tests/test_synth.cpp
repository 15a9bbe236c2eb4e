#include <cmath>

#include "doctest.h"
#include "resteer/error.hpp"
#include "resteer/io.hpp"
#include "resteer/labels.hpp"
#include "resteer/metrics.hpp"
#include "resteer/steering.hpp"
#include "resteer/synth.hpp"
#include "test_util.hpp"

using namespace resteer;
using resteer::testing::TempDir;

namespace {

CalibrationReport base_report(const ActivationDataset& ds) {
  EvalSet ev;
  ev.probs = base_probabilities(ds, false);
  for (const auto& q : ds.questions) ev.correct.push_back(q.correct);
  return report(ev);
}

}  // namespace

TEST_CASE("gen_task is deterministic and valid") {
  SynthConfig cfg;
  cfg.n_questions = 50;
  cfg.d_model = 32;
  cfg.signal_dims = 8;
  const auto a = gen_task(cfg);
  const auto b = gen_task(cfg);
  CHECK(a.dataset.activations == b.dataset.activations);
  CHECK(a.dataset.questions == b.dataset.questions);
  CHECK(a.readout == b.readout);
  a.dataset.validate();
  CHECK(a.dataset.n_rows() == 200);
  CHECK(a.readout.norm() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(a.signal_support.size() == 8);
  Index nonzero = 0;
  for (Index c = 0; c < a.readout.size(); ++c) nonzero += a.readout[c] != 0.0f;
  CHECK(nonzero == 8);
  CHECK(std::abs(a.readout.dot(a.nuisance_marker)) < 1e-6);

  cfg.seed = 43;
  CHECK(gen_task(cfg).dataset.activations != a.dataset.activations);
}

TEST_CASE("noiseless construction with unit temperature is always right") {
  SynthConfig cfg;
  cfg.n_questions = 200;
  cfg.noise_scale = 0.0;
  cfg.readout_temperature = 1.0;
  CHECK(base_report(gen_task(cfg).dataset).accuracy == 1.0);
}

TEST_CASE("zero signal gives chance accuracy") {
  SynthConfig cfg;
  cfg.n_questions = 4000;
  cfg.signal_scale = 0.0;
  const double acc = base_report(gen_task(cfg).dataset).accuracy;
  const double sd = std::sqrt(0.25 * 0.75 / 4000.0);
  CHECK(std::abs(acc - 0.25) < 3.0 * sd);
}

TEST_CASE("default task is miscalibrated and in the accuracy band") {
  SynthConfig cfg;
  cfg.n_questions = 2000;
  const auto r = base_report(gen_task(cfg).dataset);
  CHECK(r.accuracy >= 0.55);
  CHECK(r.accuracy <= 0.75);
  CHECK(r.ece > 0.10);
}

TEST_CASE("readout_score") {
  SynthConfig cfg;
  cfg.n_questions = 1;
  cfg.d_model = 16;
  cfg.signal_dims = 4;
  cfg.readout_temperature = 1.0;
  auto task = gen_task(cfg);
  CHECK(readout_score(task, task.readout) == doctest::Approx(1.0));
  CHECK(readout_score(task, task.nuisance_marker) == doctest::Approx(0.0).scale(1.0));
  const Eigen::VectorXf x = Eigen::VectorXf::Random(16);
  const double at_one = readout_score(task, x);
  task.config.readout_temperature = 0.5;
  CHECK(readout_score(task, x) == doctest::Approx(2.0 * at_one));
  CHECK_THROWS_AS(readout_score(task, Eigen::VectorXf::Zero(3)), Error);
  // The stored log scores are the readout plus score noise.
  cfg.noise_scale = 0.0;
  const auto exact = gen_task(cfg);
  for (int j = 0; j < cfg.n_options; ++j) {
    CHECK(exact.dataset.questions[0].log_scores[static_cast<std::size_t>(j)] ==
          doctest::Approx(readout_score(exact, exact.dataset.activations.row(j).transpose())));
  }
}

TEST_CASE("bad configs") {
  SynthConfig cfg;
  cfg.signal_dims = cfg.d_model + 1;
  CHECK_THROWS_AS(gen_task(cfg), Error);
  cfg = SynthConfig{};
  cfg.readout_temperature = 0.0;
  CHECK_THROWS_AS(gen_task(cfg), Error);
  cfg = SynthConfig{};
  cfg.noise_scale = -1.0;
  CHECK_THROWS_AS(gen_task(cfg), Error);
}

TEST_CASE("layered task keeps questions and plants one layer") {
  SynthConfig cfg;
  cfg.n_questions = 20;
  cfg.d_model = 16;
  cfg.signal_dims = 4;
  SynthTask planted;
  const auto layers = gen_layered_task(cfg, 3, 1, &planted);
  CHECK(layers.size() == 3);
  CHECK(layers[1].activations == gen_task(cfg).dataset.activations);
  CHECK(layers[1].source_tag == "synth:seed=42;layer=1;planted");
  CHECK(layers[0].layer_id == 0);
  CHECK(layers[2].layer_id == 2);
  for (const auto& l : layers) CHECK(l.questions == layers[1].questions);
  CHECK(layers[0].activations != layers[2].activations);
  CHECK(planted.dataset.layer_id == 1);
  CHECK_THROWS_AS(gen_layered_task(cfg, 3, 3), Error);
}

TEST_CASE("task files round-trip") {
  TempDir tmp("synth");
  SynthConfig cfg;
  cfg.n_questions = 10;
  cfg.d_model = 12;
  cfg.signal_dims = 3;
  const auto task = gen_task(cfg);
  save_task(task, tmp.path());
  const auto back = load_task(tmp / "task.json", tmp.path());
  CHECK(back.readout == task.readout);
  CHECK(back.nuisance_marker == task.nuisance_marker);
  CHECK(back.signal_support == task.signal_support);
  CHECK(back.config.to_json() == task.config.to_json());
  CHECK(back.dataset.activations == task.dataset.activations);
  const auto doc = io::read_json(tmp / "task.json");
  CHECK(doc["format"] == "SYNTH1");
}
