#include "resteer/synth.hpp"

#include <numeric>

#include "resteer/error.hpp"
#include "resteer/io.hpp"
#include "resteer/random.hpp"

namespace resteer {

namespace fs = std::filesystem;

void SynthConfig::validate() const {
  require(n_questions >= 0, Errc::BadConfig, "n_questions must be >= 0");
  require(n_options >= 2, Errc::BadConfig, "n_options must be >= 2");
  require(d_model >= 1, Errc::BadConfig, "d_model must be >= 1");
  require(signal_dims >= 1 && signal_dims <= d_model, Errc::BadConfig, "signal_dims must lie in [1, d_model]");
  require(signal_scale >= 0.0 && noise_scale >= 0.0 && nuisance_scale >= 0.0 && score_noise >= 0.0, Errc::BadConfig,
          "scales must be >= 0");
  require(readout_temperature > 0.0, Errc::BadConfig, "readout_temperature must be > 0");
}

nlohmann::ordered_json SynthConfig::to_json() const {
  nlohmann::ordered_json doc;
  doc["n_questions"] = n_questions;
  doc["n_options"] = n_options;
  doc["d_model"] = d_model;
  doc["signal_dims"] = signal_dims;
  doc["signal_scale"] = signal_scale;
  doc["noise_scale"] = noise_scale;
  doc["nuisance_scale"] = nuisance_scale;
  doc["score_noise"] = score_noise;
  doc["readout_temperature"] = readout_temperature;
  doc["seed"] = seed;
  return doc;
}

SynthConfig SynthConfig::from_json(const nlohmann::json& doc) {
  SynthConfig cfg;
  try {
    cfg.n_questions = doc.at("n_questions").get<int>();
    cfg.n_options = doc.at("n_options").get<int>();
    cfg.d_model = doc.at("d_model").get<int>();
    cfg.signal_dims = doc.at("signal_dims").get<int>();
    cfg.signal_scale = doc.at("signal_scale").get<double>();
    cfg.noise_scale = doc.at("noise_scale").get<double>();
    cfg.nuisance_scale = doc.at("nuisance_scale").get<double>();
    cfg.score_noise = doc.at("score_noise").get<double>();
    cfg.readout_temperature = doc.at("readout_temperature").get<double>();
    cfg.seed = doc.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::CorruptRecord, std::string("synth config: ") + e.what());
  }
  return cfg;
}

namespace {

Eigen::VectorXf random_unit_on(const std::vector<int>& coords, int d, Rng& rng) {
  Eigen::VectorXf v = Eigen::VectorXf::Zero(d);
  for (int c : coords) v[c] = static_cast<float>(rng.normal());
  const float norm = v.norm();
  if (norm > 0.0f) v /= norm;
  return v;
}

std::string synth_qid(int q) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth-%06d", q);
  return buf;
}

}  // namespace

SynthTask gen_task(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SynthTask task;
  task.config = cfg;

  std::vector<int> coords(static_cast<std::size_t>(cfg.d_model));
  std::iota(coords.begin(), coords.end(), 0);
  rng.shuffle(coords);
  task.signal_support.assign(coords.begin(), coords.begin() + cfg.signal_dims);
  std::vector<int> complement(coords.begin() + cfg.signal_dims, coords.end());
  std::sort(task.signal_support.begin(), task.signal_support.end());
  std::sort(complement.begin(), complement.end());
  task.readout = random_unit_on(task.signal_support, cfg.d_model, rng);
  task.nuisance_marker = random_unit_on(complement, cfg.d_model, rng);
  const Eigen::VectorXf nuisance_dir = task.readout + task.nuisance_marker;

  ActivationDataset& ds = task.dataset;
  ds.d_model = cfg.d_model;
  ds.n_options = cfg.n_options;
  ds.layer_id = 0;
  ds.source_tag = "synth:seed=" + std::to_string(cfg.seed);
  ds.activations.resize(static_cast<Index>(cfg.n_questions) * cfg.n_options, cfg.d_model);
  const double nuisance_sd = cfg.nuisance_scale * cfg.noise_scale;
  const double score_sd = cfg.score_noise * cfg.noise_scale;
  Eigen::VectorXf x(cfg.d_model);
  for (int q = 0; q < cfg.n_questions; ++q) {
    QuestionRecord rec;
    rec.qid = synth_qid(q);
    rec.correct = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_options)));
    for (int j = 0; j < cfg.n_options; ++j) {
      for (int c = 0; c < cfg.d_model; ++c) x[c] = static_cast<float>(rng.normal(0.0, cfg.noise_scale));
      x += static_cast<float>(rng.normal(0.0, nuisance_sd)) * nuisance_dir;
      if (j == rec.correct) x += static_cast<float>(cfg.signal_scale) * task.readout;
      ds.activations.row(static_cast<Index>(q) * cfg.n_options + j) = x.transpose();
      rec.log_scores.push_back(static_cast<double>(task.readout.dot(x)) / cfg.readout_temperature +
                               rng.normal(0.0, score_sd));
      rec.token_counts.push_back(1 + static_cast<int>(rng.below(4)));
    }
    ds.questions.push_back(std::move(rec));
  }
  return task;
}

std::vector<ActivationDataset> gen_layered_task(const SynthConfig& cfg, int n_layers, int planted_layer,
                                                SynthTask* planted) {
  require(n_layers >= 1, Errc::BadConfig, "need at least one layer");
  require(planted_layer >= 0 && planted_layer < n_layers, Errc::BadConfig, "planted layer out of range");
  SynthTask task = gen_task(cfg);
  std::vector<ActivationDataset> layers;
  for (int l = 0; l < n_layers; ++l) {
    ActivationDataset ds;
    if (l == planted_layer) {
      ds = task.dataset;
    } else {
      ds = task.dataset;
      Rng rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(l + 1)));
      for (Index r = 0; r < ds.activations.rows(); ++r)
        for (Index c = 0; c < ds.activations.cols(); ++c)
          ds.activations(r, c) = static_cast<float>(rng.normal(0.0, cfg.noise_scale));
    }
    ds.layer_id = l;
    ds.source_tag = "synth:seed=" + std::to_string(cfg.seed) + ";layer=" + std::to_string(l) +
                    (l == planted_layer ? ";planted" : "");
    layers.push_back(std::move(ds));
  }
  task.dataset.layer_id = planted_layer;
  if (planted) *planted = std::move(task);
  return layers;
}

double readout_score(const SynthTask& task, const Eigen::Ref<const Eigen::VectorXf>& x) {
  require(x.size() == task.readout.size(), Errc::DimMismatch, "readout width mismatch");
  return static_cast<double>(task.readout.dot(x)) / task.config.readout_temperature;
}

void save_task_json(const SynthTask& task, const fs::path& file) {
  nlohmann::ordered_json doc;
  doc["format"] = "SYNTH1";
  doc["config"] = task.config.to_json();
  doc["readout"] = std::vector<float>(task.readout.data(), task.readout.data() + task.readout.size());
  doc["signal_support"] = task.signal_support;
  doc["nuisance_marker"] =
      std::vector<float>(task.nuisance_marker.data(), task.nuisance_marker.data() + task.nuisance_marker.size());
  io::write_text(file, doc.dump(2) + "\n");
}

void save_task(const SynthTask& task, const fs::path& dir) {
  save_dataset(task.dataset, dir);
  save_task_json(task, dir / "task.json");
}

SynthTask load_task(const fs::path& task_json, const fs::path& dataset_dir) {
  const auto doc = io::read_json(task_json);
  SynthTask task;
  try {
    require(doc.at("format").get<std::string>() == "SYNTH1", Errc::UnsupportedVersion, "task.json is not SYNTH1");
    task.config = SynthConfig::from_json(doc.at("config"));
    const auto u = doc.at("readout").get<std::vector<float>>();
    const auto m = doc.at("nuisance_marker").get<std::vector<float>>();
    task.readout = Eigen::Map<const Eigen::VectorXf>(u.data(), static_cast<Index>(u.size()));
    task.nuisance_marker = Eigen::Map<const Eigen::VectorXf>(m.data(), static_cast<Index>(m.size()));
    task.signal_support = doc.at("signal_support").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::CorruptRecord, std::string("task.json: ") + e.what());
  }
  if (!dataset_dir.empty()) {
    task.dataset = load_dataset(dataset_dir);
    require(task.dataset.d_model == task.readout.size(), Errc::DimMismatch, "task readout does not match dataset");
  }
  return task;
}

}  // namespace resteer
