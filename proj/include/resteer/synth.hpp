#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "resteer/dataset.hpp"

namespace resteer {

/// Synthetic multiple-choice task. Each option vector is isotropic noise plus
/// a per-option nuisance term eta * (u + m); the correct option also gets
/// signal_scale * u. The model's score is u.x / temperature plus a little
/// score noise, so it cannot tell the nuisance from the signal along u,
/// while a probe can read eta off the marker direction m.
struct SynthConfig {
  int n_questions = 4000;
  int n_options = 4;
  int d_model = 256;
  int signal_dims = 64;             // support size of u
  double signal_scale = 2.0;
  double noise_scale = 0.3;         // per-coordinate noise sd
  double nuisance_scale = 6.0;      // nuisance sd, in units of noise_scale
  double score_noise = 0.2;         // score noise sd, in units of noise_scale
  double readout_temperature = 0.5; // < 1 makes base probabilities overconfident
  std::uint64_t seed = 42;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static SynthConfig from_json(const nlohmann::json& doc);
};

struct SynthTask {
  SynthConfig config;
  ActivationDataset dataset;
  Eigen::VectorXf readout;           // u, unit norm
  std::vector<int> signal_support;   // coordinates where u is nonzero
  Eigen::VectorXf nuisance_marker;   // m, unit norm on the complement of the support
};

SynthTask gen_task(const SynthConfig& cfg);

/// Several "layers" over the same questions and base scores; only
/// `planted_layer` carries the construction above, the others are pure noise.
std::vector<ActivationDataset> gen_layered_task(const SynthConfig& cfg, int n_layers, int planted_layer,
                                                SynthTask* planted = nullptr);

/// u.x / temperature.
double readout_score(const SynthTask& task, const Eigen::Ref<const Eigen::VectorXf>& x);

/// Writes the dataset directory plus task.json (config, u, support, m).
void save_task(const SynthTask& task, const std::filesystem::path& dir);
void save_task_json(const SynthTask& task, const std::filesystem::path& file);

/// Reads task.json, plus the dataset when `dataset_dir` is given.
SynthTask load_task(const std::filesystem::path& task_json, const std::filesystem::path& dataset_dir = {});

}  // namespace resteer
