#pragma once

#include <filesystem>
#include <vector>

#include "json.hpp"
#include "resteer/types.hpp"

namespace resteer {

inline constexpr int kDefaultBins = 25;
inline constexpr double kNllFloor = 1e-12;

/// Predicted option distributions (one row per question) with gold indices.
struct EvalSet {
  Eigen::MatrixXd probs;
  std::vector<int> correct;

  Index size() const { return probs.rows(); }
  Index n_options() const { return probs.cols(); }
};

struct ReliabilityBin {
  double lo = 0.0;
  double hi = 0.0;
  Index count = 0;
  double mean_conf = 0.0;
  double accuracy = 0.0;
};

struct CalibrationReport {
  double accuracy = 0.0;
  double ece = 0.0;
  double cwece = 0.0;
  double brier = 0.0;
  double nll = 0.0;
  Index nll_floored = 0;  // questions whose gold probability hit the floor
  int bin_count = kDefaultBins;
  std::vector<ReliabilityBin> bins;
};

/// Index of the largest entry; ties go to the lowest index.
Index argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& probs);

/// Equal-width bin of a value in [0, 1]: [b/B, (b+1)/B), last bin closed.
int bin_index(double value, int bins);

double accuracy(const EvalSet& ev);
double ece(const EvalSet& ev, int bins = kDefaultBins);
double cwece(const EvalSet& ev, int bins = kDefaultBins);
double brier(const EvalSet& ev);
double nll(const EvalSet& ev, Index* floored = nullptr);
std::vector<ReliabilityBin> reliability_bins(const EvalSet& ev, int bins = kDefaultBins);

CalibrationReport report(const EvalSet& ev, int bins = kDefaultBins);

enum class ReportScale { Raw, X100, Both };
ReportScale parse_report_scale(const std::string& text);

nlohmann::ordered_json report_to_json(const CalibrationReport& rep, ReportScale scale = ReportScale::Both);
void write_reliability_csv(const CalibrationReport& rep, const std::filesystem::path& file);

}  // namespace resteer
