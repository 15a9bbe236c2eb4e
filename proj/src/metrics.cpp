#include "resteer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "resteer/error.hpp"
#include "resteer/io.hpp"

namespace resteer {

namespace {

void check_eval_set(const EvalSet& ev) {
  require(ev.size() >= 1, Errc::EmptyInput, "evaluation set is empty");
  require(static_cast<Index>(ev.correct.size()) == ev.size(), Errc::LengthMismatch,
          "probs and correct indices differ in length");
  for (int c : ev.correct) {
    require(c >= 0 && c < ev.n_options(), Errc::IndexOutOfRange, "correct index out of range");
  }
}

struct BinAccumulator {
  std::vector<Index> count;
  std::vector<double> conf_sum;
  std::vector<double> hit_sum;

  explicit BinAccumulator(int bins) : count(bins, 0), conf_sum(bins, 0.0), hit_sum(bins, 0.0) {}

  void add(double conf, double hit, int bins) {
    const int b = bin_index(conf, bins);
    ++count[b];
    conf_sum[b] += conf;
    hit_sum[b] += hit;
  }

  double gap(Index n) const {
    double total = 0.0;
    for (std::size_t b = 0; b < count.size(); ++b) {
      if (count[b] == 0) continue;
      const double c = static_cast<double>(count[b]);
      total += (c / static_cast<double>(n)) * std::abs(hit_sum[b] / c - conf_sum[b] / c);
    }
    return total;
  }
};

}  // namespace

Index argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& probs) {
  Index best = 0;
  for (Index j = 1; j < probs.size(); ++j) {
    if (probs[j] > probs[best]) best = j;
  }
  return best;
}

int bin_index(double value, int bins) {
  require(bins >= 1, Errc::InvalidArgument, "bin count must be >= 1");
  if (!(value > 0.0)) return 0;
  if (value >= 1.0) return bins - 1;
  // floor(value * B) can land one off the exact edge b / B; correct it so the
  // edges are exactly the doubles b / B.
  int b = static_cast<int>(value * bins);
  if (b > 0 && value < static_cast<double>(b) / bins) --b;
  if (b + 1 < bins && value >= static_cast<double>(b + 1) / bins) ++b;
  return std::clamp(b, 0, bins - 1);
}

double accuracy(const EvalSet& ev) {
  check_eval_set(ev);
  Index hits = 0;
  for (Index i = 0; i < ev.size(); ++i) {
    if (argmax_lowest(ev.probs.row(i)) == ev.correct[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ev.size());
}

double ece(const EvalSet& ev, int bins) {
  check_eval_set(ev);
  BinAccumulator acc(bins);
  for (Index i = 0; i < ev.size(); ++i) {
    const Index pred = argmax_lowest(ev.probs.row(i));
    const double hit = pred == ev.correct[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    acc.add(ev.probs(i, pred), hit, bins);
  }
  return acc.gap(ev.size());
}

double cwece(const EvalSet& ev, int bins) {
  check_eval_set(ev);
  double total = 0.0;
  for (Index c = 0; c < ev.n_options(); ++c) {
    BinAccumulator acc(bins);
    for (Index i = 0; i < ev.size(); ++i) {
      acc.add(ev.probs(i, c), ev.correct[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0, bins);
    }
    total += acc.gap(ev.size());
  }
  return total / static_cast<double>(ev.n_options());
}

double brier(const EvalSet& ev) {
  check_eval_set(ev);
  double total = 0.0;
  for (Index i = 0; i < ev.size(); ++i) {
    for (Index j = 0; j < ev.n_options(); ++j) {
      const double target = ev.correct[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0;
      const double diff = ev.probs(i, j) - target;
      total += diff * diff;
    }
  }
  return total / static_cast<double>(ev.size());
}

double nll(const EvalSet& ev, Index* floored) {
  check_eval_set(ev);
  double total = 0.0;
  Index hits = 0;
  for (Index i = 0; i < ev.size(); ++i) {
    double p = ev.probs(i, ev.correct[static_cast<std::size_t>(i)]);
    if (p < kNllFloor) {
      p = kNllFloor;
      ++hits;
    }
    total -= std::log(p);
  }
  if (floored) *floored = hits;
  return total / static_cast<double>(ev.size());
}

std::vector<ReliabilityBin> reliability_bins(const EvalSet& ev, int bins) {
  check_eval_set(ev);
  BinAccumulator acc(bins);
  for (Index i = 0; i < ev.size(); ++i) {
    const Index pred = argmax_lowest(ev.probs.row(i));
    acc.add(ev.probs(i, pred), pred == ev.correct[static_cast<std::size_t>(i)] ? 1.0 : 0.0, bins);
  }
  std::vector<ReliabilityBin> out(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    auto& bin = out[static_cast<std::size_t>(b)];
    bin.lo = static_cast<double>(b) / bins;
    bin.hi = static_cast<double>(b + 1) / bins;
    bin.count = acc.count[static_cast<std::size_t>(b)];
    if (bin.count > 0) {
      bin.mean_conf = acc.conf_sum[static_cast<std::size_t>(b)] / static_cast<double>(bin.count);
      bin.accuracy = acc.hit_sum[static_cast<std::size_t>(b)] / static_cast<double>(bin.count);
    }
  }
  return out;
}

CalibrationReport report(const EvalSet& ev, int bins) {
  CalibrationReport rep;
  rep.accuracy = accuracy(ev);
  rep.ece = ece(ev, bins);
  rep.cwece = cwece(ev, bins);
  rep.brier = brier(ev);
  rep.nll = nll(ev, &rep.nll_floored);
  rep.bin_count = bins;
  rep.bins = reliability_bins(ev, bins);
  return rep;
}

ReportScale parse_report_scale(const std::string& text) {
  if (text == "raw") return ReportScale::Raw;
  if (text == "x100") return ReportScale::X100;
  if (text == "both") return ReportScale::Both;
  fail(Errc::InvalidArgument, "report scale must be raw, x100 or both (got '" + text + "')");
}

nlohmann::ordered_json report_to_json(const CalibrationReport& rep, ReportScale scale) {
  const auto metrics = [&](double factor) {
    nlohmann::ordered_json m;
    m["accuracy"] = rep.accuracy * factor;
    m["ece"] = rep.ece * factor;
    m["cwece"] = rep.cwece * factor;
    m["brier"] = rep.brier * factor;
    m["nll"] = rep.nll * factor;
    return m;
  };
  nlohmann::ordered_json doc;
  if (scale != ReportScale::X100) doc["raw"] = metrics(1.0);
  if (scale != ReportScale::Raw) doc["x100"] = metrics(100.0);
  doc["bins"] = rep.bin_count;
  doc["nll_floored"] = rep.nll_floored;
  auto& table = doc["reliability"] = nlohmann::ordered_json::array();
  for (const auto& bin : rep.bins) {
    table.push_back({{"bin_low", bin.lo}, {"bin_high", bin.hi}, {"count", bin.count}, {"mean_conf", bin.mean_conf},
                     {"acc", bin.accuracy}});
  }
  return doc;
}

void write_reliability_csv(const CalibrationReport& rep, const std::filesystem::path& file) {
  std::string text = "bin_low,bin_high,count,mean_conf,acc\n";
  for (const auto& bin : rep.bins) {
    text += io::format_double(bin.lo) + "," + io::format_double(bin.hi) + "," + std::to_string(bin.count) + "," +
            io::format_double(bin.mean_conf) + "," + io::format_double(bin.accuracy) + "\n";
  }
  io::write_text(file, text);
}

}  // namespace resteer
