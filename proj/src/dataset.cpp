#include "resteer/dataset.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "resteer/error.hpp"
#include "resteer/io.hpp"
#include "resteer/random.hpp"

namespace resteer {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kFormat = "ACTV1";
constexpr const char* kDtype = "f32le";

void validate_record(const QuestionRecord& rec, int n_options) {
  const std::string where = "question '" + rec.qid + "'";
  require(rec.correct >= 0 && rec.correct < n_options, Errc::CorruptRecord,
          where + ": correct index " + std::to_string(rec.correct) + " outside [0, " + std::to_string(n_options) + ")");
  require(static_cast<int>(rec.log_scores.size()) == n_options, Errc::CorruptRecord,
          where + ": expected " + std::to_string(n_options) + " log scores");
  require(static_cast<int>(rec.token_counts.size()) == n_options, Errc::CorruptRecord,
          where + ": expected " + std::to_string(n_options) + " token counts");
  for (double s : rec.log_scores) require(std::isfinite(s), Errc::CorruptRecord, where + ": non-finite log score");
  for (int c : rec.token_counts) require(c >= 1, Errc::CorruptRecord, where + ": token count < 1");
}

QuestionRecord parse_record(const std::string& line, std::size_t line_no) {
  const std::string where = "records.jsonl line " + std::to_string(line_no);
  try {
    const json doc = json::parse(line);
    QuestionRecord rec;
    rec.qid = doc.at("qid").get<std::string>();
    rec.correct = doc.at("correct").get<int>();
    rec.log_scores = doc.at("log_scores").get<std::vector<double>>();
    rec.token_counts = doc.at("token_counts").get<std::vector<int>>();
    return rec;
  } catch (const json::exception& e) {
    fail(Errc::CorruptRecord, where + ": " + e.what());
  }
}

}  // namespace

void ActivationDataset::validate() const {
  require(d_model >= 1, Errc::ShapeMismatch, "d_model must be positive");
  require(n_options >= 1, Errc::ShapeMismatch, "n_options must be positive");
  require(activations.rows() == n_rows(), Errc::ShapeMismatch,
          "activation rows " + std::to_string(activations.rows()) + " != n_questions * n_options " +
              std::to_string(n_rows()));
  require(activations.rows() == 0 || activations.cols() == d_model, Errc::ShapeMismatch,
          "activation width " + std::to_string(activations.cols()) + " != d_model " + std::to_string(d_model));
  std::unordered_set<std::string> seen;
  for (const auto& rec : questions) {
    validate_record(rec, n_options);
    require(seen.insert(rec.qid).second, Errc::DuplicateQid, "duplicate qid '" + rec.qid + "'");
  }
}

ActivationDataset ActivationDataset::subset(const std::vector<Index>& question_indices) const {
  ActivationDataset out;
  out.d_model = d_model;
  out.n_options = n_options;
  out.layer_id = layer_id;
  out.source_tag = source_tag;
  out.questions.reserve(question_indices.size());
  out.activations.resize(static_cast<Index>(question_indices.size()) * n_options, d_model);
  Index dst = 0;
  for (Index q : question_indices) {
    require(q >= 0 && q < n_questions(), Errc::IndexOutOfRange, "question index out of range");
    out.questions.push_back(questions[static_cast<std::size_t>(q)]);
    out.activations.middleRows(dst * n_options, n_options) = option_rows(q);
    ++dst;
  }
  return out;
}

std::string fingerprint(const ActivationDataset& ds) {
  const auto blob = std::as_bytes(std::span(ds.activations.data(), static_cast<std::size_t>(ds.activations.size())));
  std::uint32_t crc = io::crc32(blob);
  for (const auto& rec : ds.questions) {
    crc = io::crc32(std::as_bytes(std::span(rec.qid.data(), rec.qid.size())), crc);
  }
  std::ostringstream ss;
  ss << "crc32:" << io::hex32(crc) << ";q=" << ds.n_questions() << ";n=" << ds.n_options << ";d=" << ds.d_model;
  return ss.str();
}

ActivationDataset load_dataset(const fs::path& dir) {
  for (const char* name : {"manifest.json", "activations.f32", "records.jsonl"}) {
    require(fs::exists(dir / name), Errc::MissingFile, (dir / name).string() + " not found");
  }
  const json manifest = io::read_json(dir / "manifest.json");
  ActivationDataset ds;
  Index n_questions = 0;
  try {
    const auto format = manifest.at("format").get<std::string>();
    require(format == kFormat, Errc::UnsupportedVersion, "dataset format '" + format + "' is not " + kFormat);
    const auto dtype = manifest.at("dtype").get<std::string>();
    require(dtype == kDtype, Errc::UnsupportedVersion, "dtype '" + dtype + "' is not " + kDtype);
    ds.d_model = manifest.at("d_model").get<int>();
    ds.n_options = manifest.at("n_options").get<int>();
    n_questions = manifest.at("n_questions").get<Index>();
    ds.layer_id = manifest.at("layer_id").get<int>();
    ds.source_tag = manifest.at("source_tag").get<std::string>();
  } catch (const json::exception& e) {
    fail(Errc::CorruptRecord, "manifest.json: " + std::string(e.what()));
  }
  require(ds.d_model >= 1 && ds.n_options >= 1 && n_questions >= 0, Errc::CorruptRecord,
          "manifest.json: non-positive shape");

  const auto blob_path = dir / "activations.f32";
  const auto expected_bytes = static_cast<std::uintmax_t>(n_questions) * ds.n_options * ds.d_model * sizeof(float);
  const auto actual_bytes = fs::file_size(blob_path);
  require(actual_bytes == expected_bytes, Errc::ShapeMismatch,
          "activations.f32 holds " + std::to_string(actual_bytes) + " bytes, manifest implies " +
              std::to_string(expected_bytes));
  const std::vector<float> values = io::read_f32(blob_path);
  ds.activations = Eigen::Map<const RowMatrixXf>(values.data(), n_questions * ds.n_options, ds.d_model);

  std::istringstream lines(io::read_text(dir / "records.jsonl"));
  std::string line;
  std::size_t line_no = 0;
  std::unordered_set<std::string> seen;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    QuestionRecord rec = parse_record(line, line_no);
    validate_record(rec, ds.n_options);
    require(seen.insert(rec.qid).second, Errc::DuplicateQid, "duplicate qid '" + rec.qid + "'");
    ds.questions.push_back(std::move(rec));
  }
  require(ds.n_questions() == n_questions, Errc::CorruptRecord,
          "records.jsonl has " + std::to_string(ds.n_questions()) + " records, manifest says " +
              std::to_string(n_questions));
  return ds;
}

void save_dataset(const ActivationDataset& ds, const fs::path& dir) {
  ds.validate();
  io::ensure_directory(dir);
  ordered_json manifest;
  manifest["format"] = kFormat;
  manifest["d_model"] = ds.d_model;
  manifest["n_options"] = ds.n_options;
  manifest["n_questions"] = ds.n_questions();
  manifest["layer_id"] = ds.layer_id;
  manifest["source_tag"] = ds.source_tag;
  manifest["dtype"] = kDtype;
  io::write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  io::write_f32(dir / "activations.f32",
                std::span(ds.activations.data(), static_cast<std::size_t>(ds.activations.size())));

  std::string records;
  for (const auto& rec : ds.questions) {
    ordered_json line;
    line["qid"] = rec.qid;
    line["correct"] = rec.correct;
    line["log_scores"] = rec.log_scores;
    line["token_counts"] = rec.token_counts;
    records += line.dump();
    records += '\n';
  }
  io::write_text(dir / "records.jsonl", records);
}

void SplitSpec::validate() const {
  double sum = 0.0;
  for (double f : fractions) {
    require(f >= 0.0 && f <= 1.0, Errc::InvalidArgument, "split fractions must lie in [0, 1]");
    sum += f;
  }
  require(std::abs(sum - 1.0) <= 1e-9, Errc::InvalidArgument, "split fractions must sum to 1");
}

std::array<std::vector<Index>, 3> split_indices(Index n_questions, const SplitSpec& spec) {
  spec.validate();
  require(n_questions >= 1, Errc::EmptyDataset, "cannot split an empty dataset");
  std::vector<Index> order(static_cast<std::size_t>(n_questions));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(spec.seed);
  rng.shuffle(order);

  const auto n = static_cast<double>(n_questions);
  Index n_val = std::min<Index>(static_cast<Index>(std::llround(spec.fractions[1] * n)), n_questions);
  Index n_test = std::min<Index>(static_cast<Index>(std::llround(spec.fractions[2] * n)), n_questions - n_val);
  // Remainder questions go to train.
  const Index n_train = n_questions - n_val - n_test;

  std::array<std::vector<Index>, 3> parts;
  parts[0].assign(order.begin(), order.begin() + n_train);
  parts[1].assign(order.begin() + n_train, order.begin() + n_train + n_val);
  parts[2].assign(order.begin() + n_train + n_val, order.end());
  for (auto& p : parts) std::sort(p.begin(), p.end());
  return parts;
}

DatasetSplits split_grouped(const ActivationDataset& ds, const SplitSpec& spec) {
  require(ds.n_questions() >= 1, Errc::EmptyDataset, "cannot split an empty dataset");
  const auto parts = split_indices(ds.n_questions(), spec);
  return {ds.subset(parts[0]), ds.subset(parts[1]), ds.subset(parts[2])};
}

Eigen::VectorXf Normalizer::apply(const Eigen::Ref<const Eigen::VectorXf>& x) const {
  require(x.size() == dim(), Errc::DimMismatch,
          "vector has " + std::to_string(x.size()) + " dims, normalizer " + std::to_string(dim()));
  return ((x - mean).array() / std.array()).matrix();
}

RowMatrixXf Normalizer::apply_rows(const Eigen::Ref<const RowMatrixXf>& rows) const {
  require(rows.cols() == dim(), Errc::DimMismatch,
          "rows have " + std::to_string(rows.cols()) + " dims, normalizer " + std::to_string(dim()));
  RowMatrixXf out = rows.rowwise() - mean.transpose();
  out.array().rowwise() /= std.transpose().array();
  return out;
}

Eigen::VectorXf Normalizer::invert(const Eigen::Ref<const Eigen::VectorXf>& z) const {
  require(z.size() == dim(), Errc::DimMismatch, "normalizer dimension mismatch");
  return (z.array() * std.array()).matrix() + mean;
}

json Normalizer::to_json() const {
  json doc;
  doc["mean"] = std::vector<float>(mean.data(), mean.data() + mean.size());
  doc["std"] = std::vector<float>(std.data(), std.data() + std.size());
  doc["fitted_on"] = fitted_on;
  return doc;
}

Normalizer Normalizer::from_json(const json& doc) {
  Normalizer n;
  try {
    const auto mean = doc.at("mean").get<std::vector<float>>();
    const auto std = doc.at("std").get<std::vector<float>>();
    require(mean.size() == std.size(), Errc::CorruptRecord, "normalizer mean/std length mismatch");
    n.mean = Eigen::Map<const Eigen::VectorXf>(mean.data(), static_cast<Index>(mean.size()));
    n.std = Eigen::Map<const Eigen::VectorXf>(std.data(), static_cast<Index>(std.size()));
    n.fitted_on = doc.at("fitted_on").get<std::string>();
  } catch (const json::exception& e) {
    fail(Errc::CorruptRecord, std::string("normalizer: ") + e.what());
  }
  return n;
}

Normalizer fit_normalizer(const Eigen::Ref<const RowMatrixXf>& rows, std::string fitted_on) {
  require(rows.rows() >= 2, Errc::TooFewRows, "need at least 2 rows to fit a normalizer");
  // Accumulate in double; population variance.
  const Eigen::MatrixXd x = rows.cast<double>();
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::RowVectorXd var = (x.rowwise() - mean).array().square().colwise().mean();
  Normalizer n;
  n.mean = mean.transpose().cast<float>();
  n.std = var.transpose().array().sqrt().cast<float>().max(kStdFloor).matrix();
  n.fitted_on = std::move(fitted_on);
  return n;
}

Normalizer fit_normalizer(const ActivationDataset& train) {
  require(train.n_rows() >= 2, Errc::TooFewRows, "need at least 2 rows to fit a normalizer");
  return fit_normalizer(train.activations, fingerprint(train));
}

Eigen::VectorXf apply_normalizer(const Normalizer& n, const Eigen::Ref<const Eigen::VectorXf>& x) { return n.apply(x); }

void save_normalizer(const Normalizer& n, const fs::path& file) { io::write_json(file, n.to_json()); }

Normalizer load_normalizer(const fs::path& file) { return Normalizer::from_json(io::read_json(file)); }

ActivationDataset concat_layers(const std::vector<ActivationDataset>& datasets) {
  require(!datasets.empty(), Errc::EmptyInput, "nothing to concatenate");
  const ActivationDataset& first = datasets.front();
  std::unordered_set<int> layers;
  int total_width = 0;
  std::string tag = "concat:layers=";
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    const auto& ds = datasets[i];
    require(ds.n_options == first.n_options, Errc::OptionCountMismatch, "inputs disagree on n_options");
    require(ds.n_questions() == first.n_questions(), Errc::QidOrderMismatch, "inputs disagree on question count");
    for (Index q = 0; q < ds.n_questions(); ++q) {
      const auto& a = ds.questions[static_cast<std::size_t>(q)];
      const auto& b = first.questions[static_cast<std::size_t>(q)];
      require(a.qid == b.qid, Errc::QidOrderMismatch, "qid order differs at position " + std::to_string(q));
      require(a.correct == b.correct && a.log_scores == b.log_scores, Errc::QidOrderMismatch,
              "records for '" + a.qid + "' differ between layers");
    }
    require(layers.insert(ds.layer_id).second, Errc::InvalidArgument,
            "layer " + std::to_string(ds.layer_id) + " given twice");
    total_width += ds.d_model;
    tag += (i ? "," : "") + std::to_string(ds.layer_id);
  }
  ActivationDataset out;
  out.d_model = total_width;
  out.n_options = first.n_options;
  out.layer_id = -1;
  out.source_tag = tag;
  out.questions = first.questions;
  out.activations.resize(first.n_rows(), total_width);
  Index col = 0;
  for (const auto& ds : datasets) {
    out.activations.middleCols(col, ds.d_model) = ds.activations;
    col += ds.d_model;
  }
  return out;
}

}  // namespace resteer
