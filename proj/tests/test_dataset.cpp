#include <fstream>
#include <set>

#include "doctest.h"
#include "resteer/dataset.hpp"
#include "resteer/error.hpp"
#include "resteer/io.hpp"
#include "test_util.hpp"

using namespace resteer;
using resteer::testing::random_dataset;
using resteer::testing::TempDir;

namespace {

Errc code_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return Errc::InvalidArgument;
}

bool bit_equal(const RowMatrixXf& a, const RowMatrixXf& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("save/load round-trips a small fixture") {
  TempDir tmp("ds");
  const auto ds = random_dataset(2, 4, 8, 1);
  save_dataset(ds, tmp.path());
  const auto back = load_dataset(tmp.path());
  CHECK(back.n_rows() == 8);
  CHECK(back.d_model == 8);
  CHECK(back.questions == ds.questions);
  CHECK(bit_equal(back.activations, ds.activations));
  CHECK(back.source_tag == ds.source_tag);
  CHECK(std::filesystem::file_size(tmp / "activations.f32") == 4u * 8 * 8);
}

TEST_CASE("round-trip is bit-exact on awkward values") {
  TempDir tmp("ds");
  auto ds = random_dataset(5, 3, 7, 99);
  ds.activations(0, 0) = -0.0f;
  ds.activations(1, 1) = std::numeric_limits<float>::denorm_min();
  ds.activations(2, 2) = std::numeric_limits<float>::max();
  ds.questions[0].log_scores[0] = -1e-300;
  ds.questions[1].log_scores[1] = 0.1 + 0.2;
  save_dataset(ds, tmp.path());
  const auto back = load_dataset(tmp.path());
  CHECK(bit_equal(back.activations, ds.activations));
  CHECK(back.questions == ds.questions);
}

TEST_CASE("empty dataset and the 16-byte blob") {
  TempDir tmp("ds");
  ActivationDataset empty;
  empty.d_model = 3;
  empty.n_options = 4;
  save_dataset(empty, tmp / "empty");
  const auto back = load_dataset(tmp / "empty");
  CHECK(back.n_questions() == 0);
  CHECK(std::filesystem::file_size(tmp / "empty" / "activations.f32") == 0);

  const auto one = random_dataset(1, 4, 1, 3);
  save_dataset(one, tmp / "one");
  CHECK(std::filesystem::file_size(tmp / "one" / "activations.f32") == 16);
}

TEST_CASE("load errors") {
  TempDir tmp("ds");
  const auto ds = random_dataset(2, 4, 8, 1);
  save_dataset(ds, tmp.path());

  SUBCASE("missing file") {
    std::filesystem::remove(tmp / "records.jsonl");
    CHECK(code_of([&] { load_dataset(tmp.path()); }) == Errc::MissingFile);
  }
  SUBCASE("truncated blob") {
    std::filesystem::resize_file(tmp / "activations.f32", 4u * 8 * 8 - 4);
    CHECK(code_of([&] { load_dataset(tmp.path()); }) == Errc::ShapeMismatch);
  }
  SUBCASE("correct index out of range") {
    auto bad = ds;
    bad.questions[1].correct = 4;
    std::string text = io::read_text(tmp / "records.jsonl");
    const auto pos = text.find("\"correct\":" + std::to_string(ds.questions[1].correct), text.find('\n'));
    text.replace(pos, 11, "\"correct\":4");
    io::write_text(tmp / "records.jsonl", text);
    CHECK(code_of([&] { load_dataset(tmp.path()); }) == Errc::CorruptRecord);
  }
  SUBCASE("bad json line") {
    io::write_text(tmp / "records.jsonl", "{\"qid\": \"q0\"\n{}\n");
    CHECK(code_of([&] { load_dataset(tmp.path()); }) == Errc::CorruptRecord);
  }
  SUBCASE("duplicate qid") {
    auto dup = ds;
    dup.questions[1].qid = dup.questions[0].qid;
    CHECK(code_of([&] { dup.validate(); }) == Errc::DuplicateQid);
    std::string text = io::read_text(tmp / "records.jsonl");
    const auto first_end = text.find('\n');
    const std::string line0 = text.substr(0, first_end + 1);
    io::write_text(tmp / "records.jsonl", line0 + line0);
    CHECK(code_of([&] { load_dataset(tmp.path()); }) == Errc::DuplicateQid);
  }
}

TEST_CASE("split_grouped sizes and determinism") {
  const auto ds = random_dataset(10, 4, 3, 5);
  SplitSpec spec{{0.8, 0.2, 0.0}, 7};
  const auto a = split_grouped(ds, spec);
  const auto b = split_grouped(ds, spec);
  CHECK(a.train.n_questions() == 8);
  CHECK(a.val.n_questions() == 2);
  CHECK(a.test.n_questions() == 0);
  CHECK(a.train.questions == b.train.questions);
  CHECK(a.val.questions == b.val.questions);

  const auto all = split_grouped(ds, {{1.0, 0.0, 0.0}, 3});
  CHECK(all.train.n_questions() == 10);
  CHECK(all.train.questions == ds.questions);

  ActivationDataset empty;
  empty.d_model = 1;
  empty.n_options = 4;
  CHECK(code_of([&] { split_grouped(empty, spec); }) == Errc::EmptyDataset);
  CHECK(code_of([&] { split_grouped(ds, {{0.5, 0.2, 0.2}, 1}); }) == Errc::InvalidArgument);
}

TEST_CASE("split_grouped partitions questions exhaustively") {
  const auto ds = random_dataset(14, 4, 2, 11);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = split_grouped(ds, {{0.6, 0.2, 0.2}, seed});
    const auto tr = s.train.n_questions();
    CHECK((tr == 8 || tr == 9));
    CHECK(s.val.n_questions() == 3);
    CHECK(s.test.n_questions() == 3);
    std::multiset<std::string> seen;
    for (const auto* part : {&s.train, &s.val, &s.test}) {
      for (Index q = 0; q < part->n_questions(); ++q) {
        seen.insert(part->questions[static_cast<std::size_t>(q)].qid);
        // Rows travel with their question.
        const auto& qid = part->questions[static_cast<std::size_t>(q)].qid;
        const Index src = std::stoi(qid.substr(1));
        CHECK(part->option_rows(q) == ds.option_rows(src));
      }
    }
    CHECK(seen.size() == 14);
    CHECK(std::set<std::string>(seen.begin(), seen.end()).size() == 14);
  }
}

TEST_CASE("fit_normalizer closed forms") {
  RowMatrixXf rows(2, 1);
  rows << 0.0f, 2.0f;
  auto n = fit_normalizer(rows, "x");
  CHECK(n.mean[0] == doctest::Approx(1.0));
  CHECK(n.std[0] == doctest::Approx(1.0));

  RowMatrixXf sym(4, 1);
  sym << -1, 1, -1, 1;
  n = fit_normalizer(sym, "x");
  CHECK(n.mean[0] == doctest::Approx(0.0));
  CHECK(n.std[0] == doctest::Approx(1.0));

  RowMatrixXf same(5, 3);
  same.rowwise() = Eigen::RowVector3f(1.5f, -2.0f, 0.25f);
  n = fit_normalizer(same, "x");
  CHECK(n.mean.isApprox(Eigen::Vector3f(1.5f, -2.0f, 0.25f)));
  CHECK((n.std.array() == kStdFloor).all());

  RowMatrixXf single(1, 3);
  single.setOnes();
  CHECK(code_of([&] { fit_normalizer(single, "x"); }) == Errc::TooFewRows);
}

TEST_CASE("apply_normalizer") {
  Normalizer n;
  n.mean = Eigen::VectorXf::Constant(1, 1.0f);
  n.std = Eigen::VectorXf::Constant(1, 2.0f);
  CHECK(apply_normalizer(n, Eigen::VectorXf::Constant(1, 3.0f))[0] == doctest::Approx(1.0));
  CHECK(apply_normalizer(n, n.mean).isZero());

  Normalizer id;
  id.mean = Eigen::VectorXf::Zero(3);
  id.std = Eigen::VectorXf::Ones(3);
  const Eigen::Vector3f x(0.5f, -1.0f, 7.0f);
  CHECK(apply_normalizer(id, x) == x);
  CHECK(code_of([&] { apply_normalizer(id, Eigen::VectorXf::Zero(2)); }) == Errc::DimMismatch);
}

TEST_CASE("normalization property on the fitting set") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto ds = random_dataset(40, 4, 16, seed);
    ds.activations.col(3).setConstant(2.0f);  // dead dimension
    ds.activations.col(5) = ds.activations.col(5) * 30.0f + RowMatrixXf::Constant(ds.n_rows(), 1, 5.0f);
    const auto n = fit_normalizer(ds);
    CHECK(n.fitted_on == fingerprint(ds));
    const Eigen::MatrixXd z = n.apply_rows(ds.activations).cast<double>();
    for (Index c = 0; c < z.cols(); ++c) {
      const double mean = z.col(c).mean();
      CHECK(std::abs(mean) < 1e-5);
      if (c == 3) continue;
      const double sd = std::sqrt((z.col(c).array() - mean).square().mean());
      CHECK(sd == doctest::Approx(1.0).epsilon(1e-4));
    }
  }
}

TEST_CASE("normalizer file round-trip is exact") {
  TempDir tmp("norm");
  const auto n = fit_normalizer(random_dataset(20, 4, 9, 4));
  save_normalizer(n, tmp / "norm.json");
  const auto back = load_normalizer(tmp / "norm.json");
  CHECK(back.mean == n.mean);
  CHECK(back.std == n.std);
  CHECK(back.fitted_on == n.fitted_on);
}

TEST_CASE("concat_layers") {
  const auto a = random_dataset(3, 4, 4, 1, 17);
  auto b = random_dataset(3, 4, 4, 2, 18);
  b.questions = a.questions;

  const auto one = concat_layers({a});
  CHECK(one.d_model == 4);
  CHECK(one.activations == a.activations);

  const auto both = concat_layers({a, b});
  CHECK(both.d_model == 8);
  CHECK(both.layer_id == -1);
  CHECK(both.source_tag == "concat:layers=17,18");
  CHECK(both.activations.leftCols(4) == a.activations);
  CHECK(both.activations.rightCols(4) == b.activations);

  auto swapped = b;
  std::swap(swapped.questions[0], swapped.questions[1]);
  CHECK(code_of([&] { concat_layers({a, swapped}); }) == Errc::QidOrderMismatch);

  auto fewer = random_dataset(3, 3, 4, 2, 19);
  CHECK(code_of([&] { concat_layers({a, fewer}); }) == Errc::OptionCountMismatch);
}
