#include "resteer/probes.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "resteer/adamw.hpp"
#include "resteer/io.hpp"
#include "resteer/parallel.hpp"

namespace resteer {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

void TrainConfig::validate() const {
  require(learning_rate > 0.0, Errc::InvalidArgument, "learning_rate must be > 0");
  require(weight_decay >= 0.0, Errc::InvalidArgument, "weight_decay must be >= 0");
  require(lambda_out >= 0.0, Errc::InvalidArgument, "lambda_out must be >= 0");
  require(batch_size >= 1, Errc::InvalidArgument, "batch_size must be >= 1");
  require(max_epochs >= 1, Errc::InvalidArgument, "max_epochs must be >= 1");
  require(early_stop_patience >= 0, Errc::InvalidArgument, "early_stop_patience must be >= 0");
}

Eigen::VectorXf predict_rows(const MlpProbe<float>& p, const RowMatrixXf& x) {
  constexpr Index kChunk = 4096;
  Eigen::VectorXf out(x.rows());
  for (Index start = 0; start < x.rows(); start += kChunk) {
    const Index len = std::min(kChunk, x.rows() - start);
    out.segment(start, len) = predict(p, x.middleRows(start, len));
  }
  return out;
}

TrainResult train(MlpProbe<float> probe, const RowMatrixXf& x_train, const Eigen::VectorXf& y_train,
                  const RowMatrixXf& x_val, const Eigen::VectorXf& y_val, const TrainConfig& cfg) {
  cfg.validate();
  require(x_train.rows() > 0, Errc::EmptyTrainSet, "training set is empty");
  require(x_train.rows() == y_train.size(), Errc::LengthMismatch, "training rows and targets differ");
  require(x_val.rows() == y_val.size(), Errc::LengthMismatch, "validation rows and targets differ");
  require(x_train.cols() == probe.d_in(), Errc::DimMismatch, "training data width does not match probe");
  // Without a validation split, model selection falls back to the training set.
  const bool has_val = x_val.rows() > 0;
  const RowMatrixXf& xv = has_val ? x_val : x_train;
  const Eigen::VectorXf& yv = has_val ? y_val : y_train;

  AdamW<float> opt({cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps});
  std::vector<std::size_t> w_slot, b_slot;
  for (std::size_t l = 0; l < probe.n_layers(); ++l) {
    w_slot.push_back(opt.add_slot(probe.weights[l].size()));
    b_slot.push_back(opt.add_slot(probe.biases[l].size()));
  }

  TrainResult result;
  TrainHistory& hist = result.history;
  hist.initial_train_loss = probe_loss(predict_rows(probe, x_train), y_train, cfg.lambda_out);

  Rng rng(cfg.seed);
  const Index n = x_train.rows();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  MlpGradients<float> grads;
  RowMatrixXf batch_x;
  Eigen::VectorXf batch_y;
  double best_r2 = -std::numeric_limits<double>::infinity();
  MlpProbe<float> best_probe = probe;
  int stale = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index len = std::min<Index>(cfg.batch_size, n - start);
      batch_x.resize(len, x_train.cols());
      batch_y.resize(len);
      for (Index i = 0; i < len; ++i) {
        const Index row = order[static_cast<std::size_t>(start + i)];
        batch_x.row(i) = x_train.row(row);
        batch_y[i] = y_train[row];
      }
      const double loss = probe_loss_and_gradient(probe, batch_x, batch_y, cfg.lambda_out, &rng, grads);
      require(std::isfinite(loss), Errc::DivergedLoss, "non-finite training loss at epoch " + std::to_string(epoch));
      loss_sum += loss * static_cast<double>(len);
      opt.begin_step();
      for (std::size_t l = 0; l < probe.n_layers(); ++l) {
        opt.update(w_slot[l], probe.weights[l], grads.weights[l]);
        opt.update(b_slot[l], probe.biases[l], grads.biases[l]);
      }
    }
    const Eigen::VectorXf val_pred = predict_rows(probe, xv);
    require(val_pred.allFinite(), Errc::DivergedLoss, "non-finite predictions at epoch " + std::to_string(epoch));
    const double r2 = r_squared(val_pred, yv);
    hist.train_loss.push_back(loss_sum / static_cast<double>(n));
    hist.val_loss.push_back(probe_loss(val_pred, yv, cfg.lambda_out));
    hist.val_r2.push_back(r2);
    if (r2 > best_r2) {
      best_r2 = r2;
      best_probe = probe;
      hist.best_epoch = static_cast<std::size_t>(epoch);
      stale = 0;
    } else if (++stale >= cfg.early_stop_patience) {
      break;
    }
  }
  result.probe = std::move(best_probe);
  return result;
}

GridSearchResult grid_search(int d_in, const std::vector<int>& hidden, double dropout_p, const ProbeGrid& grid,
                             const TrainConfig& base, const RowMatrixXf& x_train, const Eigen::VectorXf& y_train,
                             const RowMatrixXf& x_val, const Eigen::VectorXf& y_val, std::uint64_t seed) {
  require(!grid.learning_rates.empty() && !grid.weight_decays.empty() && !grid.lambda_outs.empty(),
          Errc::InvalidArgument, "every grid axis needs at least one value");
  std::vector<GridCell> table;
  for (double lr : grid.learning_rates) {
    for (double wd : grid.weight_decays) {
      for (double lam : grid.lambda_outs) {
        GridCell cell;
        cell.config = base;
        cell.config.learning_rate = lr;
        cell.config.weight_decay = wd;
        cell.config.lambda_out = lam;
        cell.config.seed = seed;
        table.push_back(cell);
      }
    }
  }
  const MlpProbe<float> initial = init_probe<float>(d_in, hidden, dropout_p, seed);
  std::vector<TrainResult> trained(table.size());
  parallel_for(table.size(), [&](std::size_t i) {
    auto& cell = table[i];
    try {
      trained[i] = train(initial, x_train, y_train, x_val, y_val, cell.config);
      cell.best_epoch = trained[i].history.best_epoch;
      cell.val_r2 = trained[i].history.val_r2[cell.best_epoch];
      cell.ok = true;
    } catch (const Error& e) {
      cell.ok = false;
      cell.error = e.what();
      cell.val_r2 = -std::numeric_limits<double>::infinity();
    }
  });

  std::size_t best = table.size();
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& cell = table[i];
    if (!cell.ok) continue;
    if (best == table.size()) {
      best = i;
      continue;
    }
    const auto& cur = table[best];
    const bool better = cell.val_r2 > cur.val_r2 ||
                        (cell.val_r2 == cur.val_r2 &&
                         (cell.config.weight_decay < cur.config.weight_decay ||
                          (cell.config.weight_decay == cur.config.weight_decay &&
                           cell.config.learning_rate < cur.config.learning_rate)));
    if (better) best = i;
  }
  if (best == table.size()) fail(Errc::DivergedLoss, "every grid cell failed; first error: " + table.front().error);

  GridSearchResult out;
  out.probe = std::move(trained[best].probe);
  out.config = table[best].config;
  out.history = std::move(trained[best].history);
  out.table = std::move(table);
  out.best = best;
  return out;
}

std::string grid_table_csv(const std::vector<GridCell>& table) {
  std::string text = "learning_rate,weight_decay,lambda_out,val_r2,best_epoch,status\n";
  for (const auto& cell : table) {
    text += io::format_double(cell.config.learning_rate) + "," + io::format_double(cell.config.weight_decay) + "," +
            io::format_double(cell.config.lambda_out) + "," + (cell.ok ? io::format_double(cell.val_r2) : "nan") +
            "," + std::to_string(cell.best_epoch) + "," + (cell.ok ? "ok" : "failed") + "\n";
  }
  return text;
}

std::string history_csv(const TrainHistory& history) {
  std::string text = "epoch,train_loss,val_loss,val_r2,best\n";
  for (std::size_t e = 0; e < history.train_loss.size(); ++e) {
    text += std::to_string(e) + "," + io::format_double(history.train_loss[e]) + "," +
            io::format_double(history.val_loss[e]) + "," + io::format_double(history.val_r2[e]) + "," +
            (e == history.best_epoch ? "1" : "0") + "\n";
  }
  return text;
}

RidgeModel fit_ridge(const Eigen::Ref<const Eigen::MatrixXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                     double alpha) {
  require(x.rows() >= 1, Errc::EmptyTrainSet, "ridge needs at least one sample");
  require(x.rows() == y.size(), Errc::LengthMismatch, "ridge rows and targets differ");
  require(alpha >= 0.0, Errc::InvalidArgument, "ridge alpha must be >= 0");
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const double y_mean = y.mean();
  const Eigen::MatrixXd xc = x.rowwise() - x_mean;
  const Eigen::VectorXd yc = y.array() - y_mean;
  Eigen::MatrixXd gram = xc.transpose() * xc;
  gram.diagonal().array() += alpha;
  const Eigen::VectorXd rhs = xc.transpose() * yc;

  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-13) {
    fail(Errc::SingularSystem, "ridge normal equations are singular (alpha = " + io::format_double(alpha) + ")");
  }
  RidgeModel model;
  model.weights = llt.solve(rhs);
  model.bias = y_mean - x_mean.dot(model.weights);
  model.alpha = alpha;
  require(model.weights.allFinite(), Errc::SingularSystem, "ridge solution is not finite");
  return model;
}

namespace {

constexpr const char* kProbeFormat = "PROBE1";

std::vector<std::string> tensor_order(std::size_t layers) {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < layers; ++l) {
    names.push_back("W" + std::to_string(l));
    names.push_back("b" + std::to_string(l));
  }
  return names;
}

}  // namespace

void save_probe(const fs::path& dir, const MlpProbe<float>& probe, const Normalizer& normalizer) {
  require(normalizer.dim() == probe.d_in(), Errc::DimMismatch, "normalizer width does not match probe");
  io::ensure_directory(dir);
  std::vector<float> blob;
  for (std::size_t l = 0; l < probe.n_layers(); ++l) {
    const RowMatrix<float> w = probe.weights[l];
    blob.insert(blob.end(), w.data(), w.data() + w.size());
    blob.insert(blob.end(), probe.biases[l].data(), probe.biases[l].data() + probe.biases[l].size());
  }
  io::write_f32(dir / "weights.f32", blob);

  ordered_json doc;
  doc["format"] = kProbeFormat;
  doc["dims"] = probe.dims;
  doc["dropout_p"] = probe.dropout_p;
  doc["seed"] = probe.seed;
  doc["hidden_activation"] = "relu";
  doc["output_activation"] = "tanh";
  doc["normalizer"] = normalizer.to_json();
  doc["tensor_order"] = tensor_order(probe.n_layers());
  doc["checksum"] = io::hex32(io::crc32(std::as_bytes(std::span(blob))));
  io::write_text(dir / "probe.json", doc.dump(2) + "\n");
}

StoredProbe load_probe(const fs::path& dir) {
  require(fs::exists(dir / "probe.json"), Errc::MissingFile, (dir / "probe.json").string() + " not found");
  require(fs::exists(dir / "weights.f32"), Errc::MissingFile, (dir / "weights.f32").string() + " not found");
  const auto doc = io::read_json(dir / "probe.json");
  StoredProbe out;
  std::string checksum;
  try {
    const auto format = doc.at("format").get<std::string>();
    require(format == kProbeFormat, Errc::UnsupportedVersion, "probe format '" + format + "' is not " + kProbeFormat);
    out.probe.dims = doc.at("dims").get<std::vector<int>>();
    out.probe.dropout_p = doc.at("dropout_p").get<double>();
    out.probe.seed = doc.at("seed").get<std::uint64_t>();
    out.normalizer = Normalizer::from_json(doc.at("normalizer"));
    checksum = doc.at("checksum").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::CorruptRecord, std::string("probe.json: ") + e.what());
  }
  const auto& dims = out.probe.dims;
  require(dims.size() >= 2 && dims.back() == 1, Errc::CorruptRecord, "probe dims must end in 1");
  for (int d : dims) require(d >= 1, Errc::CorruptRecord, "probe dims must be positive");

  const std::vector<float> blob = io::read_f32(dir / "weights.f32");
  std::size_t expected = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) expected += static_cast<std::size_t>(dims[l + 1]) * (dims[l] + 1);
  require(blob.size() == expected, Errc::ShapeMismatch,
          "weights.f32 holds " + std::to_string(blob.size()) + " floats, dims imply " + std::to_string(expected));
  require(io::hex32(io::crc32(std::as_bytes(std::span(blob)))) == checksum, Errc::ChecksumMismatch,
          "weights.f32 does not match the recorded checksum");

  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int rows = dims[l + 1];
    const int cols = dims[l];
    out.probe.weights.push_back(Eigen::Map<const RowMatrix<float>>(blob.data() + offset, rows, cols));
    offset += static_cast<std::size_t>(rows) * cols;
    out.probe.biases.push_back(Eigen::Map<const Eigen::VectorXf>(blob.data() + offset, rows));
    offset += static_cast<std::size_t>(rows);
  }
  require(out.normalizer.dim() == out.probe.d_in(), Errc::DimMismatch, "stored normalizer width does not match probe");
  return out;
}

}  // namespace resteer
