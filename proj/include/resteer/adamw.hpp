#pragma once

#include <cmath>
#include <vector>

#include "resteer/types.hpp"

namespace resteer {

struct AdamWParams {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// AdamW with decoupled weight decay. Parameters are registered as flat
/// slots; each call to step() advances the shared timestep once.
template <typename Scalar>
class AdamW {
 public:
  explicit AdamW(AdamWParams params) : params_(params) {}

  /// Registers a parameter tensor of `size` entries and returns its slot.
  std::size_t add_slot(Index size) {
    first_.push_back(Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(size));
    second_.push_back(Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(size));
    return first_.size() - 1;
  }

  void begin_step() { ++t_; }

  template <typename Param, typename Grad>
  void update(std::size_t slot, Eigen::DenseBase<Param>& param, const Eigen::DenseBase<Grad>& grad) {
    using Flat = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
    using ConstFlat = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
    Flat p(param.derived().data(), param.size());
    ConstFlat g(grad.derived().data(), grad.size());
    auto& m = first_[slot];
    auto& v = second_[slot];
    const auto b1 = static_cast<Scalar>(params_.beta1);
    const auto b2 = static_cast<Scalar>(params_.beta2);
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    const auto bias1 = static_cast<Scalar>(1.0 - std::pow(params_.beta1, t_));
    const auto bias2 = static_cast<Scalar>(1.0 - std::pow(params_.beta2, t_));
    const auto lr = static_cast<Scalar>(params_.learning_rate);
    const auto wd = static_cast<Scalar>(params_.weight_decay);
    p -= lr * wd * p;
    p -= lr * (m / bias1) / ((v / bias2).sqrt() + static_cast<Scalar>(params_.eps));
  }

 private:
  AdamWParams params_;
  long t_ = 0;
  std::vector<Eigen::Array<Scalar, Eigen::Dynamic, 1>> first_;
  std::vector<Eigen::Array<Scalar, Eigen::Dynamic, 1>> second_;
};

}  // namespace resteer
