#pragma once

#include <Eigen/Dense>

namespace resteer {

using Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Activation storage: one sample per row, contiguous rows on disk.
using RowMatrixXf = RowMatrix<float>;

}  // namespace resteer
