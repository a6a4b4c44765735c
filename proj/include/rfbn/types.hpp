#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace rfbn {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using RowVector = RowVectorX<double>;

// n x k matrix of bin indices, one column per vote variable.
using BinMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

// Class labels are indices into an ordered class-name list.
using Labels = std::vector<int>;

}  // namespace rfbn
