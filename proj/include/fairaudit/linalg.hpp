#pragma once

#include <Eigen/Core>

namespace fairaudit {

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using IntVector = VectorX<int>;
using Index = Eigen::Index;

}  // namespace fairaudit
