#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace subkal {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double>;

}  // namespace subkal
