#pragma once

// Dense symmetric eigendecomposition oracle for the PCA tests (Eigen, test-only).

#include <Eigen/Dense>
#include <algorithm>
#include <vector>

#include "cre/tensor.hpp"

namespace cre::testing {

inline Eigen::MatrixXd as_matrix(const Tensor& x) {
  const auto rows = static_cast<Eigen::Index>(x.dim(0));
  const auto cols = static_cast<Eigen::Index>(x.size() / x.dim(0));
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = x[static_cast<std::size_t>(r * cols + c)];
  return m;
}

inline Eigen::MatrixXd centered(const Tensor& x) {
  Eigen::MatrixXd m = as_matrix(x);
  return m.rowwise() - m.colwise().mean();
}

/// Sample-covariance eigenvalues, descending.
inline std::vector<double> oracle_eigenvalues(const Tensor& x) {
  Eigen::MatrixXd c = centered(x);
  Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(c.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  std::vector<double> ev(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
  std::reverse(ev.begin(), ev.end());
  return ev;
}

/// Mean squared error of projecting the centered data onto the top-n eigenvectors.
inline double oracle_subspace_error(const Tensor& x, std::size_t n) {
  Eigen::MatrixXd c = centered(x);
  Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(c.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const auto d = cov.cols(), k = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd v = es.eigenvectors().rightCols(k);
  Eigen::MatrixXd r = c - c * v * v.transpose();
  return r.squaredNorm() / static_cast<double>(c.rows() * d);
}

}  // namespace cre::testing
