#pragma once

#include <Eigen/Dense>

#include "core/rng.hpp"

namespace covobf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::RowVectorXd;

// Entrywise N(0, stddev^2).
Matrix gaussian_matrix(int rows, int cols, double stddev, Rng& rng);

// Haar-distributed orthogonal matrix: QR of a standard Gaussian matrix with
// the R-diagonal sign correction.
Matrix sample_orthogonal(int dim, Rng& rng);

// Orthonormal basis (as columns) of {x : M x = 0}. Singular values <= tol
// count as zero; tol <= 0 uses 1e-12 * sigma_max.
Matrix null_space_basis(const Matrix& m, double tol);

// 2-norm condition number.
double cond_2(const Matrix& m);

double max_abs(const Matrix& m);

// max |a - b| entrywise; shapes must match.
double max_abs_diff(const Matrix& a, const Matrix& b);

// Stable softmax over a row vector.
Vector softmax(const Vector& logits);

// Sample standard deviation over all entries.
double entry_stddev(const Matrix& m);

}  // namespace covobf
