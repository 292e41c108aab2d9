#include "core/linalg.hpp"

#include <cmath>

#include "core/errors.hpp"

namespace covobf {

Matrix gaussian_matrix(int rows, int cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = stddev * rng.normal();
  return m;
}

Matrix sample_orthogonal(int dim, Rng& rng) {
  if (dim < 1) throw DataError("sample_orthogonal: dim must be >= 1");
  Matrix g = gaussian_matrix(dim, dim, 1.0, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  // Fixing the signs of Q's columns by diag(R) makes the distribution Haar.
  for (int i = 0; i < dim; ++i)
    if (r(i, i) < 0.0) q.col(i) = -q.col(i);
  return q;
}

Matrix null_space_basis(const Matrix& m, double tol) {
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  double sigma_max = sv.size() > 0 ? sv(0) : 0.0;
  double cutoff = tol > 0.0 ? tol : 1e-12 * sigma_max;
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff) ++rank;
  int nullity = static_cast<int>(m.cols()) - rank;
  return svd.matrixV().rightCols(nullity);
}

double cond_2(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& sv = svd.singularValues();
  double smin = sv(sv.size() - 1);
  if (smin <= 0.0) return std::numeric_limits<double>::infinity();
  return sv(0) / smin;
}

double max_abs(const Matrix& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DataError("max_abs_diff: shape mismatch");
  return max_abs(a - b);
}

Vector softmax(const Vector& logits) {
  double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp();
  return e / e.sum();
}

double entry_stddev(const Matrix& m) {
  double n = static_cast<double>(m.size());
  if (n < 2) return 0.0;
  double mean = m.mean();
  double ss = (m.array() - mean).square().sum();
  return std::sqrt(ss / (n - 1.0));
}

}  // namespace covobf
