#include "core/keymat.hpp"

#include "core/errors.hpp"

namespace covobf {

namespace {

constexpr double kCondLimit = 1e6;
constexpr int kResampleBudget = 8;
constexpr double kNullTol = 1e-10;

}  // namespace

KeyBase key_base_init(int hidden, int expand, double lambda, uint64_t seed) {
  if (hidden < 1) throw DataError("key_base_init: hidden size must be >= 1");
  if (expand < 0 || expand % 2 != 0)
    throw DataError("key_base_init: expansion size must be even and >= 0");
  if (lambda < 0.0) throw DataError("key_base_init: lambda must be >= 0");

  Rng rng(seed);
  KeyBase base;
  base.hidden = hidden;
  base.expand = expand;
  base.lambda = lambda;
  base.base_id = splitmix64(seed ^ 0xC0B0F5ULL);

  const double inv_d = 1.0 / std::sqrt(static_cast<double>(hidden));
  int tries = 0;
  for (;;) {
    Matrix u = sample_orthogonal(hidden, rng);
    Matrix v = gaussian_matrix(hidden, hidden, inv_d, rng);
    base.b = u + lambda * v;
    if (cond_2(base.b) <= kCondLimit) break;
    if (++tries >= kResampleBudget)
      throw InvariantError("key_base_init: resample budget exhausted, cond(B) > 1e6");
  }
  base.b_inv = base.b.partialPivLu().inverse();

  const int half = expand / 2;
  if (expand > 0) {
    Matrix e1 = gaussian_matrix(hidden, half, inv_d, rng);
    Matrix e2 = gaussian_matrix(half, expand, inv_d, rng);
    base.e = e1 * e2;
    Matrix f1 = gaussian_matrix(expand, half, inv_d, rng);
    Matrix f2 = gaussian_matrix(half, hidden, inv_d, rng);
    base.f = f1 * f2;

    // Generically null(F^T) = null(F1^T) and null(E) = null(E2), so the
    // half-rank factors give the spaces directly; fall back to the full
    // products if a degenerate draw breaks that.
    base.null_c = null_space_basis(f1.transpose(), 0.0).transpose();
    if (base.null_c.rows() != half ||
        max_abs(base.null_c * base.f) > kNullTol * std::max(1.0, max_abs(base.f)))
      base.null_c = null_space_basis(base.f.transpose(), 0.0).transpose();
    base.null_d = null_space_basis(e2, 0.0);
    if (base.null_d.cols() != half ||
        max_abs(base.e * base.null_d) > kNullTol * std::max(1.0, max_abs(base.e)))
      base.null_d = null_space_basis(base.e, 0.0);

    if (max_abs(base.null_c * base.f) > kNullTol ||
        max_abs(base.e * base.null_d) > kNullTol)
      throw InvariantError("key_base_init: null-space residual above 1e-10");
  } else {
    base.e = Matrix(hidden, 0);
    base.f = Matrix(0, hidden);
    base.null_c = Matrix(0, 0);
    base.null_d = Matrix(0, 0);
  }

  base.z = sample_orthogonal(base.expanded_dim(), rng);
  return base;
}

KeyBase identity_key_base(int hidden) {
  KeyBase base;
  base.hidden = hidden;
  base.expand = 0;
  base.lambda = 0.0;
  base.b = Matrix::Identity(hidden, hidden);
  base.b_inv = base.b;
  base.e = Matrix(hidden, 0);
  base.f = Matrix(0, hidden);
  base.null_c = Matrix(0, 0);
  base.null_d = Matrix(0, 0);
  base.z = Matrix::Identity(hidden, hidden);
  base.base_id = 0;
  return base;
}

KeyMatrix key_mat_gen(const KeyBase& base, uint64_t seed) {
  Rng rng(seed);
  const int d = base.hidden;
  const int h = base.expand;
  Matrix block(d, d + 2 * h);
  block.leftCols(d) = base.b;
  if (h > 0) {
    Matrix g = gaussian_matrix(d, h / 2, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    block.middleCols(d, h) = g * base.null_c;
    block.rightCols(h) = base.e;
  }
  return KeyMatrix{block * base.z, base.base_id};
}

InvKeyMatrix inv_key_mat_gen(const KeyBase& base, uint64_t seed) {
  Rng rng(seed);
  const int d = base.hidden;
  const int h = base.expand;
  Matrix stack(d + 2 * h, d);
  stack.topRows(d) = base.b_inv;
  if (h > 0) {
    stack.middleRows(d, h) = base.f;
    Matrix g = gaussian_matrix(h / 2, d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    stack.bottomRows(h) = base.null_d * g;
  }
  return InvKeyMatrix{base.z.transpose() * stack, base.base_id};
}

double verify_pair(const KeyMatrix& key, const InvKeyMatrix& inv) {
  if (key.mat.cols() != inv.mat.rows() || key.mat.rows() != inv.mat.cols())
    throw DataError("verify_pair: incompatible shapes");
  Matrix prod = key.mat * inv.mat;
  return max_abs_diff(prod, Matrix::Identity(prod.rows(), prod.cols()));
}

}  // namespace covobf
