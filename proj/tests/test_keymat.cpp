#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "core/errors.hpp"
#include "core/keymat.hpp"

using namespace covobf;

TEST_CASE("base invariants hold at the recommended settings") {
  KeyBase base = key_base_init(16, 4, 0.3, 11);
  CHECK(max_abs_diff(base.b * base.b_inv, Matrix::Identity(16, 16)) <= 1e-10);
  CHECK(max_abs_diff(base.z * base.z.transpose(),
                     Matrix::Identity(base.expanded_dim(), base.expanded_dim())) <=
        1e-10);
  CHECK(max_abs(base.null_c * base.f) <= 1e-10);
  CHECK(max_abs(base.e * base.null_d) <= 1e-10);
}

TEST_CASE("lambda 0 gives an orthogonal B") {
  KeyBase base = key_base_init(12, 0, 0.0, 3);
  CHECK(max_abs_diff(base.b_inv, Matrix(base.b.transpose())) <= 1e-10);
}

TEST_CASE("h = 0 degenerates to an exact inverse pair") {
  KeyBase base = key_base_init(8, 0, 0.3, 17);
  KeyMatrix p1 = key_mat_gen(base, 100);
  KeyMatrix p2 = key_mat_gen(base, 200);
  // without expansion every key matrix equals B Z
  CHECK(max_abs_diff(p1.mat, p2.mat) == 0.0);
  InvKeyMatrix q = inv_key_mat_gen(base, 300);
  CHECK(verify_pair(p1, q) <= 1e-10);
}

TEST_CASE("cross pairs cancel and distinct seeds differ") {
  KeyBase base = key_base_init(16, 8, 0.3, 29);
  KeyMatrix p1 = key_mat_gen(base, 1);
  KeyMatrix p2 = key_mat_gen(base, 2);
  InvKeyMatrix q1 = inv_key_mat_gen(base, 3);
  InvKeyMatrix q2 = inv_key_mat_gen(base, 4);
  CHECK(verify_pair(p1, q1) <= 1e-8);
  CHECK(verify_pair(p1, q2) <= 1e-8);
  CHECK(verify_pair(p2, q1) <= 1e-8);
  CHECK(verify_pair(p2, q2) <= 1e-8);
  CHECK(max_abs_diff(p1.mat, p2.mat) > 1e-6);
}

TEST_CASE("cross-base pairs do not cancel") {
  KeyBase base1 = key_base_init(16, 8, 0.3, 5);
  KeyBase base2 = key_base_init(16, 8, 0.3, 6);
  KeyMatrix p = key_mat_gen(base2, 7);
  InvKeyMatrix q = inv_key_mat_gen(base1, 8);
  CHECK(verify_pair(p, q) > 0.1);
}

TEST_CASE("verify_pair identity and perturbation") {
  KeyMatrix p{Matrix::Identity(6, 6), 0};
  InvKeyMatrix q{Matrix::Identity(6, 6), 0};
  CHECK(verify_pair(p, q) == 0.0);
  InvKeyMatrix q2 = q;
  q2.mat(2, 3) += 1.0;
  CHECK(verify_pair(p, q2) >= 1.0);
}

TEST_CASE("verify_pair rejects shape mismatch") {
  KeyMatrix p{Matrix::Identity(6, 6), 0};
  InvKeyMatrix q{Matrix::Identity(4, 4), 0};
  CHECK_THROWS_AS(verify_pair(p, q), DataError);
}

TEST_CASE("determinism: same inputs give bit-identical bases") {
  KeyBase a = key_base_init(10, 4, 0.5, 77);
  KeyBase b = key_base_init(10, 4, 0.5, 77);
  CHECK(max_abs_diff(a.b, b.b) == 0.0);
  CHECK(max_abs_diff(a.z, b.z) == 0.0);
  CHECK(max_abs_diff(a.e, b.e) == 0.0);
  CHECK(max_abs_diff(a.f, b.f) == 0.0);
}

TEST_CASE("odd expansion size is rejected") {
  CHECK_THROWS_AS(key_base_init(8, 3, 0.3, 1), DataError);
}

TEST_CASE("C F and E D vanish entrywise") {
  KeyBase base = key_base_init(16, 8, 1.0, 99);
  KeyMatrix p = key_mat_gen(base, 1);
  InvKeyMatrix q = inv_key_mat_gen(base, 2);
  const int d = base.hidden, h = base.expand;
  // pull the C and D factors back out through Z
  Matrix block = p.mat * base.z.transpose();
  Matrix c = block.middleCols(d, h);
  Matrix stack = base.z * q.mat;
  Matrix dmat = stack.bottomRows(h);
  CHECK(max_abs(c * base.f) <= 1e-10);
  CHECK(max_abs(base.e * dmat) <= 1e-10);
}
