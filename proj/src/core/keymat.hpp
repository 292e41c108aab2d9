#pragma once

#include <cstdint>

#include "core/linalg.hpp"

namespace covobf {

// Shared base from which arbitrarily many key / inverse-key pairs are drawn.
// Every cross pair cancels: key_mat * inv_key_mat = I_d, because
// [B C E] Z * Z^T [B_inv; F; D] = B B_inv + C F + E D and the C, D factors
// are drawn from the null spaces that zero the last two terms.
struct KeyBase {
  int hidden = 0;     // d
  int expand = 0;     // h, even
  double lambda = 0.0;
  Matrix b;           // d x d
  Matrix b_inv;       // d x d
  Matrix e;           // d x h, rank <= h/2
  Matrix f;           // h x d, rank <= h/2
  Matrix z;           // (d+2h) x (d+2h), orthogonal
  Matrix null_c;      // (h/2) x h, rows v with v * F = 0
  Matrix null_d;      // h x (h/2), columns u with E * u = 0
  uint64_t base_id = 0;

  int expanded_dim() const { return hidden + 2 * expand; }
};

struct KeyMatrix {
  Matrix mat;  // d x (d+2h)
  uint64_t base_id = 0;
};

struct InvKeyMatrix {
  Matrix mat;  // (d+2h) x d
  uint64_t base_id = 0;
};

// B = U + lambda * V with U Haar-orthogonal; resamples (8 tries) while
// cond(B) > 1e6. Throws on odd h or an exhausted resample budget.
KeyBase key_base_init(int hidden, int expand, double lambda, uint64_t seed);

// Degenerate base with B = Z = I and h = 0, so key matrices are exactly the
// identity. Test instrumentation only.
KeyBase identity_key_base(int hidden);

KeyMatrix key_mat_gen(const KeyBase& base, uint64_t seed);
InvKeyMatrix inv_key_mat_gen(const KeyBase& base, uint64_t seed);

// Max-abs deviation of key * inv from I_d. Callers assert thresholds.
double verify_pair(const KeyMatrix& key, const InvKeyMatrix& inv);

}  // namespace covobf
