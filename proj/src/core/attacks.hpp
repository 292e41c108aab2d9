#pragma once

#include <map>
#include <string>
#include <vector>

#include "core/model.hpp"

namespace covobf {

// All attacks consume attacker-visible inputs only: plaintext reference
// weights, the obfuscated model, and ciphertext corpora. Ground truth enters
// only for scoring.
struct AttackReport {
  std::string attack;
  std::vector<int> recovered;           // obfuscated token -> plaintext token
  double ttrsr = -1.0;                  // -1 when no ground truth supplied
  std::map<int, double> top_k;          // TFMA: k -> accuracy
  std::vector<std::string> combos;      // VMA: combo/layer labels
  std::vector<double> combo_agreement;  // VMA: per-combo agreement with the vote
};

// Sorts each row of both matrices (killing column permutations), then greedy
// unique assignment of Y-rows to X-rows by ascending L2 distance.
// result[y_row] = matched x_row.
std::vector<int> row_sort_match(const Matrix& x, const Matrix& y);

double ttrsr(const std::vector<int>& truth, const std::vector<int>& recovered);

// Layer voting over the weight-combination table: embed*head, query/key Gram
// (MHA only), embed*gate, embed*up, down*head (transposed), embed*router.
AttackReport vma_full(const ModelWeights& plain, const ModelWeights& obf,
                      const std::vector<int32_t>* truth_tau = nullptr);

// Column-mean invariance of gate projections across layers.
AttackReport gate_ia(const ModelWeights& plain, const ModelWeights& obf,
                     const std::vector<int32_t>* truth_tau = nullptr);

// Rotation/scaling-invariant per-RoPE-block quadratic form, matched on the
// sorted multiset over heads x blocks.
AttackReport attn_ia(const ModelWeights& plain, const ModelWeights& obf,
                     const std::vector<int32_t>* truth_tau = nullptr);

// s = q G^+ q^T for one 2-column RoPE block; invariant under right rotation
// and scaling of the block.
double block_quadratic_invariant(const Vector& emb_row, const Matrix& we,
                                 const Matrix& wq_block);

// Row-sorted Gram-matrix nearest-row matching on the embedding.
AttackReport gram_nn(const Matrix& plain_embed, const Matrix& obf_embed,
                     const std::vector<int32_t>* truth_tau = nullptr);

// Frequency-rank matching between a prior corpus and the ciphertext corpus.
// truth_map, when given, maps cipher token -> plaintext token.
AttackReport tfma(const std::vector<int32_t>& prior_corpus,
                  const std::vector<int32_t>& cipher_corpus, int n_vocab,
                  const std::vector<int>& ks,
                  const std::vector<int32_t>* truth_map = nullptr);

}  // namespace covobf
