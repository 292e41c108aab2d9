#include "core/attacks.hpp"

#include <algorithm>
#include <numeric>

#include "core/errors.hpp"

namespace covobf {

namespace {

Matrix sort_rows(const Matrix& m) {
  Matrix out = m;
  std::vector<double> buf(m.cols());
  for (int r = 0; r < out.rows(); ++r) {
    for (int c = 0; c < m.cols(); ++c) buf[c] = out(r, c);
    std::sort(buf.begin(), buf.end());
    for (int c = 0; c < m.cols(); ++c) out(r, c) = buf[c];
  }
  return out;
}

// Greedy unique assignment over all pairs by ascending distance.
std::vector<int> greedy_assign(const Matrix& xs, const Matrix& ys) {
  const int n = static_cast<int>(xs.rows());
  struct Pair {
    double dist;
    int y, x;
  };
  std::vector<Pair> pairs;
  pairs.reserve(static_cast<size_t>(n) * n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      pairs.push_back({(ys.row(y) - xs.row(x)).norm(), y, x});
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });
  std::vector<int> match(n, -1);
  std::vector<bool> x_used(n, false);
  int assigned = 0;
  for (const Pair& p : pairs) {
    if (assigned == n) break;
    if (match[p.y] != -1 || x_used[p.x]) continue;
    match[p.y] = p.x;
    x_used[p.x] = true;
    ++assigned;
  }
  return match;
}

void score(AttackReport& report, const std::vector<int32_t>* truth) {
  if (!truth) return;
  std::vector<int> t(truth->begin(), truth->end());
  report.ttrsr = ttrsr(t, report.recovered);
}

Matrix pinv_2x2(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  double tol = 1e-10 * (sv.size() > 0 ? sv(0) : 0.0);
  Eigen::VectorXd inv = sv;
  for (int i = 0; i < inv.size(); ++i) inv(i) = sv(i) > tol ? 1.0 / sv(i) : 0.0;
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

}  // namespace

std::vector<int> row_sort_match(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols())
    throw DataError("row_sort_match: shape mismatch");
  return greedy_assign(sort_rows(x), sort_rows(y));
}

double ttrsr(const std::vector<int>& truth, const std::vector<int>& recovered) {
  if (truth.size() != recovered.size()) throw DataError("ttrsr: domain mismatch");
  if (truth.empty()) throw DataError("ttrsr: empty mapping");
  int hits = 0;
  for (size_t i = 0; i < truth.size(); ++i)
    if (truth[i] == recovered[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

AttackReport vma_full(const ModelWeights& plain, const ModelWeights& obf,
                      const std::vector<int32_t>* truth_tau) {
  const ModelConfig& cfg = plain.config;
  const int n = cfg.n_vocab;
  AttackReport report;
  report.attack = "vma";

  std::vector<std::vector<int>> answers;
  auto run_combo = [&](const std::string& label, const Matrix& x, const Matrix& y) {
    report.combos.push_back(label);
    answers.push_back(row_sort_match(x, y));
  };

  run_combo("embed_head", plain.embed * plain.head, obf.embed * obf.head);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string suffix = ".L" + std::to_string(l);
    const LayerWeights& pl = plain.layers[l];
    const LayerWeights& ol = obf.layers[l];
    if (cfg.n_heads == cfg.n_kv_heads) {
      Matrix xq = plain.embed * pl.attn.wq, xk = plain.embed * pl.attn.wk;
      Matrix yq = obf.embed * ol.attn.wq, yk = obf.embed * ol.attn.wk;
      run_combo("qk_gram" + suffix, xq * xk.transpose(), yq * yk.transpose());
    }
    if (cfg.n_experts > 0) {
      run_combo("router" + suffix, plain.embed * pl.router, obf.embed * ol.router);
    } else {
      run_combo("gate" + suffix, plain.embed * pl.ffn.gate, obf.embed * ol.ffn.gate);
      run_combo("up" + suffix, plain.embed * pl.ffn.up, obf.embed * ol.ffn.up);
      run_combo("down_head" + suffix, Matrix((pl.ffn.down * plain.head).transpose()),
                Matrix((ol.ffn.down * obf.head).transpose()));
    }
  }

  // per-token majority vote; ties resolve to the first combination's answer
  report.recovered.resize(n);
  for (int tok = 0; tok < n; ++tok) {
    std::map<int, int> votes;
    for (const auto& a : answers) ++votes[a[tok]];
    int best = answers[0][tok], best_count = 0;
    for (const auto& [cand, count] : votes) {
      if (count > best_count) {
        best = cand;
        best_count = count;
      }
    }
    if (votes[answers[0][tok]] == best_count) best = answers[0][tok];
    report.recovered[tok] = best;
  }
  for (const auto& a : answers) {
    int agree = 0;
    for (int tok = 0; tok < n; ++tok)
      if (a[tok] == report.recovered[tok]) ++agree;
    report.combo_agreement.push_back(static_cast<double>(agree) / n);
  }
  score(report, truth_tau);
  return report;
}

AttackReport gate_ia(const ModelWeights& plain, const ModelWeights& obf,
                     const std::vector<int32_t>* truth_tau) {
  const ModelConfig& cfg = plain.config;
  if (cfg.n_experts > 0) throw DataError("gate_ia: needs dense FFN layers");
  const int n = cfg.n_vocab;
  Matrix feat_plain(n, cfg.n_layers), feat_obf(n, cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    feat_plain.col(l) = (plain.embed * plain.layers[l].ffn.gate).rowwise().mean();
    feat_obf.col(l) = (obf.embed * obf.layers[l].ffn.gate).rowwise().mean();
  }
  AttackReport report;
  report.attack = "gate-ia";
  report.recovered = greedy_assign(feat_plain, feat_obf);
  score(report, truth_tau);
  return report;
}

double block_quadratic_invariant(const Vector& emb_row, const Matrix& we,
                                 const Matrix& wq_block) {
  Matrix q_cols = we * wq_block;  // n x 2
  Matrix gram = q_cols.transpose() * q_cols;
  Vector q = emb_row * wq_block;
  return (q * pinv_2x2(gram) * q.transpose())(0, 0);
}

AttackReport attn_ia(const ModelWeights& plain, const ModelWeights& obf,
                     const std::vector<int32_t>* truth_tau) {
  const ModelConfig& cfg = plain.config;
  const int n = cfg.n_vocab;
  const int dh = cfg.head_dim;
  const int blocks = dh / 2;
  const int feats = cfg.n_layers * cfg.n_heads * blocks;

  auto features = [&](const ModelWeights& m) {
    Matrix f(n, feats);
    int col = 0;
    for (int l = 0; l < cfg.n_layers; ++l) {
      for (int head = 0; head < cfg.n_heads; ++head) {
        for (int b = 0; b < blocks; ++b, ++col) {
          Matrix block = m.layers[l].attn.wq.middleCols(head * dh + 2 * b, 2);
          Matrix q_cols = m.embed * block;
          Matrix pinv = pinv_2x2(q_cols.transpose() * q_cols);
          for (int tok = 0; tok < n; ++tok) {
            Vector q = q_cols.row(tok);
            f(tok, col) = (q * pinv * q.transpose())(0, 0);
          }
        }
      }
    }
    return f;
  };
  Matrix fp = features(plain), fo = features(obf);
  // The attacker cannot identify heads or blocks, so the per-layer feature
  // is the sorted multiset of invariant values.
  auto sort_slices = [&](Matrix& f) {
    const int per_layer = cfg.n_heads * blocks;
    std::vector<double> buf(per_layer);
    for (int tok = 0; tok < n; ++tok)
      for (int l = 0; l < cfg.n_layers; ++l) {
        for (int i = 0; i < per_layer; ++i) buf[i] = f(tok, l * per_layer + i);
        std::sort(buf.begin(), buf.end());
        for (int i = 0; i < per_layer; ++i) f(tok, l * per_layer + i) = buf[i];
      }
  };
  sort_slices(fp);
  sort_slices(fo);

  AttackReport report;
  report.attack = "attn-ia";
  report.recovered = greedy_assign(fp, fo);
  score(report, truth_tau);
  return report;
}

AttackReport gram_nn(const Matrix& plain_embed, const Matrix& obf_embed,
                     const std::vector<int32_t>* truth_tau) {
  AttackReport report;
  report.attack = "gram-nn";
  Matrix gx = plain_embed * plain_embed.transpose();
  Matrix gy = obf_embed * obf_embed.transpose();
  report.recovered = row_sort_match(gx, gy);
  score(report, truth_tau);
  return report;
}

AttackReport tfma(const std::vector<int32_t>& prior_corpus,
                  const std::vector<int32_t>& cipher_corpus, int n_vocab,
                  const std::vector<int>& ks,
                  const std::vector<int32_t>* truth_map) {
  if (prior_corpus.empty() || cipher_corpus.empty())
    throw DataError("tfma: empty corpus");

  auto rank_by_frequency = [&](const std::vector<int32_t>& corpus) {
    std::vector<int64_t> freq(n_vocab, 0);
    for (int32_t t : corpus) {
      if (t < 0 || t >= n_vocab) throw DataError("tfma: token out of range");
      ++freq[t];
    }
    std::vector<int> order(n_vocab);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (freq[a] != freq[b]) return freq[a] > freq[b];
      return a < b;  // ties to the lower id
    });
    std::vector<int> rank(n_vocab);
    for (int r = 0; r < n_vocab; ++r) rank[order[r]] = r;
    return std::make_pair(rank, order);
  };

  auto [prior_rank, prior_order] = rank_by_frequency(prior_corpus);
  auto [cipher_rank, cipher_order] = rank_by_frequency(cipher_corpus);
  (void)prior_rank;

  AttackReport report;
  report.attack = "tfma";
  // Top-1 mapping: the prior token at the same frequency rank.
  report.recovered.resize(n_vocab);
  for (int tok = 0; tok < n_vocab; ++tok)
    report.recovered[tok] = prior_order[cipher_rank[tok]];

  std::vector<bool> present(n_vocab, false);
  for (int32_t t : cipher_corpus) present[t] = true;

  if (truth_map) {
    std::vector<int> truth(truth_map->begin(), truth_map->end());
    for (int k : ks) {
      int hits = 0, total = 0;
      for (int tok = 0; tok < n_vocab; ++tok) {
        if (!present[tok]) continue;
        ++total;
        int rank = cipher_rank[tok];
        // k prior tokens nearest in rank; ties toward the lower rank
        std::vector<int> cands;
        for (int off = 0; static_cast<int>(cands.size()) < k && off < n_vocab; ++off) {
          if (off == 0) {
            cands.push_back(prior_order[rank]);
            continue;
          }
          if (rank - off >= 0) cands.push_back(prior_order[rank - off]);
          if (static_cast<int>(cands.size()) < k && rank + off < n_vocab)
            cands.push_back(prior_order[rank + off]);
        }
        if (std::find(cands.begin(), cands.end(), truth[tok]) != cands.end()) ++hits;
      }
      report.top_k[k] = total == 0 ? 0.0 : static_cast<double>(hits) / total;
    }
    std::vector<int> truth_present, rec_present;
    for (int tok = 0; tok < n_vocab; ++tok) {
      if (!present[tok]) continue;
      truth_present.push_back(truth[tok]);
      rec_present.push_back(report.recovered[tok]);
    }
    report.ttrsr = ttrsr(truth_present, rec_present);
  }
  return report;
}

}  // namespace covobf
