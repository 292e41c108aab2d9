#include "core/privacy.hpp"

#include <cmath>

#include "core/errors.hpp"
#include "core/rng.hpp"

namespace covobf {

namespace {

void check_perm(const Permutation& g) {
  std::vector<bool> seen(g.size(), false);
  for (int v : g) {
    if (v < 0 || v >= static_cast<int>(g.size()) || seen[v])
      throw DataError("not a permutation");
    seen[v] = true;
  }
}

// cycle lengths of g^-1 o g'
std::vector<int> relative_cycles(const Permutation& g, const Permutation& g2) {
  if (g.size() != g2.size()) throw DataError("permutation size mismatch");
  check_perm(g);
  check_perm(g2);
  const int n = static_cast<int>(g.size());
  std::vector<int> g_inv(n);
  for (int i = 0; i < n; ++i) g_inv[g[i]] = i;
  std::vector<int> h(n);
  for (int i = 0; i < n; ++i) h[i] = g_inv[g2[i]];
  std::vector<bool> visited(n, false);
  std::vector<int> lengths;
  for (int s = 0; s < n; ++s) {
    if (visited[s]) continue;
    int len = 0, cur = s;
    while (!visited[cur]) {
      visited[cur] = true;
      cur = h[cur];
      ++len;
    }
    lengths.push_back(len);
  }
  return lengths;
}

}  // namespace

int perm_metric(const Permutation& g, const Permutation& g2) {
  std::vector<int> cycles = relative_cycles(g, g2);
  return static_cast<int>(g.size()) - static_cast<int>(cycles.size());
}

std::optional<int> seq_perm_metric(const std::vector<int>& x,
                                   const std::vector<int>& x2, int n) {
  if (x.size() != x2.size()) throw DataError("seq_perm_metric: length mismatch");
  constexpr int kUnset = -1;
  std::vector<int> map(n, kUnset);
  std::vector<bool> target_used(n, false);
  for (size_t i = 0; i < x.size(); ++i) {
    int a = x[i], b = x2[i];
    if (a < 0 || a >= n || b < 0 || b >= n)
      throw DataError("seq_perm_metric: symbol out of range");
    if (map[a] == kUnset) {
      if (target_used[b]) return std::nullopt;  // two symbols forced onto b
      map[a] = b;
      target_used[b] = true;
    } else if (map[a] != b) {
      return std::nullopt;  // one symbol forced onto two targets
    }
  }

  // The partial injective map decomposes into complete cycles and chains.
  // Each chain closes into one cycle, untouched symbols stay fixed points;
  // this maximizes the cycle count of a completing permutation.
  int cycles = 0, chains = 0, untouched = 0;
  std::vector<bool> visited(n, false);
  for (int s = 0; s < n; ++s) {
    bool in_domain = map[s] != kUnset;
    if (!in_domain && !target_used[s]) {
      ++untouched;
      visited[s] = true;
    }
  }
  // chains start at a domain symbol that is not anyone's target
  for (int s = 0; s < n; ++s) {
    if (map[s] == kUnset || target_used[s] || visited[s]) continue;
    int cur = s;
    while (cur != kUnset && !visited[cur]) {
      visited[cur] = true;
      cur = map[cur];
    }
    ++chains;
  }
  // whatever remains with a defined image lies on complete cycles
  for (int s = 0; s < n; ++s) {
    if (visited[s] || map[s] == kUnset) continue;
    int cur = s;
    while (!visited[cur]) {
      visited[cur] = true;
      cur = map[cur];
    }
    ++cycles;
  }
  return n - (cycles + chains + untouched);
}

double geodesic_metric_perm(const Permutation& g, const Permutation& g2) {
  std::vector<int> cycles = relative_cycles(g, g2);
  double sum_sq = 0.0;
  for (int k : cycles) {
    for (int j = 1; j < k; ++j) {
      double angle = 2.0 * M_PI * j / static_cast<double>(k);
      if (angle > M_PI) angle -= 2.0 * M_PI;  // principal branch (-pi, pi]
      sum_sq += angle * angle;
    }
  }
  return std::sqrt(sum_sq);
}

double renyi_gaussian_equal_cov(const Vector& delta, const Matrix& sigma_mat,
                                double s, double alpha) {
  if (s <= 0.0) throw DataError("renyi_gaussian_equal_cov: s must be positive");
  if (alpha <= 1.0) throw DataError("renyi_gaussian_equal_cov: alpha must be > 1");
  if (sigma_mat.rows() != sigma_mat.cols() || sigma_mat.rows() != delta.size())
    throw DataError("renyi_gaussian_equal_cov: shape mismatch");
  Eigen::LLT<Matrix> llt(sigma_mat);
  if (llt.info() != Eigen::Success ||
      max_abs_diff(sigma_mat, sigma_mat.transpose()) > 1e-9 * max_abs(sigma_mat))
    throw DataError("renyi_gaussian_equal_cov: covariance must be SPD");
  Eigen::VectorXd solved = llt.solve(delta.transpose());
  return alpha / (2.0 * s * s) * delta.dot(solved);
}

std::pair<double, double> top2_singular_values(const Matrix& m) {
  if (std::min(m.rows(), m.cols()) < 2)
    throw DataError("top2_singular_values: need min dimension >= 2");
  // power iteration on the smaller Gram matrix
  Matrix b = m.rows() <= m.cols() ? Matrix(m * m.transpose())
                                  : Matrix(m.transpose() * m);
  const int dim = static_cast<int>(b.rows());
  const double scale = std::max(1.0, max_abs(b));
  constexpr double kTol = 1e-10;
  constexpr int kMaxIter = 10000;
  Rng rng(0x70705EEDULL);

  auto dominant = [&](const Matrix& a) {
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v(i) = rng.normal();
    v.normalize();
    double prev = 0.0;
    for (int it = 0; it < kMaxIter; ++it) {
      Eigen::VectorXd w = a * v;
      double norm = w.norm();
      if (norm < kTol * scale) return std::make_pair(0.0, v);  // null direction
      v = w / norm;
      double value = v.dot(a * v);
      if (it > 0 && std::abs(value - prev) <= kTol * scale)
        return std::make_pair(value, v);
      prev = value;
    }
    throw InvariantError("top2_singular_values: power iteration did not converge");
  };

  auto [ev1, v1] = dominant(b);
  Matrix deflated = b - ev1 * (v1 * v1.transpose());
  auto [ev2, v2] = dominant(deflated);
  (void)v2;
  return {std::sqrt(std::max(0.0, ev1)), std::sqrt(std::max(0.0, ev2))};
}

double epsilon_component(const Matrix& w, double sigma_noise, double alpha) {
  if (sigma_noise <= 0.0) throw DataError("epsilon_component: sigma must be > 0");
  if (max_abs(w) == 0.0) return 0.0;
  auto [l1, l2] = top2_singular_values(w);
  return alpha * (l1 * l1 + l2 * l2) / (4.0 * sigma_noise * sigma_noise);
}

double epsilon_offline(const Matrix& we, const Matrix& wh, double sigma_e,
                       double sigma_h) {
  return M_PI * M_PI *
         (epsilon_component(we, sigma_e, 2.0) + epsilon_component(wh, sigma_h, 2.0));
}

double compose_budget(double eps1, double eps2, int n) {
  if (eps1 < 0.0 || eps2 < 0.0) throw DataError("compose_budget: budgets must be >= 0");
  if (n < 2) throw DataError("compose_budget: n must be >= 2");
  if (eps1 == 0.0) return 0.0;
  double cap = 2.0 * (n - 1) * eps2;
  if (eps1 <= cap) return eps1 - eps1 * eps1 / (4.0 * (n - 1) * eps2);
  return (n - 1) * eps2;
}

std::vector<int> index_to_sequence(uint64_t index, int n, int l) {
  std::vector<int> seq(l);
  for (int i = l - 1; i >= 0; --i) {
    seq[i] = static_cast<int>(index % n);
    index /= n;
  }
  return seq;
}

std::vector<double> exp_mechanism_enumerate(int n, int l, double eps1,
                                            const std::vector<int>& x) {
  if (n < 1 || l < 1) throw DataError("exp_mechanism_enumerate: bad dimensions");
  if (static_cast<int>(x.size()) != l)
    throw DataError("exp_mechanism_enumerate: input length mismatch");
  double space = std::pow(static_cast<double>(n), l);
  if (space > 1e5) throw DataError("exp_mechanism_enumerate: space too large");
  uint64_t count = static_cast<uint64_t>(space + 0.5);

  std::vector<double> probs(count, 0.0);
  double total = 0.0;
  for (uint64_t idx = 0; idx < count; ++idx) {
    std::optional<int> d = seq_perm_metric(x, index_to_sequence(idx, n, l), n);
    if (!d) continue;
    probs[idx] = std::exp(-eps1 * *d);
    total += probs[idx];
  }
  for (double& p : probs) p /= total;
  return probs;
}

double renyi_discrete(const std::vector<double>& p, const std::vector<double>& q,
                      double alpha) {
  if (p.size() != q.size()) throw DataError("renyi_discrete: size mismatch");
  if (alpha <= 1.0) throw DataError("renyi_discrete: alpha must be > 1");
  double sum = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
    sum += std::pow(p[i], alpha) * std::pow(q[i], 1.0 - alpha);
  }
  return std::log(sum) / (alpha - 1.0);
}

double verify_rmdp(const std::vector<std::vector<double>>& family,
                   const std::function<std::optional<double>(int, int)>& metric,
                   double eps, double alpha) {
  double worst = -std::numeric_limits<double>::infinity();
  const int m = static_cast<int>(family.size());
  for (int a = 0; a < m; ++a) {
    for (int b = 0; b < m; ++b) {
      if (a == b) continue;
      std::optional<double> d = metric(a, b);
      if (!d) continue;
      worst = std::max(worst, renyi_discrete(family[a], family[b], alpha) - eps * *d);
    }
  }
  return worst;
}

GaussianMatrixCheck verify_gaussian_matrix_mechanism(const Matrix& theta, double s,
                                                     int trials, uint64_t seed) {
  if (s <= 0.0) throw DataError("verify_gaussian_matrix_mechanism: s must be > 0");
  const int n = static_cast<int>(theta.rows());
  Rng rng(seed);
  GaussianMatrixCheck out;
  out.trials = trials;
  auto [l1, l2] = top2_singular_values(theta);
  out.lambda1 = l1;
  out.lambda2 = l2;
  const double alpha = 2.0;
  out.eps_operator = alpha * l1 * l1 / (2.0 * s * s);
  out.eps_geodesic = alpha * (l1 * l1 + l2 * l2) / (4.0 * s * s);

  out.worst_operator_violation = -std::numeric_limits<double>::infinity();
  out.worst_geodesic_violation = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < trials; ++t) {
    Permutation g(n), g2(n);
    for (int i = 0; i < n; ++i) g[i] = g2[i] = i;
    rng.shuffle(g);
    rng.shuffle(g2);

    Matrix gt(n, theta.cols()), g2t(n, theta.cols());
    for (int i = 0; i < n; ++i) {
      gt.row(i) = theta.row(g[i]);
      g2t.row(i) = theta.row(g2[i]);
    }
    double d2 = alpha / (2.0 * s * s) * (gt - g2t).squaredNorm();

    // ||P_g - P_g'||_F^2 = 2 * #{i : g(i) != g'(i)}
    int moved = 0;
    for (int i = 0; i < n; ++i) moved += g[i] != g2[i] ? 1 : 0;
    double d_op_sq = 2.0 * moved;
    double d_geo = geodesic_metric_perm(g, g2);

    out.worst_operator_violation =
        std::max(out.worst_operator_violation, d2 - out.eps_operator * d_op_sq);
    out.worst_geodesic_violation =
        std::max(out.worst_geodesic_violation, d2 - out.eps_geodesic * d_geo * d_geo);
  }
  return out;
}

BudgetReport budget_report(const ModelWeights& w, double alpha_e, double alpha_h,
                           std::optional<double> eps1) {
  if (alpha_e <= 0.0 || alpha_h <= 0.0)
    throw DataError("budget_report: noise coefficients must be positive");
  BudgetReport r;
  r.sigma_e = alpha_e * entry_stddev(w.embed);
  r.sigma_h = alpha_h * entry_stddev(w.head);
  if (r.sigma_e <= 0.0 || r.sigma_h <= 0.0)
    throw DataError("budget_report: degenerate weight matrices give zero sigma");
  std::tie(r.lambda1_e, r.lambda2_e) = top2_singular_values(w.embed);
  std::tie(r.lambda1_h, r.lambda2_h) = top2_singular_values(w.head);
  r.eps_e = epsilon_component(w.embed, r.sigma_e, r.alpha);
  r.eps_h = epsilon_component(w.head, r.sigma_h, r.alpha);
  r.eps2 = M_PI * M_PI * (r.eps_e + r.eps_h);
  if (eps1) {
    r.eps1 = eps1;
    r.composed = compose_budget(*eps1, r.eps2, w.config.n_vocab);
    r.branch = *eps1 <= 2.0 * (w.config.n_vocab - 1) * r.eps2 ? "quadratic" : "linear";
  }
  return r;
}

}  // namespace covobf
