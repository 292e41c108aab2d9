#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "core/linalg.hpp"
#include "core/model.hpp"

namespace covobf {

using Permutation = std::vector<int>;

// Minimum number of transpositions from g to g': n - cycles(g^-1 o g').
int perm_metric(const Permutation& g, const Permutation& g2);

// Minimum alphabet transpositions mapping sequence x to x'; nullopt when no
// alphabet permutation is consistent with the pair.
std::optional<int> seq_perm_metric(const std::vector<int>& x,
                                   const std::vector<int>& x2, int n);

// Frobenius norm of the principal matrix logarithm of perm(g^-1 g'),
// computed from the cycle structure: a k-cycle contributes the angles
// {2*pi*j/k wrapped to (-pi, pi]}.
double geodesic_metric_perm(const Permutation& g, const Permutation& g2);

// D_alpha(N(mu, s^2 Sigma) || N(mu + delta, s^2 Sigma)) closed form:
// (alpha / (2 s^2)) delta Sigma^-1 delta^T.
double renyi_gaussian_equal_cov(const Vector& delta, const Matrix& sigma_mat,
                                double s, double alpha);

// Power iteration with deflation, tolerance 1e-10. Throws after 1e4
// iterations without convergence.
std::pair<double, double> top2_singular_values(const Matrix& m);

// alpha (lambda1^2 + lambda2^2) / (4 sigma_noise^2)
double epsilon_component(const Matrix& w, double sigma_noise, double alpha);

// pi^2 (eps_e + eps_h) at alpha = 2.
double epsilon_offline(const Matrix& we, const Matrix& wh, double sigma_e,
                       double sigma_h);

// Piecewise composition of the online budget eps1 with the offline budget
// eps2 over an n-token vocabulary.
double compose_budget(double eps1, double eps2, int n);

// Explicit exponential-mechanism distribution p(y|x) ~ e^{-eps1 d(x,y)} over
// all of Z_n^l (lexicographic order); infinite-distance outputs get mass 0.
// Throws when n^l > 1e5.
std::vector<double> exp_mechanism_enumerate(int n, int l, double eps1,
                                            const std::vector<int>& x);

// Sequence at lexicographic index, most-significant symbol first.
std::vector<int> index_to_sequence(uint64_t index, int n, int l);

// (1/(alpha-1)) log sum p^alpha q^(1-alpha); +inf on support violation.
double renyi_discrete(const std::vector<double>& p, const std::vector<double>& q,
                      double alpha);

// Max over input pairs of D_alpha(p(.|x) || p(.|x')) - eps * d(x, x');
// pairs at infinite distance are skipped. <= 0 means the mechanism satisfies
// (alpha, eps, d)-RmDP on the enumerated space.
double verify_rmdp(const std::vector<std::vector<double>>& family,
                   const std::function<std::optional<double>(int, int)>& metric,
                   double eps, double alpha);

struct GaussianMatrixCheck {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double eps_operator = 0.0;
  double eps_geodesic = 0.0;
  double worst_operator_violation = 0.0;  // max(D2 - eps * d^2); <= 0 passes
  double worst_geodesic_violation = 0.0;
  int trials = 0;
};

// Random permutation pairs acting on theta's rows; closed-form Renyi-2
// divergence of N(g theta, s^2 I) vs N(g' theta, s^2 I) checked against the
// operator-norm and geodesic budget forms.
GaussianMatrixCheck verify_gaussian_matrix_mechanism(const Matrix& theta, double s,
                                                     int trials, uint64_t seed);

struct BudgetReport {
  double alpha = 2.0;
  double sigma_e = 0.0;  // embedding noise std (alpha_e * std(W_e))
  double sigma_h = 0.0;
  double lambda1_e = 0.0, lambda2_e = 0.0;
  double lambda1_h = 0.0, lambda2_h = 0.0;
  double eps_e = 0.0;
  double eps_h = 0.0;
  double eps2 = 0.0;
  std::optional<double> eps1;
  std::optional<double> composed;
  std::string branch;  // "quadratic" | "linear" | ""
};

BudgetReport budget_report(const ModelWeights& w, double alpha_e, double alpha_h,
                           std::optional<double> eps1);

}  // namespace covobf
