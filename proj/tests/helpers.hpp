// Shared fixtures and independent oracle implementations for the test
// suites. The oracles deliberately avoid the library's computation paths:
// likelihoods are maximized by brute-force grid search, Fisher matrices are
// differentiated numerically, pseudoinverses come from a separate SVD route,
// and row-space membership is decided by least-squares residuals.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "distlearn/bounds.hpp"
#include "distlearn/common.hpp"
#include "distlearn/estimators.hpp"
#include "distlearn/model.hpp"
#include "distlearn/structure.hpp"

namespace testutil {

using distlearn::ObservationCounts;
using distlearn::ProblemSpec;
using distlearn::Rng;
using distlearn::SampleGenerationMatrix;

// ---------------------------------------------------------------------------
// Fixture problems

// Three symbols, three arms, each arm pooling a different pair of symbols.
// No arm is invertible or redundant and the stacked matrix has rank 3.
inline ProblemSpec ambiguous_three_arm_problem() {
  return distlearn::parse_problem_spec(R"({
    "alphabet_size": 3,
    "arms": [["a","b","b"], ["c","d","c"], ["e","e","f"]],
    "distribution": [0.2, 0.3, 0.5],
    "horizon": 1000, "trials": 10, "seed": 1
  })");
}

// Four symbols, two arms; symbols 2 and 3 are pooled by both arms, so only
// p2 + p3 is recoverable and the stacked matrix has rank 3 < 4. Arm 2's row
// space sits strictly inside arm 1's.
inline ProblemSpec unidentifiable_two_arm_problem() {
  return distlearn::parse_problem_spec(R"({
    "alphabet_size": 4,
    "arms": [["a","b","b","c"], ["d","d","d","e"]],
    "distribution": [0.1, 0.2, 0.3, 0.4],
    "horizon": 1000, "trials": 10, "seed": 1
  })");
}

inline ProblemSpec identity_problem(int n, const Eigen::VectorXd& p,
                                    std::uint64_t seed = 1) {
  ProblemSpec spec;
  spec.alphabet_size = n;
  std::vector<std::string> labels;
  for (int j = 0; j < n; ++j) labels.push_back("z" + std::to_string(j));
  spec.arms.push_back(distlearn::make_arm(0, labels));
  spec.true_distribution = p;
  spec.horizon = 1000;
  spec.trials = 10;
  spec.master_seed = seed;
  distlearn::validate_problem_spec(spec);
  return spec;
}

// ---------------------------------------------------------------------------
// Random generators

inline Eigen::VectorXd random_simplex(Rng& rng, int n) {
  Eigen::VectorXd p(n);
  for (int i = 0; i < n; ++i)
    p[i] = -std::log(1.0 - distlearn::uniform01(rng));
  return p / p.sum();
}

// Simplex point with every entry at least `min_mass`. Finite-difference
// oracles need this: their truncation error grows like 1/q^3 near the
// boundary while the quantities under test only grow like 1/q.
inline Eigen::VectorXd random_interior_simplex(Rng& rng, int n,
                                               double min_mass = 0.05) {
  for (;;) {
    const Eigen::VectorXd p = random_simplex(rng, n);
    if (p.minCoeff() >= min_mass) return p;
  }
}

// Random arm over n symbols with at least two distinct outputs (labels are
// canonicalized by make_arm).
inline distlearn::ArmOutputs random_arm(Rng& rng, int arm_index, int n) {
  for (;;) {
    const int buckets =
        2 + static_cast<int>(distlearn::uniform_index(rng, std::max(1, n - 1)));
    std::vector<std::string> labels(n);
    for (int j = 0; j < n; ++j)
      labels[j] =
          "o" + std::to_string(distlearn::uniform_index(rng, buckets));
    auto arm = distlearn::make_arm(arm_index, labels);
    if (arm.num_outputs() >= 2) return arm;
  }
}

inline ProblemSpec random_problem(Rng& rng, int n, int num_arms) {
  ProblemSpec spec;
  spec.alphabet_size = n;
  for (int k = 0; k < num_arms; ++k)
    spec.arms.push_back(random_arm(rng, k, n));
  spec.true_distribution = random_simplex(rng, n);
  spec.horizon = 1000;
  spec.trials = 10;
  spec.master_seed = rng();
  distlearn::validate_problem_spec(spec);
  return spec;
}

inline ProblemSpec random_identifiable_problem(Rng& rng, int n,
                                               int num_arms) {
  for (;;) {
    ProblemSpec spec = random_problem(rng, n, num_arms);
    const auto matrices = distlearn::build_matrices(spec);
    if (distlearn::rank_of(matrices.stacked) == n) return spec;
  }
}

inline ObservationCounts random_counts(Rng& rng,
                                       const SampleGenerationMatrix& sgm,
                                       std::int64_t max_per_arm) {
  auto counts = ObservationCounts::zeros(sgm);
  for (int k = 0; k < sgm.num_arms(); ++k) {
    const auto pulls =
        1 + distlearn::uniform_index(rng, static_cast<std::size_t>(max_per_arm));
    for (std::size_t s = 0; s < pulls; ++s)
      counts.record(k, static_cast<int>(distlearn::uniform_index(
                           rng, static_cast<std::size_t>(sgm.outputs_of(k)))));
  }
  return counts;
}

// ---------------------------------------------------------------------------
// Row-space oracle: least-squares membership of every row

inline bool row_space_subset_lstsq(const Eigen::MatrixXd& a_r,
                                   const Eigen::MatrixXd& a_s) {
  const Eigen::MatrixXd basis = a_s.transpose();  // columns span row space
  for (Eigen::Index i = 0; i < a_r.rows(); ++i) {
    const Eigen::VectorXd row = a_r.row(i).transpose();
    const Eigen::VectorXd coeffs =
        basis.colPivHouseholderQr().solve(row);
    if ((basis * coeffs - row).norm() >= 1e-9) return false;
  }
  return true;
}

inline bool row_space_strict_subset_lstsq(const Eigen::MatrixXd& a_r,
                                          const Eigen::MatrixXd& a_s) {
  return row_space_subset_lstsq(a_r, a_s) &&
         !row_space_subset_lstsq(a_s, a_r);
}

// ---------------------------------------------------------------------------
// Likelihood oracles

// Smoothed log-likelihood computed directly from the counts, independent of
// the library's vectorized evaluation.
inline double oracle_log_likelihood(const SampleGenerationMatrix& sgm,
                                    const ObservationCounts& counts,
                                    const Eigen::VectorXd& p) {
  double ll = 0.0;
  for (int k = 0; k < sgm.num_arms(); ++k) {
    for (int i = 0; i < sgm.outputs_of(k); ++i) {
      double q = 0.0;
      for (int j = 0; j < sgm.alphabet_size(); ++j)
        q += sgm.per_arm[k](i, j) * p[j];
      const double weight = 1.0 + static_cast<double>(counts.output_counts[k][i]);
      if (q <= 0.0) return -std::numeric_limits<double>::infinity();
      ll += weight * std::log(q);
    }
  }
  return ll;
}

// Brute-force maximizer of the smoothed log-likelihood over the 2-simplex
// lattice with the given step (alphabet size 3 only).
inline Eigen::VectorXd grid_search_mle_3(const SampleGenerationMatrix& sgm,
                                         const ObservationCounts& counts,
                                         double step = 0.001) {
  const int ticks = static_cast<int>(std::llround(1.0 / step));
  Eigen::VectorXd best(3);
  double best_ll = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd p(3);
  for (int i = 0; i <= ticks; ++i) {
    for (int j = 0; j <= ticks - i; ++j) {
      p[0] = static_cast<double>(i) / ticks;
      p[1] = static_cast<double>(j) / ticks;
      p[2] = 1.0 - p[0] - p[1];
      const double ll = oracle_log_likelihood(sgm, counts, p);
      if (ll > best_ll) {
        best_ll = ll;
        best = p;
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Fisher oracles

// Expected log-likelihood of the free parameters theta = (p_1..p_{n-1})
// under the true distribution, for the finite-difference Hessian below.
inline double expected_log_likelihood(const SampleGenerationMatrix& sgm,
                                      const Eigen::VectorXd& p_true,
                                      const Eigen::VectorXd& pulls,
                                      const Eigen::VectorXd& theta) {
  const int n = sgm.alphabet_size();
  Eigen::VectorXd p(n);
  p.head(n - 1) = theta;
  p[n - 1] = 1.0 - theta.sum();
  double total = 0.0;
  for (int k = 0; k < sgm.num_arms(); ++k) {
    const Eigen::VectorXd q_true = sgm.per_arm[k] * p_true;
    const Eigen::VectorXd q = sgm.per_arm[k] * p;
    for (int i = 0; i < sgm.outputs_of(k); ++i)
      total += pulls[k] * q_true[i] * std::log(q[i]);
  }
  return total;
}

// Negative Hessian of the expected log-likelihood by central differences.
inline Eigen::MatrixXd finite_difference_fisher(
    const SampleGenerationMatrix& sgm, const Eigen::VectorXd& p_true,
    const Eigen::VectorXd& pulls, double h = 1e-5) {
  const int n = sgm.alphabet_size();
  const Eigen::VectorXd theta0 = p_true.head(n - 1);
  Eigen::MatrixXd hessian(n - 1, n - 1);
  for (int i = 0; i < n - 1; ++i) {
    for (int j = 0; j < n - 1; ++j) {
      Eigen::VectorXd pp = theta0, pm = theta0, mp = theta0, mm = theta0;
      pp[i] += h; pp[j] += h;
      pm[i] += h; pm[j] -= h;
      mp[i] -= h; mp[j] += h;
      mm[i] -= h; mm[j] -= h;
      hessian(i, j) = (expected_log_likelihood(sgm, p_true, pulls, pp) -
                       expected_log_likelihood(sgm, p_true, pulls, pm) -
                       expected_log_likelihood(sgm, p_true, pulls, mp) +
                       expected_log_likelihood(sgm, p_true, pulls, mm)) /
                      (4.0 * h * h);
    }
  }
  return -hessian;
}

// Two-term form of the Fisher entries, expanded around the indicator of the
// last column, as an independent route to the same matrix. Terms are 0/1 so
// each summand matches the derivative outer-product form bit for bit; the
// accumulation order mirrors the library's (per-arm sums scaled by pulls)
// so the assembled matrices can be compared exactly.
inline Eigen::MatrixXd two_term_fisher(const SampleGenerationMatrix& sgm,
                                       const Eigen::VectorXd& p,
                                       const Eigen::VectorXd& pulls) {
  const int n = sgm.alphabet_size();
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(n - 1, n - 1);
  for (int k = 0; k < sgm.num_arms(); ++k) {
    if (pulls[k] == 0.0) continue;
    const Eigen::MatrixXd& a = sgm.per_arm[k];
    const Eigen::VectorXd q = a * p;
    Eigen::MatrixXd arm_info = Eigen::MatrixXd::Zero(n - 1, n - 1);
    for (Eigen::Index l = 0; l < a.rows(); ++l) {
      for (int i = 0; i < n - 1; ++i) {
        for (int j = 0; j < n - 1; ++j) {
          const double first = a(l, i) * a(l, j) * (1.0 - a(l, n - 1));
          const double second =
              (1.0 - a(l, i)) * (1.0 - a(l, j)) * a(l, n - 1);
          arm_info(i, j) += (first + second) / q[l];
        }
      }
    }
    info += pulls[k] * arm_info;
  }
  return info;
}

// ---------------------------------------------------------------------------
// Pseudoinverse-variance oracle via an SVD pseudoinverse

inline Eigen::MatrixXd svd_pseudoinverse(const Eigen::MatrixXd& a) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > distlearn::kRankThreshold * sv[0]) inv[i] = 1.0 / sv[i];
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

inline double oracle_variance_bound(const SampleGenerationMatrix& sgm,
                                    const Eigen::VectorXd& p_tilde,
                                    const Eigen::VectorXd& pulls) {
  const Eigen::MatrixXd pinv = svd_pseudoinverse(sgm.stacked);
  double total = 0.0;
  for (int j = 0; j < sgm.alphabet_size(); ++j) {
    for (int k = 0; k < sgm.num_arms(); ++k) {
      const int offset = sgm.row_offsets[k];
      for (int i = 0; i < sgm.outputs_of(k); ++i) {
        double q = 0.0;
        for (int c = 0; c < sgm.alphabet_size(); ++c)
          q += sgm.per_arm[k](i, c) * p_tilde[c];
        total += pinv(j, offset + i) * pinv(j, offset + i) * q * (1.0 - q) /
                 pulls[k];
      }
    }
  }
  return total;
}

// Argmax set with entries within `rel_tol` of the maximum, to absorb float
// noise between two algebraically identical routes.
inline std::vector<int> argmax_set(const Eigen::VectorXd& scores,
                                   double rel_tol = 1e-12) {
  const double max_score = scores.maxCoeff();
  const double slack = rel_tol * std::max(1.0, std::abs(max_score));
  std::vector<int> set;
  for (Eigen::Index k = 0; k < scores.size(); ++k)
    if (scores[k] >= max_score - slack) set.push_back(static_cast<int>(k));
  return set;
}

}  // namespace testutil
