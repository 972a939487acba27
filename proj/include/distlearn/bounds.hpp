#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "distlearn/common.hpp"
#include "distlearn/estimators.hpp"
#include "distlearn/model.hpp"

namespace distlearn {

/// Fisher information of the free parameters theta = (p_1 .. p_{n-1}) given
/// a per-arm pull allocation. `pulls` may be fractional (an allocation of a
/// budget) as well as integral.
struct FisherInformation {
  Eigen::MatrixXd matrix;  // (n-1) x (n-1), symmetric PSD
  Eigen::VectorXd pulls;
};

/// A fraction of the pull budget assigned to each arm.
struct AllocationFraction {
  Eigen::VectorXd alpha;  // nonnegative, sums to 1
  double grid_step = 0.0;
};

/// Estimator-agnostic floor on the error: sum_j p_j (1 - p_j) / t. This is
/// the variance of the empirical estimator fed by an invertible arm, which
/// no unbiased scheme can beat.
inline double crude_lower_bound(const Eigen::VectorXd& p, std::int64_t t) {
  if (t < 1) throw std::invalid_argument("crude_lower_bound: t must be >= 1");
  double sum = 0.0;
  for (Eigen::Index j = 0; j < p.size(); ++j) sum += p[j] * (1.0 - p[j]);
  return sum / static_cast<double>(t);
}

/// Fisher information contributed by a single pull of one arm, in the
/// derivative outer-product form: with q = A_k p and
/// d q_l / d theta_i = A_k(l,i) - A_k(l,n), the (i,j) entry is
/// sum_l (A_k(l,i) - A_k(l,n)) (A_k(l,j) - A_k(l,n)) / q_l.
/// For 0/1 matrices this is entry-wise identical to the two-term expansion
/// over the indicator of column n (see the bounds tests).
inline Eigen::MatrixXd arm_unit_fisher(const Eigen::MatrixXd& a_k,
                                       const Eigen::VectorXd& q_k) {
  const Eigen::Index n = a_k.cols();
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(n - 1, n - 1);
  for (Eigen::Index l = 0; l < a_k.rows(); ++l) {
    if (q_k[l] <= 0.0)
      throw SingularModelError(
          "arm_unit_fisher: output probability is zero; the model is "
          "singular at this distribution");
    const Eigen::VectorXd grad =
        a_k.row(l).head(n - 1).transpose().array() - a_k(l, n - 1);
    info.noalias() += (grad * grad.transpose()) / q_k[l];
  }
  return info;
}

/// Fisher information of theta for the whole arm set at allocation `pulls`.
inline FisherInformation fisher_information(const SampleGenerationMatrix& sgm,
                                            const Eigen::VectorXd& p,
                                            const Eigen::VectorXd& pulls) {
  if (pulls.size() != sgm.num_arms())
    throw std::invalid_argument("fisher_information: pulls length mismatch");
  if (p.size() != sgm.alphabet_size())
    throw std::invalid_argument("fisher_information: p length mismatch");
  const int n = sgm.alphabet_size();
  FisherInformation info;
  info.pulls = pulls;
  info.matrix = Eigen::MatrixXd::Zero(n - 1, n - 1);
  for (int k = 0; k < sgm.num_arms(); ++k) {
    if (pulls[k] < 0.0)
      throw std::invalid_argument("fisher_information: negative pull count");
    if (pulls[k] == 0.0) continue;
    const Eigen::VectorXd q_k = sgm.per_arm[k] * p;
    info.matrix.noalias() += pulls[k] * arm_unit_fisher(sgm.per_arm[k], q_k);
  }
  return info;
}

namespace detail {

constexpr double kConditionLimit = 1e12;

// trace(I^-1) + ones' I^-1 ones via the symmetric eigendecomposition,
// rejecting matrices that are singular or conditioned worse than 1e12.
inline double inverse_trace_plus_sum(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const Eigen::VectorXd& lambda = es.eigenvalues();
  const double lambda_min = lambda[0];
  const double lambda_max = lambda[lambda.size() - 1];
  if (!(lambda_min > 0.0) || lambda_max / lambda_min > kConditionLimit)
    throw SingularModelError(
        "crlb_error_bound: Fisher matrix is singular or near-singular");
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(m.rows());
  double bound = 0.0;
  for (Eigen::Index a = 0; a < lambda.size(); ++a) {
    const double projection = es.eigenvectors().col(a).dot(ones);
    bound += (1.0 + projection * projection) / lambda[a];
  }
  return bound;
}

}  // namespace detail

/// Cramer-Rao style error bound: trace of the inverse Fisher matrix plus the
/// full element sum of the inverse (the variance of p_n rides on the
/// covariances of the first n-1 coordinates).
inline double crlb_error_bound(const FisherInformation& info) {
  return detail::inverse_trace_plus_sum(info.matrix);
}

/// Variance-style upper bound for the pseudoinverse estimator:
/// U = sum_j sum_k sum_i (A^+(j, s_k + i))^2 q(k,i)(1 - q(k,i)) / t_k,
/// with q induced by `p_tilde`. Pass the reduced matrix set; every arm must
/// have at least one pull.
inline double pi_variance_upper_bound(const SampleGenerationMatrix& sgm,
                                      const Eigen::VectorXd& p_tilde,
                                      const Eigen::VectorXd& pulls) {
  if (pulls.size() != sgm.num_arms())
    throw std::invalid_argument(
        "pi_variance_upper_bound: pulls length mismatch");
  for (Eigen::Index k = 0; k < pulls.size(); ++k)
    if (!(pulls[k] > 0.0))
      throw std::invalid_argument(
          "pi_variance_upper_bound: arm " + std::to_string(k + 1) +
          " has no pulls");
  const Eigen::MatrixXd pinv = pseudoinverse(sgm.stacked);
  const Eigen::VectorXd q = sgm.stacked * p_tilde;
  double total = 0.0;
  for (int k = 0; k < sgm.num_arms(); ++k) {
    for (int i = 0; i < sgm.outputs_of(k); ++i) {
      const int row = sgm.row_offsets[k] + i;
      const double variance = q[row] * (1.0 - q[row]) / pulls[k];
      total += pinv.col(row).squaredNorm() * variance;
    }
  }
  return total;
}

/// Minimizes crlb_error_bound over the allocation-fraction lattice of
/// spacing `grid_step` (entries are multiples of 1/round(1/grid_step)).
/// Singular lattice points are skipped; ties keep the lexicographically
/// smallest alpha. K is capped at 6 because the lattice size explodes.
inline std::pair<AllocationFraction, double> crlb_allocation_search(
    const SampleGenerationMatrix& sgm, const Eigen::VectorXd& p,
    std::int64_t t, double grid_step) {
  const int num_arms = sgm.num_arms();
  if (num_arms > 6)
    throw std::invalid_argument(
        "crlb_allocation_search: more than 6 arms is not supported");
  if (!(grid_step > 0.0) || grid_step > 0.5)
    throw std::invalid_argument(
        "crlb_allocation_search: grid_step must be in (0, 0.5]");
  if (t < 1)
    throw std::invalid_argument("crlb_allocation_search: t must be >= 1");

  if (num_arms == 1) {
    AllocationFraction best;
    best.alpha = Eigen::VectorXd::Ones(1);
    best.grid_step = grid_step;
    const auto info = fisher_information(
        sgm, p, Eigen::VectorXd::Constant(1, static_cast<double>(t)));
    return {best, crlb_error_bound(info)};
  }

  // q does not depend on the allocation, so each arm's unit information is
  // fixed across the whole lattice.
  std::vector<Eigen::MatrixXd> unit_info;
  unit_info.reserve(num_arms);
  for (int k = 0; k < num_arms; ++k)
    unit_info.push_back(arm_unit_fisher(sgm.per_arm[k], sgm.per_arm[k] * p));

  const int resolution =
      std::max<int>(1, static_cast<int>(std::llround(1.0 / grid_step)));
  const double budget = static_cast<double>(t);

  Eigen::VectorXd best_alpha;
  double best_value = std::numeric_limits<double>::infinity();
  std::vector<int> ticks(num_arms, 0);
  const int n = sgm.alphabet_size();
  Eigen::MatrixXd accumulated(n - 1, n - 1);

  // Lexicographic enumeration of compositions of `resolution` into K parts;
  // strict improvement keeps the lexicographically smallest tie.
  auto enumerate = [&](auto&& self, int arm, int remaining) -> void {
    if (arm == num_arms - 1) {
      ticks[arm] = remaining;
      accumulated.setZero();
      for (int k = 0; k < num_arms; ++k) {
        if (ticks[k] == 0) continue;
        accumulated.noalias() +=
            (budget * ticks[k] / resolution) * unit_info[k];
      }
      try {
        const double value = detail::inverse_trace_plus_sum(accumulated);
        if (value < best_value) {
          best_value = value;
          best_alpha.resize(num_arms);
          for (int k = 0; k < num_arms; ++k)
            best_alpha[k] = static_cast<double>(ticks[k]) / resolution;
        }
      } catch (const SingularModelError&) {
        // unidentifiable allocation, skip
      }
      return;
    }
    for (int c = 0; c <= remaining; ++c) {
      ticks[arm] = c;
      self(self, arm + 1, remaining - c);
    }
  };
  enumerate(enumerate, 0, resolution);

  if (!std::isfinite(best_value))
    throw SingularModelError(
        "crlb_allocation_search: every lattice allocation is singular");
  AllocationFraction best;
  best.alpha = best_alpha;
  best.grid_step = grid_step;
  return {best, best_value};
}

}  // namespace distlearn
