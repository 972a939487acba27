#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "distlearn/common.hpp"
#include "distlearn/model.hpp"
#include "distlearn/structure.hpp"

namespace distlearn {

/// Sufficient statistic of a run: per-arm pull totals and per-output counts.
struct ObservationCounts {
  std::vector<std::int64_t> pulls;  // t_k per arm
  std::vector<std::vector<std::int64_t>> output_counts;  // t_{k,i}
  std::int64_t total = 0;

  static ObservationCounts zeros(const SampleGenerationMatrix& sgm) {
    ObservationCounts c;
    c.pulls.assign(sgm.num_arms(), 0);
    for (int k = 0; k < sgm.num_arms(); ++k)
      c.output_counts.emplace_back(sgm.outputs_of(k), 0);
    return c;
  }

  void record(int arm, int output) {
    ++pulls[arm];
    ++output_counts[arm][output];
    ++total;
  }

  int num_arms() const { return static_cast<int>(pulls.size()); }
};

enum class EstimatorKind { pseudoinverse, max_likelihood };

struct DistributionEstimate {
  Eigen::VectorXd p;  // length n; max-likelihood keeps it strictly inside the
                      // simplex, pseudoinverse entries may leave [0,1]
  EstimatorKind kind = EstimatorKind::pseudoinverse;
  std::int64_t step = 0;
  bool converged = true;  // false when the fixed-point hit max_iter
  int iterations = 0;
};

/// Empirical per-output frequencies q_hat(k,i) = t_{k,i} / t_k.
inline OutputProbabilities empirical_output_frequencies(
    const SampleGenerationMatrix& sgm, const ObservationCounts& counts) {
  OutputProbabilities out;
  out.q.resize(sgm.total_rows());
  for (int k = 0; k < sgm.num_arms(); ++k) {
    if (counts.pulls[k] <= 0)
      throw std::invalid_argument(
          "empirical_output_frequencies: arm " + std::to_string(k + 1) +
          " has no pulls");
    const double t_k = static_cast<double>(counts.pulls[k]);
    for (int i = 0; i < sgm.outputs_of(k); ++i)
      out.q[sgm.row_offsets[k] + i] =
          static_cast<double>(counts.output_counts[k][i]) / t_k;
    out.block_sizes.push_back(sgm.outputs_of(k));
    out.block_offsets.push_back(sgm.row_offsets[k]);
  }
  return out;
}

/// Moore-Penrose pseudoinverse of the stacked matrix.
inline Eigen::MatrixXd pseudoinverse(const Eigen::MatrixXd& a) {
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
  cod.setThreshold(kRankThreshold);
  return cod.pseudoInverse();
}

/// Linear estimate p = A^+ q_hat. Requires rank(A) = n; the solve is exact
/// whenever q_hat lies in the range of A.
inline DistributionEstimate pseudoinverse_estimate(
    const SampleGenerationMatrix& sgm, const OutputProbabilities& q_hat,
    std::int64_t step = 0) {
  if (rank_of(sgm.stacked) != sgm.alphabet_size())
    throw IdentifiabilityError(
        "pseudoinverse_estimate: stacked matrix rank is below the alphabet "
        "size; the linear system has no unique solution");
  DistributionEstimate est;
  est.p = pseudoinverse(sgm.stacked) * q_hat.q;
  est.kind = EstimatorKind::pseudoinverse;
  est.step = step;
  return est;
}

/// Smoothed log-likelihood: sum over outputs of (t_{k,i} + 1) log q(k,i)
/// with q = A p. Evaluates to -inf when some q(k,i) <= 0.
inline double smoothed_log_likelihood(const SampleGenerationMatrix& sgm,
                                      const ObservationCounts& counts,
                                      const Eigen::VectorXd& p) {
  double ll = 0.0;
  for (int k = 0; k < sgm.num_arms(); ++k) {
    const Eigen::VectorXd q = sgm.per_arm[k] * p;
    for (int i = 0; i < sgm.outputs_of(k); ++i) {
      const double weight =
          static_cast<double>(counts.output_counts[k][i]) + 1.0;
      if (q[i] <= 0.0) return -std::numeric_limits<double>::infinity();
      ll += weight * std::log(q[i]);
    }
  }
  return ll;
}

struct MleOptions {
  Eigen::VectorXd init;  // empty => uniform
  double tol = 1e-10;
  int max_iter = 10000;
};

/// Maximizer of the smoothed log-likelihood over the simplex, computed by
/// the multiplicative fixed-point update with per-iteration renormalization:
///
///   p_j <- p_j * sum_{k,i} (t_{k,i}+1) A_k(i,j) / q(k,i),  then normalize.
///
/// The normalizer is the constant total weight t + m, so this is the EM
/// update for the smoothed likelihood; with an invertible arm it reproduces
/// the closed form (t_j + 1) / (t + n). Iterates are floored at 1e-15 before
/// renormalizing so no coordinate becomes an absorbing zero. Stops when
/// max_j |p_new - p_old| < tol; hitting max_iter flags the estimate instead
/// of throwing.
inline DistributionEstimate mle_estimate(const SampleGenerationMatrix& sgm,
                                         const ObservationCounts& counts,
                                         const MleOptions& options = {}) {
  const int n = sgm.alphabet_size();
  Eigen::VectorXd p = options.init.size() == 0
                          ? Eigen::VectorXd::Constant(n, 1.0 / n)
                          : options.init;
  if (p.size() != n)
    throw std::invalid_argument("mle_estimate: init length mismatch");

  // Per-output smoothed weights, flattened to the stacked row order.
  Eigen::VectorXd weights(sgm.total_rows());
  for (int k = 0; k < sgm.num_arms(); ++k)
    for (int i = 0; i < sgm.outputs_of(k); ++i)
      weights[sgm.row_offsets[k] + i] =
          static_cast<double>(counts.output_counts[k][i]) + 1.0;

#ifndef NDEBUG
  double prev_ll = smoothed_log_likelihood(sgm, counts, p);
#endif

  DistributionEstimate est;
  est.kind = EstimatorKind::max_likelihood;
  est.step = counts.total;
  est.converged = false;
  int iter = 0;
  double prev_delta = std::numeric_limits<double>::infinity();
  for (; iter < options.max_iter; ++iter) {
    const Eigen::VectorXd q = sgm.stacked * p;
    Eigen::VectorXd ratio = weights.array() / q.array();
    Eigen::VectorXd raw =
        p.array() * (sgm.stacked.transpose() * ratio).array();
    raw = raw.cwiseMax(1e-15);
    const Eigen::VectorXd next = raw / raw.sum();
    const double delta = (next - p).cwiseAbs().maxCoeff();
    p = next;
#ifndef NDEBUG
    const double ll = smoothed_log_likelihood(sgm, counts, p);
    assert(ll >= prev_ll - 1e-9 * (1.0 + std::abs(prev_ll)));
    prev_ll = ll;
#endif
    // The iteration converges linearly, so the remaining distance to the
    // fixed point is about delta * r / (1 - r) for contraction ratio r.
    // Requiring that extrapolation to drop below tol (on top of the raw
    // step test) makes the converged output tol-accurate, not merely
    // tol-stationary, so it cannot depend on the starting point.
    const double contraction =
        std::min(delta / prev_delta, 1.0 - 1e-4);
    const double projected = delta * contraction / (1.0 - contraction);
    prev_delta = delta;
    if (delta < options.tol && projected < options.tol) {
      est.converged = true;
      ++iter;
      break;
    }
  }
  est.iterations = iter;
  est.p = p;
  return est;
}

}  // namespace distlearn
