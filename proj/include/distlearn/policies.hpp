#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "distlearn/bounds.hpp"
#include "distlearn/common.hpp"
#include "distlearn/estimators.hpp"
#include "distlearn/model.hpp"

namespace distlearn {

enum class PolicyKind { round_robin, ub_pull, lb_pull, fixed_fraction };

inline std::string policy_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::round_robin: return "rr";
    case PolicyKind::ub_pull: return "ub";
    case PolicyKind::lb_pull: return "lb";
    case PolicyKind::fixed_fraction: return "fixed";
  }
  return "?";
}

/// Mutable per-run state shared by the arm-selection rules. All indices are
/// 0-based positions in the surviving (post-elimination) arm list.
struct PolicyState {
  PolicyKind kind = PolicyKind::round_robin;
  ObservationCounts counts;
  Eigen::VectorXd estimate;  // current distribution estimate, length n
  std::optional<AllocationFraction> alpha;  // fixed-fraction only
  Rng rng{0};
  std::int64_t step = 0;               // t, number of pulls taken so far
  std::int64_t lb_fallback_steps = 0;  // LB steps served by round-robin
};

/// Round-robin schedule: pull t (1-based) maps to arm (t mod K), 0-based,
/// so the first K pulls visit every arm exactly once.
inline int round_robin_arm(std::int64_t t, int num_arms) {
  if (num_arms < 1)
    throw std::invalid_argument("round_robin_arm: need at least one arm");
  return static_cast<int>(t % num_arms);
}

inline std::optional<int> first_unpulled(const ObservationCounts& counts) {
  for (int k = 0; k < counts.num_arms(); ++k)
    if (counts.pulls[k] == 0) return k;
  return std::nullopt;
}

namespace detail {

// Scores within a relative 1e-12 band of the maximum count as tied; exact
// ties between symmetric arms rarely survive floating point otherwise.
inline int argmax_with_random_ties(const Eigen::VectorXd& scores, Rng& rng) {
  const double max_score = scores.maxCoeff();
  const double slack = 1e-12 * std::max(1.0, std::abs(max_score));
  std::vector<int> best;
  for (Eigen::Index k = 0; k < scores.size(); ++k)
    if (scores[k] >= max_score - slack) best.push_back(static_cast<int>(k));
  if (best.size() == 1) return best.front();
  return best[uniform_index(rng, best.size())];
}

}  // namespace detail

/// Per-arm scores zeta_k = sum_i ||A^+ column (s_k + i)||^2 q(k,i)(1 - q(k,i))
/// with q induced by the current estimate. The variance-bound decrease from
/// one extra pull of arm k is zeta_k (1/t_k - 1/(t_k+1)).
inline Eigen::VectorXd ubpull_zeta(const SampleGenerationMatrix& sgm,
                                   const Eigen::MatrixXd& pinv,
                                   const Eigen::VectorXd& estimate) {
  const Eigen::VectorXd q = sgm.stacked * estimate;
  Eigen::VectorXd zeta = Eigen::VectorXd::Zero(sgm.num_arms());
  for (int k = 0; k < sgm.num_arms(); ++k) {
    for (int i = 0; i < sgm.outputs_of(k); ++i) {
      const int row = sgm.row_offsets[k] + i;
      zeta[k] += pinv.col(row).squaredNorm() * q[row] * (1.0 - q[row]);
    }
  }
  return zeta;
}

/// Chooses the arm whose extra pull most decreases the pseudoinverse
/// variance bound. Unpulled arms are served first, lowest index first, since
/// the bound is undefined at t_k = 0.
inline int next_arm_ubpull(PolicyState& state,
                           const SampleGenerationMatrix& sgm,
                           const Eigen::MatrixXd& pinv) {
  if (auto unpulled = first_unpulled(state.counts)) return *unpulled;
  const Eigen::VectorXd zeta = ubpull_zeta(sgm, pinv, state.estimate);
  Eigen::VectorXd scores(sgm.num_arms());
  for (int k = 0; k < sgm.num_arms(); ++k) {
    const double t_k = static_cast<double>(state.counts.pulls[k]);
    scores[k] = zeta[k] * (1.0 / t_k - 1.0 / (t_k + 1.0));
  }
  return detail::argmax_with_random_ties(scores, state.rng);
}

/// Chooses the arm whose extra pull most decreases the Cramer-Rao style
/// bound evaluated at the current estimate (the pseudo-Fisher matrix).
/// Unpulled arms are served first; if the pseudo-Fisher matrix is still
/// singular at the current allocation the step falls back to round-robin
/// and is counted in the state.
inline int next_arm_lbpull(PolicyState& state,
                           const SampleGenerationMatrix& sgm) {
  if (auto unpulled = first_unpulled(state.counts)) return *unpulled;
  const int num_arms = sgm.num_arms();
  Eigen::VectorXd pulls(num_arms);
  for (int k = 0; k < num_arms; ++k)
    pulls[k] = static_cast<double>(state.counts.pulls[k]);
  double current;
  try {
    current = crlb_error_bound(fisher_information(sgm, state.estimate, pulls));
  } catch (const SingularModelError&) {
    ++state.lb_fallback_steps;
    return round_robin_arm(state.step + 1, num_arms);
  }
  Eigen::VectorXd scores(num_arms);
  for (int k = 0; k < num_arms; ++k) {
    Eigen::VectorXd bumped = pulls;
    bumped[k] += 1.0;
    const double next =
        crlb_error_bound(fisher_information(sgm, state.estimate, bumped));
    scores[k] = current - next;
  }
  return detail::argmax_with_random_ties(scores, state.rng);
}

/// Samples arm k with probability alpha_k.
inline int next_arm_fixed_fraction(PolicyState& state) {
  if (!state.alpha)
    throw std::invalid_argument(
        "next_arm_fixed_fraction: no allocation fraction configured");
  if (state.alpha->alpha.size() != state.counts.num_arms())
    throw std::invalid_argument(
        "next_arm_fixed_fraction: allocation length does not match the "
        "surviving arm count");
  return static_cast<int>(categorical_draw(state.rng, state.alpha->alpha));
}

/// Dispatch on the configured policy; `t` inside the state is the number of
/// pulls already taken, so the upcoming pull is step t + 1.
inline int next_arm(PolicyState& state, const SampleGenerationMatrix& sgm,
                    const Eigen::MatrixXd& pinv) {
  switch (state.kind) {
    case PolicyKind::round_robin:
      return round_robin_arm(state.step + 1, sgm.num_arms());
    case PolicyKind::ub_pull:
      return next_arm_ubpull(state, sgm, pinv);
    case PolicyKind::lb_pull:
      return next_arm_lbpull(state, sgm);
    case PolicyKind::fixed_fraction:
      return next_arm_fixed_fraction(state);
  }
  throw std::logic_error("next_arm: unknown policy");
}

}  // namespace distlearn
