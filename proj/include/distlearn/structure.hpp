#pragma once

#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "distlearn/common.hpp"
#include "distlearn/model.hpp"

namespace distlearn {

/// Result of the identifiability and redundancy analysis.
struct StructureReport {
  int rank = 0;
  bool identifiable = false;  // rank == alphabet size
  // (removed arm, witness arm) pairs, 0-based original indices. The witness
  // is the surviving arm whose row space covers the removed arm's.
  std::vector<std::pair<int, int>> redundant_arms;
  std::vector<int> surviving_arms;  // original indices, ascending
  SampleGenerationMatrix reduced;   // matrices over surviving arms only
  std::optional<int> invertible_arm;  // original index, if a surviving arm
                                      // is a permutation of the identity
};

/// Numerical rank: singular values below 1e-9 times the largest are treated
/// as zero. The matrices here are tiny 0/1 matrices, so this coincides with
/// the exact rational rank.
inline int rank_of(const Eigen::MatrixXd& a) {
  if (a.rows() == 0 || a.cols() == 0)
    throw std::invalid_argument("rank_of: empty matrix");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0) return 0;
  const double cutoff = kRankThreshold * sv[0];
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > cutoff) ++rank;
  return rank;
}

namespace detail {

inline Eigen::MatrixXd vstack(const Eigen::MatrixXd& top,
                              const Eigen::MatrixXd& bottom) {
  Eigen::MatrixXd b(top.rows() + bottom.rows(), top.cols());
  b.topRows(top.rows()) = top;
  b.bottomRows(bottom.rows()) = bottom;
  return b;
}

inline bool is_permutation_matrix(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) return false;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    if (a.row(i).sum() != 1.0) return false;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    if (a.col(j).sum() != 1.0) return false;
  return true;
}

}  // namespace detail

/// True iff the row space of `a_r` is a strict subset of the row space of
/// `a_s`, i.e. rank([a_r; a_s]) == rank(a_s) and rank(a_r) < rank(a_s).
inline bool is_row_space_strict_subset(const Eigen::MatrixXd& a_r,
                                       const Eigen::MatrixXd& a_s) {
  if (a_r.cols() != a_s.cols())
    throw std::invalid_argument(
        "is_row_space_strict_subset: column counts differ");
  const int rank_r = rank_of(a_r);
  const int rank_s = rank_of(a_s);
  if (rank_r >= rank_s) return false;
  return rank_of(detail::vstack(a_r, a_s)) == rank_s;
}

/// Pairwise redundancy elimination. For each alive pair (r, s): if the
/// stacked pair has the rank of one arm and that rank strictly exceeds the
/// other arm's, the smaller arm is removed with the larger as witness; if
/// both ranks equal the stacked rank (equal row spaces), one of the two is
/// removed uniformly at random. The scan restarts after every removal and
/// runs until no pair qualifies.
inline StructureReport eliminate_redundant(const SampleGenerationMatrix& sgm,
                                           Rng& rng) {
  const int num_arms = sgm.num_arms();
  if (num_arms == 0)
    throw std::invalid_argument("eliminate_redundant: no arms");

  StructureReport report;
  report.rank = rank_of(sgm.stacked);
  report.identifiable = report.rank == sgm.alphabet_size();

  std::vector<bool> alive(num_arms, true);
  std::vector<int> ranks(num_arms);
  for (int k = 0; k < num_arms; ++k) ranks[k] = rank_of(sgm.per_arm[k]);

  bool removed_any = true;
  while (removed_any) {
    removed_any = false;
    for (int r = 0; r < num_arms && !removed_any; ++r) {
      if (!alive[r]) continue;
      for (int s = r + 1; s < num_arms && !removed_any; ++s) {
        if (!alive[s]) continue;
        const int rank_pair =
            rank_of(detail::vstack(sgm.per_arm[r], sgm.per_arm[s]));
        if (rank_pair == ranks[r] && ranks[r] > ranks[s]) {
          alive[s] = false;
          report.redundant_arms.emplace_back(s, r);
          removed_any = true;
        } else if (rank_pair == ranks[s] && ranks[s] > ranks[r]) {
          alive[r] = false;
          report.redundant_arms.emplace_back(r, s);
          removed_any = true;
        } else if (rank_pair == ranks[r] && ranks[r] == ranks[s]) {
          const int removed = uniform_index(rng, 2) == 0 ? r : s;
          const int witness = removed == r ? s : r;
          alive[removed] = false;
          report.redundant_arms.emplace_back(removed, witness);
          removed_any = true;
        }
      }
    }
  }

  int total_rows = 0;
  for (int k = 0; k < num_arms; ++k) {
    if (!alive[k]) continue;
    report.surviving_arms.push_back(k);
    report.reduced.row_offsets.push_back(total_rows);
    total_rows += sgm.outputs_of(k);
    report.reduced.per_arm.push_back(sgm.per_arm[k]);
  }
  report.reduced.stacked =
      Eigen::MatrixXd::Zero(total_rows, sgm.alphabet_size());
  for (std::size_t i = 0; i < report.reduced.per_arm.size(); ++i)
    report.reduced.stacked.middleRows(report.reduced.row_offsets[i],
                                      report.reduced.per_arm[i].rows()) =
        report.reduced.per_arm[i];

  for (std::size_t i = 0; i < report.reduced.per_arm.size(); ++i) {
    if (detail::is_permutation_matrix(report.reduced.per_arm[i])) {
      report.invertible_arm = report.surviving_arms[i];
      break;
    }
  }
  return report;
}

}  // namespace distlearn
