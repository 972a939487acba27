#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "distlearn/common.hpp"

namespace distlearn {

/// One arm: a deterministic map from symbol index to an opaque output label.
/// Only the induced partition of the alphabet matters downstream.
struct ArmOutputs {
  int arm_index = 0;                        // 0-based
  std::vector<std::string> outputs;         // distinct labels, first-appearance order
  std::vector<int> output_index_of_symbol;  // length n, value in [0, outputs.size())

  int num_outputs() const { return static_cast<int>(outputs.size()); }
};

/// Full description of a learning problem: alphabet, arms, optional ground
/// truth, and experiment parameters.
struct ProblemSpec {
  int alphabet_size = 0;
  std::vector<ArmOutputs> arms;
  std::optional<Eigen::VectorXd> true_distribution;
  std::int64_t horizon = 1000;
  std::int64_t trials = 100;
  std::uint64_t master_seed = 0;

  int num_arms() const { return static_cast<int>(arms.size()); }
};

/// Binary matrices encoding which symbol produces which output. Entry (i,j)
/// of the per-arm matrix is 1 iff symbol j yields output i on that arm. The
/// stacked matrix concatenates the per-arm blocks in arm order.
struct SampleGenerationMatrix {
  std::vector<Eigen::MatrixXd> per_arm;
  Eigen::MatrixXd stacked;       // (sum of m_k) x n
  std::vector<int> row_offsets;  // per arm, start row in `stacked`

  int num_arms() const { return static_cast<int>(per_arm.size()); }
  int alphabet_size() const { return static_cast<int>(stacked.cols()); }
  int total_rows() const { return static_cast<int>(stacked.rows()); }
  int outputs_of(int arm) const {
    return static_cast<int>(per_arm[arm].rows());
  }
};

/// Probability of observing each output, blocked per arm; q = A p.
struct OutputProbabilities {
  Eigen::VectorXd q;               // length = total rows of stacked matrix
  std::vector<int> block_sizes;    // m_k per arm
  std::vector<int> block_offsets;  // start of each arm's block in q
};

namespace detail {

inline std::string label_of_json(const nlohmann::json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (value.is_number() || value.is_boolean()) return value.dump();
  throw SpecError("arm output labels must be strings or numbers");
}

}  // namespace detail

/// Validates cross-field invariants of an already-populated spec and
/// renormalizes the true distribution when present.
inline void validate_problem_spec(ProblemSpec& spec) {
  if (spec.alphabet_size < 2)
    throw SpecError("alphabet_size must be at least 2");
  if (spec.arms.empty()) throw SpecError("at least one arm is required");
  for (const auto& arm : spec.arms) {
    if (static_cast<int>(arm.output_index_of_symbol.size()) !=
        spec.alphabet_size)
      throw SpecError("arm " + std::to_string(arm.arm_index + 1) +
                      " must map every one of the " +
                      std::to_string(spec.alphabet_size) + " symbols");
    if (arm.outputs.empty())
      throw SpecError("arm " + std::to_string(arm.arm_index + 1) +
                      " has no outputs");
    for (int idx : arm.output_index_of_symbol) {
      if (idx < 0 || idx >= arm.num_outputs())
        throw SpecError("arm " + std::to_string(arm.arm_index + 1) +
                        " has an out-of-range output index");
    }
  }
  if (spec.true_distribution) {
    if (spec.true_distribution->size() != spec.alphabet_size)
      throw SpecError("distribution length does not match alphabet_size");
    spec.true_distribution =
        validate_simplex(*spec.true_distribution, "distribution");
  }
  if (spec.horizon < 1) throw SpecError("horizon must be positive");
  if (spec.trials < 1) throw SpecError("trials must be positive");
}

/// Builds one arm from its per-symbol label list. Output rows are numbered in
/// first-appearance order over symbol index, which makes the construction
/// deterministic.
inline ArmOutputs make_arm(int arm_index,
                           const std::vector<std::string>& labels) {
  ArmOutputs arm;
  arm.arm_index = arm_index;
  arm.output_index_of_symbol.reserve(labels.size());
  for (const auto& label : labels) {
    int idx = -1;
    for (int i = 0; i < arm.num_outputs(); ++i) {
      if (arm.outputs[i] == label) {
        idx = i;
        break;
      }
    }
    if (idx < 0) {
      idx = arm.num_outputs();
      arm.outputs.push_back(label);
    }
    arm.output_index_of_symbol.push_back(idx);
  }
  return arm;
}

/// Parses the JSON problem-spec document. Required keys: `alphabet_size` and
/// `arms` (one per-symbol label list per arm). Optional: `distribution`,
/// `horizon`, `trials`, `seed`.
inline ProblemSpec parse_problem_spec(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("malformed spec document: ") + e.what());
  }
  if (!doc.is_object()) throw SpecError("spec document must be a JSON object");
  if (!doc.contains("alphabet_size"))
    throw SpecError("missing field: alphabet_size");
  if (!doc.contains("arms")) throw SpecError("missing field: arms");

  ProblemSpec spec;
  try {
    spec.alphabet_size = doc.at("alphabet_size").get<int>();
    const auto& arms = doc.at("arms");
    if (!arms.is_array() || arms.empty())
      throw SpecError("arms must be a non-empty array");
    for (const auto& arm_labels : arms) {
      if (!arm_labels.is_array())
        throw SpecError("each arm must be an array of per-symbol labels");
      std::vector<std::string> labels;
      labels.reserve(arm_labels.size());
      for (const auto& v : arm_labels) labels.push_back(detail::label_of_json(v));
      spec.arms.push_back(make_arm(spec.num_arms(), labels));
    }
    if (doc.contains("distribution")) {
      const auto& dist = doc.at("distribution");
      if (!dist.is_array()) throw SpecError("distribution must be an array");
      Eigen::VectorXd p(dist.size());
      for (std::size_t i = 0; i < dist.size(); ++i) p[i] = dist[i].get<double>();
      spec.true_distribution = p;
    }
    if (doc.contains("horizon")) spec.horizon = doc.at("horizon").get<std::int64_t>();
    if (doc.contains("trials")) spec.trials = doc.at("trials").get<std::int64_t>();
    if (doc.contains("seed")) spec.master_seed = doc.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("malformed spec document: ") + e.what());
  }

  validate_problem_spec(spec);
  return spec;
}

/// Canonical serialization; parse(serialize(spec)) reproduces the spec.
inline std::string serialize_problem_spec(const ProblemSpec& spec) {
  nlohmann::json doc;
  doc["alphabet_size"] = spec.alphabet_size;
  nlohmann::json arms = nlohmann::json::array();
  for (const auto& arm : spec.arms) {
    nlohmann::json labels = nlohmann::json::array();
    for (int idx : arm.output_index_of_symbol) labels.push_back(arm.outputs[idx]);
    arms.push_back(labels);
  }
  doc["arms"] = arms;
  if (spec.true_distribution) {
    nlohmann::json dist = nlohmann::json::array();
    for (Eigen::Index i = 0; i < spec.true_distribution->size(); ++i)
      dist.push_back((*spec.true_distribution)[i]);
    doc["distribution"] = dist;
  }
  doc["horizon"] = spec.horizon;
  doc["trials"] = spec.trials;
  doc["seed"] = spec.master_seed;
  return doc.dump(2) + "\n";
}

/// Builds the per-arm binary matrices and their stacked concatenation.
/// Every column of every per-arm block has exactly one 1.
inline SampleGenerationMatrix build_matrices(const ProblemSpec& spec) {
  SampleGenerationMatrix sgm;
  int total_rows = 0;
  for (const auto& arm : spec.arms) {
    Eigen::MatrixXd a =
        Eigen::MatrixXd::Zero(arm.num_outputs(), spec.alphabet_size);
    for (int j = 0; j < spec.alphabet_size; ++j)
      a(arm.output_index_of_symbol[j], j) = 1.0;
    sgm.row_offsets.push_back(total_rows);
    total_rows += arm.num_outputs();
    sgm.per_arm.push_back(std::move(a));
  }
  sgm.stacked = Eigen::MatrixXd::Zero(total_rows, spec.alphabet_size);
  for (int k = 0; k < sgm.num_arms(); ++k)
    sgm.stacked.middleRows(sgm.row_offsets[k], sgm.per_arm[k].rows()) =
        sgm.per_arm[k];
  return sgm;
}

/// q = A p, blocked per arm. Each block sums to 1 when p is on the simplex.
inline OutputProbabilities output_probabilities(
    const SampleGenerationMatrix& sgm, const Eigen::VectorXd& p) {
  if (p.size() != sgm.stacked.cols())
    throw std::invalid_argument(
        "output_probabilities: distribution length does not match matrix");
  OutputProbabilities out;
  out.q = sgm.stacked * p;
  for (int k = 0; k < sgm.num_arms(); ++k) {
    out.block_sizes.push_back(sgm.outputs_of(k));
    out.block_offsets.push_back(sgm.row_offsets[k]);
  }
  return out;
}

}  // namespace distlearn
