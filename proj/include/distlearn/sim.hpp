#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "distlearn/bounds.hpp"
#include "distlearn/common.hpp"
#include "distlearn/estimators.hpp"
#include "distlearn/model.hpp"
#include "distlearn/policies.hpp"
#include "distlearn/structure.hpp"

namespace distlearn {

/// Seeded source of observations: each step draws one hidden symbol and
/// reports the chosen arm's output for it. The generator advances exactly
/// once per step no matter which arm is pulled, so runs with the same seed
/// see the same hidden sequence regardless of policy.
class Environment {
 public:
  Environment(const ProblemSpec& spec, std::uint64_t seed)
      : truth_(spec.true_distribution ? *spec.true_distribution
                                      : Eigen::VectorXd()),
        rng_(seed) {
    if (truth_.size() == 0)
      throw SpecError("Environment: the spec has no true distribution");
    for (const auto& arm : spec.arms)
      output_of_symbol_.push_back(arm.output_index_of_symbol);
  }

  /// Pulls `arm` (original index); returns the arm's output row index.
  int step(int arm) {
    const auto symbol = categorical_draw(rng_, truth_);
    return output_of_symbol_[arm][static_cast<std::size_t>(symbol)];
  }

  const Eigen::VectorXd& truth() const { return truth_; }

 private:
  Eigen::VectorXd truth_;
  std::vector<std::vector<int>> output_of_symbol_;
  Rng rng_;
};

/// Squared L2 distance between an estimate and a reference distribution.
inline double squared_error(const Eigen::VectorXd& estimate,
                            const Eigen::VectorXd& truth) {
  if (estimate.size() != truth.size())
    throw std::invalid_argument("squared_error: length mismatch");
  return (estimate - truth).squaredNorm();
}

/// About `points` log-spaced unique steps over [1, horizon], endpoints
/// included.
inline std::vector<std::int64_t> default_log_steps(std::int64_t horizon,
                                                   int points = 30) {
  std::vector<std::int64_t> steps;
  if (horizon < 1) return steps;
  const double log_t = std::log(static_cast<double>(horizon));
  for (int i = 0; i < points; ++i) {
    const double f = points == 1 ? 1.0 : static_cast<double>(i) / (points - 1);
    const auto step = static_cast<std::int64_t>(std::llround(std::exp(f * log_t)));
    if (steps.empty() || step > steps.back())
      steps.push_back(std::min(step, horizon));
  }
  if (steps.back() != horizon) steps.push_back(horizon);
  return steps;
}

/// One policy + estimator pairing to simulate.
struct TrialConfig {
  PolicyKind policy = PolicyKind::round_robin;
  EstimatorKind estimator = EstimatorKind::max_likelihood;
  std::optional<AllocationFraction> alpha;  // fixed-fraction only

  std::string name() const {
    return policy_name(policy) + "+" +
           (estimator == EstimatorKind::pseudoinverse ? "pi" : "ml");
  }
};

struct TrialOptions {
  std::vector<std::int64_t> log_steps;  // ascending; empty => horizon only
  double target_error = -1.0;           // <= 0 disables hitting-time tracking
  bool record_arm_choices = false;
  bool estimate_every_step = false;
  std::int64_t horizon = -1;  // -1 => spec.horizon
};

struct TrialTrace {
  std::vector<std::int64_t> logged_steps;
  std::vector<double> logged_errors;
  std::vector<double> per_step_errors;   // filled when estimating every step
  std::vector<int> arm_choices;          // original indices, when recorded
  std::vector<std::int64_t> final_pulls; // per original arm
  Eigen::VectorXd final_estimate;
  std::int64_t hit_step = -1;  // first step with squared error <= target
  double min_q_tilde = std::numeric_limits<double>::infinity();
  std::int64_t lb_fallback_steps = 0;
  bool mle_ever_unconverged = false;
};

/// Runs one seeded trial: eliminates redundant arms once, then repeatedly
/// selects an arm, observes, and re-estimates. Estimates are refreshed every
/// step for adaptive policies (they need them) and whenever a hitting time
/// is being tracked; otherwise only at logged steps.
inline TrialTrace run_trial(const ProblemSpec& spec, const TrialConfig& config,
                            std::uint64_t trial_seed,
                            const TrialOptions& options = {}) {
  const std::int64_t horizon =
      options.horizon >= 0 ? options.horizon : spec.horizon;
  const int n = spec.alphabet_size;

  Environment env(spec, derive_seed(trial_seed, 0, 0xE17));
  PolicyState state;
  state.kind = config.policy;
  state.rng.seed(derive_seed(trial_seed, 0, 0x901));
  state.alpha = config.alpha;

  const SampleGenerationMatrix full = build_matrices(spec);
  const StructureReport structure = eliminate_redundant(full, state.rng);
  const SampleGenerationMatrix& reduced = structure.reduced;
  const int num_surviving = reduced.num_arms();

  if (config.estimator == EstimatorKind::pseudoinverse &&
      !structure.identifiable)
    throw IdentifiabilityError(
        "run_trial: the pseudoinverse estimator requires the stacked matrix "
        "to have full column rank");

  const Eigen::MatrixXd pinv = pseudoinverse(reduced.stacked);
  state.counts = ObservationCounts::zeros(reduced);
  state.estimate = Eigen::VectorXd::Constant(n, 1.0 / n);

  const bool adaptive = config.policy == PolicyKind::ub_pull ||
                        config.policy == PolicyKind::lb_pull;
  const bool tracking = options.target_error > 0.0;
  const bool estimate_every =
      options.estimate_every_step || adaptive || tracking;

  TrialTrace trace;
  trace.final_pulls.assign(spec.num_arms(), 0);
  if (estimate_every) trace.per_step_errors.reserve(horizon);

  std::size_t next_log = 0;
  double last_error = squared_error(state.estimate, env.truth());

  for (std::int64_t t = 1; t <= horizon; ++t) {
    const int arm = next_arm(state, reduced, pinv);
    const int original_arm = structure.surviving_arms[arm];
    const int output = env.step(original_arm);
    state.counts.record(arm, output);
    state.step = t;
    if (options.record_arm_choices) trace.arm_choices.push_back(original_arm);

    const bool log_now = next_log < options.log_steps.size() &&
                         options.log_steps[next_log] == t;
    if (estimate_every || log_now) {
      if (config.estimator == EstimatorKind::max_likelihood) {
        MleOptions mle;
        mle.init = state.estimate;  // warm start
        const DistributionEstimate est =
            mle_estimate(reduced, state.counts, mle);
        state.estimate = est.p;
        trace.mle_ever_unconverged |= !est.converged;
        const double q_min = (reduced.stacked * est.p).minCoeff();
        trace.min_q_tilde = std::min(trace.min_q_tilde, q_min);
      } else if (!first_unpulled(state.counts)) {
        state.estimate =
            pinv * empirical_output_frequencies(reduced, state.counts).q;
      }  // else: keep the initial uniform estimate until every arm has data
      last_error = squared_error(state.estimate, env.truth());
      if (tracking && trace.hit_step < 0 && last_error <= options.target_error)
        trace.hit_step = t;
    }
    if (estimate_every) trace.per_step_errors.push_back(last_error);
    if (log_now) {
      trace.logged_steps.push_back(t);
      trace.logged_errors.push_back(last_error);
      ++next_log;
    }
  }

  for (int k = 0; k < num_surviving; ++k)
    trace.final_pulls[structure.surviving_arms[k]] = state.counts.pulls[k];
  trace.final_estimate = state.estimate;
  trace.lb_fallback_steps = state.lb_fallback_steps;
  return trace;
}

/// Aggregate over the Monte Carlo trials of one policy + estimator pairing.
struct ConfigResult {
  std::string name;
  std::vector<double> mean_error;  // per logged step
  std::vector<double> var_error;   // per logged step, sample variance
  std::vector<double> mean_pulls;  // per original arm
  std::vector<double> var_pulls;
  Eigen::VectorXd mean_final_estimate;
  Eigen::VectorXd var_final_estimate;
  double mean_hit = std::numeric_limits<double>::quiet_NaN();
  double stderr_hit = std::numeric_limits<double>::quiet_NaN();
  std::int64_t censored_trials = 0;  // trials that never reached the target
  std::int64_t curve_crossing = -1;  // first step where the mean curve hits
  double min_q_tilde = std::numeric_limits<double>::infinity();
  std::int64_t lb_fallback_steps = 0;
  std::vector<double> hit_steps;  // per trial; censored entries = horizon
};

struct ExperimentOptions {
  std::vector<TrialConfig> configs;
  std::int64_t trials = -1;   // -1 => spec.trials
  std::int64_t horizon = -1;  // -1 => spec.horizon
  std::vector<std::int64_t> log_steps;  // empty => default grid
  double target_error = -1.0;
  double bound_grid_step = 0.01;  // allocation search for the CRLB curve
  int threads = 0;                // 0 => DISTLEARN_THREADS or hardware
};

struct ExperimentReport {
  std::vector<std::int64_t> steps;
  std::vector<ConfigResult> configs;
  std::vector<double> crude_bound;  // per logged step
  std::vector<double> crlb_bound;   // per logged step; NaN when singular
  Eigen::VectorXd crlb_alpha;       // empty when singular
  std::int64_t trials = 0;
  std::int64_t horizon = 0;
};

inline int resolve_thread_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("DISTLEARN_THREADS")) {
    const int parsed = std::atoi(env);
    if (parsed > 0) return parsed;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace detail {

inline void mean_and_var(const std::vector<double>& values, double& mean,
                         double& var) {
  const auto count = static_cast<double>(values.size());
  mean = 0.0;
  for (double v : values) mean += v;
  mean /= count;
  var = 0.0;
  if (values.size() > 1) {
    for (double v : values) var += (v - mean) * (v - mean);
    var /= count - 1.0;
  }
}

}  // namespace detail

/// Runs every configured pairing for `trials` seeded trials and aggregates
/// pointwise. Trial seeds derive from the master seed and the trial index,
/// so results do not depend on the thread count; the same trial index sees
/// the same hidden sequence in every configuration.
inline ExperimentReport run_experiment(const ProblemSpec& spec,
                                       const ExperimentOptions& options) {
  ExperimentReport report;
  report.trials = options.trials >= 1 ? options.trials : spec.trials;
  report.horizon = options.horizon >= 0 ? options.horizon : spec.horizon;
  report.steps = options.log_steps.empty()
                     ? default_log_steps(report.horizon)
                     : options.log_steps;
  for (std::size_t s = 0; s < report.steps.size(); ++s) {
    const bool ascending = s == 0 || report.steps[s] > report.steps[s - 1];
    if (report.steps[s] < 1 || report.steps[s] > report.horizon || !ascending)
      throw std::invalid_argument(
          "run_experiment: log steps must be ascending within [1, horizon]");
  }

  TrialOptions trial_options;
  trial_options.log_steps = report.steps;
  trial_options.target_error = options.target_error;
  trial_options.horizon = report.horizon;

  const int threads = resolve_thread_count(options.threads);

  for (const TrialConfig& config : options.configs) {
    std::vector<TrialTrace> traces(report.trials);
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&](std::int64_t begin, std::int64_t end) {
      for (std::int64_t i = begin; i < end; ++i) {
        try {
          traces[i] = run_trial(spec, config,
                                derive_seed(spec.master_seed,
                                            static_cast<std::uint64_t>(i),
                                            0xA11),
                                trial_options);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    };
    if (threads <= 1 || report.trials == 1) {
      worker(0, report.trials);
    } else {
      std::vector<std::thread> pool;
      const std::int64_t chunk = (report.trials + threads - 1) / threads;
      for (int w = 0; w < threads; ++w) {
        const std::int64_t begin = w * chunk;
        const std::int64_t end = std::min<std::int64_t>(begin + chunk, report.trials);
        if (begin >= end) break;
        pool.emplace_back(worker, begin, end);
      }
      for (auto& th : pool) th.join();
    }
    if (failure) std::rethrow_exception(failure);

    ConfigResult result;
    result.name = config.name();
    const auto num_steps = report.steps.size();
    result.mean_error.assign(num_steps, 0.0);
    result.var_error.assign(num_steps, 0.0);
    std::vector<double> column(report.trials);
    for (std::size_t s = 0; s < num_steps; ++s) {
      for (std::int64_t i = 0; i < report.trials; ++i)
        column[i] = traces[i].logged_errors[s];
      detail::mean_and_var(column, result.mean_error[s], result.var_error[s]);
    }
    result.mean_pulls.assign(spec.num_arms(), 0.0);
    result.var_pulls.assign(spec.num_arms(), 0.0);
    for (int k = 0; k < spec.num_arms(); ++k) {
      for (std::int64_t i = 0; i < report.trials; ++i)
        column[i] = static_cast<double>(traces[i].final_pulls[k]);
      detail::mean_and_var(column, result.mean_pulls[k], result.var_pulls[k]);
    }
    result.mean_final_estimate = Eigen::VectorXd::Zero(spec.alphabet_size);
    result.var_final_estimate = Eigen::VectorXd::Zero(spec.alphabet_size);
    for (int j = 0; j < spec.alphabet_size; ++j) {
      for (std::int64_t i = 0; i < report.trials; ++i)
        column[i] = traces[i].final_estimate[j];
      detail::mean_and_var(column, result.mean_final_estimate[j],
                           result.var_final_estimate[j]);
    }
    for (const auto& trace : traces) {
      result.min_q_tilde = std::min(result.min_q_tilde, trace.min_q_tilde);
      result.lb_fallback_steps += trace.lb_fallback_steps;
    }
    if (options.target_error > 0.0) {
      result.hit_steps.reserve(report.trials);
      for (const auto& trace : traces) {
        if (trace.hit_step < 0) ++result.censored_trials;
        result.hit_steps.push_back(static_cast<double>(
            trace.hit_step < 0 ? report.horizon : trace.hit_step));
      }
      double var = 0.0;
      detail::mean_and_var(result.hit_steps, result.mean_hit, var);
      result.stderr_hit =
          std::sqrt(var / static_cast<double>(report.trials));
      // Averaged-curve variant: first step where the mean per-step error
      // crosses the target.
      std::vector<double> mean_curve(report.horizon, 0.0);
      for (const auto& trace : traces)
        for (std::int64_t t = 0; t < report.horizon; ++t)
          mean_curve[t] += trace.per_step_errors[t];
      for (std::int64_t t = 0; t < report.horizon; ++t) {
        if (mean_curve[t] / report.trials <= options.target_error) {
          result.curve_crossing = t + 1;
          break;
        }
      }
    }
    report.configs.push_back(std::move(result));
  }

  // Bound curves on the same step grid, from the true distribution.
  if (spec.true_distribution) {
    const Eigen::VectorXd& truth = *spec.true_distribution;
    for (std::int64_t t : report.steps)
      report.crude_bound.push_back(crude_lower_bound(truth, t));
    Rng scratch_rng(derive_seed(spec.master_seed, 0, 0xB0));
    const SampleGenerationMatrix full = build_matrices(spec);
    const StructureReport structure = eliminate_redundant(full, scratch_rng);
    if (structure.reduced.num_arms() > 6) {
      // the allocation lattice is infeasible; leave the curve empty of data
      report.crlb_bound.assign(report.steps.size(),
                               std::numeric_limits<double>::quiet_NaN());
    } else {
      try {
        constexpr std::int64_t kReferenceT = 1000;
        const auto [alpha, value] = crlb_allocation_search(
            structure.reduced, truth, kReferenceT, options.bound_grid_step);
        report.crlb_alpha = alpha.alpha;
        // The bound is exactly homogeneous of degree -1 in t, so one search
        // fixes the whole curve.
        for (std::int64_t t : report.steps)
          report.crlb_bound.push_back(value * kReferenceT / t);
      } catch (const SingularModelError&) {
        report.crlb_bound.assign(report.steps.size(),
                                 std::numeric_limits<double>::quiet_NaN());
      }
    }
  }
  return report;
}

}  // namespace distlearn
