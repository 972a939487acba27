#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace distlearn {

/// Raised when a problem specification fails validation or parsing.
class SpecError : public std::runtime_error {
 public:
  explicit SpecError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised when an operation requires rank(A) = n and the matrix falls short.
class IdentifiabilityError : public std::runtime_error {
 public:
  explicit IdentifiabilityError(const std::string& what)
      : std::runtime_error(what) {}
};

/// Raised when a Fisher matrix (or a model probability) is singular where an
/// inverse is required.
class SingularModelError : public std::runtime_error {
 public:
  explicit SingularModelError(const std::string& what)
      : std::runtime_error(what) {}
};

using Rng = std::mt19937_64;

// SplitMix64 mixing step. Used to derive independent seeds from a master
// seed so that trial streams do not depend on scheduling.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index,
                                 std::uint64_t stream) {
  return splitmix64(splitmix64(master ^ splitmix64(index)) ^ stream);
}

/// Uniform double in [0,1) consuming exactly one engine draw.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Unbiased uniform integer in [0, n). Rejection sampling on the raw 64-bit
/// stream keeps the result independent of any library distribution.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
  if (n == 1) return 0;
  const std::uint64_t bound = n;
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = rng();
    if (r >= threshold) return static_cast<std::size_t>(r % bound);
  }
}

/// Inverse-CDF draw from a probability vector, one engine advance.
inline Eigen::Index categorical_draw(Rng& rng, const Eigen::VectorXd& probs) {
  const double u = uniform01(rng);
  double cum = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return i;
  }
  return probs.size() - 1;  // guard against rounding in the last bin
}

constexpr double kSimplexTolerance = 1e-12;
constexpr double kRankThreshold = 1e-9;

/// Checks that `p` has strictly positive entries summing to 1 within
/// `kSimplexTolerance`, then renormalizes to an exact simplex point.
inline Eigen::VectorXd validate_simplex(const Eigen::VectorXd& p,
                                        const std::string& context) {
  if (p.size() == 0) throw SpecError(context + ": empty probability vector");
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0))
      throw SpecError(context + ": probability " + std::to_string(i + 1) +
                      " must be strictly positive");
  }
  const double sum = p.sum();
  if (std::abs(sum - 1.0) > kSimplexTolerance)
    throw SpecError(context + ": probabilities sum to " + std::to_string(sum) +
                    ", expected 1");
  // Renormalize, but leave sums that are already within a few ulps of 1
  // untouched so that normalization is idempotent.
  const double ulp_band =
      16.0 * std::numeric_limits<double>::epsilon() * static_cast<double>(p.size());
  if (std::abs(sum - 1.0) <= ulp_band) return p;
  return p / sum;
}

}  // namespace distlearn
