#pragma once

// Sampling-based optimizers over a batched objective:
//
//  * cem      - vanilla cross-entropy method with a hard top-k refit.
//  * dcem     - differentiable CEM: reparameterized Gaussian samples, soft
//               top-k weights from the LML projection and a weighted
//               maximum-likelihood refit, all recorded on a Tape.
//  * unrolled_gd - T explicit gradient steps whose inner gradients are
//               themselves recorded, so outer gradients flow through them.
//
// Every optimizer runs B independent problems at once. A distribution holds
// B x n means/variances; samples are stacked as (B * N) x n with the N
// samples of problem b in rows [b * N, (b + 1) * N).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "dcem/autodiff.hpp"
#include "dcem/tensor.hpp"

namespace dcem::optim {

inline constexpr double kVarianceFloor = 1e-8;
inline constexpr double kNormalizeEps = 1e-10;

/// Invalid optimizer configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Objective returned NaN/inf; the message lists the offending sample rows.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& what, std::vector<std::size_t> rows)
      : std::runtime_error(what), rows_(std::move(rows)) {}
  const std::vector<std::size_t>& rows() const { return rows_; }

 private:
  std::vector<std::size_t> rows_;
};

enum class ReturnMode { mean, best_sample };

/// Coordinate-wise bounds applied to every sample after drawing.
struct Box {
  double lower = 0.0;
  double upper = 1.0;
};

struct GaussianDistribution {
  Tensor mu;      // B x n
  Tensor sigma2;  // B x n
  std::optional<Box> box;

  std::size_t batch() const { return mu.rows(); }
  std::size_t dim() const { return mu.cols(); }

  static GaussianDistribution isotropic(std::size_t batch, std::size_t dim, double mean, double stddev,
                                        std::optional<Box> box = std::nullopt);
};

/// Distribution parameters living on a Tape.
struct GaussianVars {
  ad::Var mu;      // B x n
  ad::Var sigma2;  // B x n
};

struct DcemConfig {
  std::size_t num_samples = 100;  // N
  std::size_t num_elites = 10;    // k
  std::size_t iterations = 10;    // T
  double tau = 1.0;               // 0 selects the hard path
  bool normalize = true;
  ReturnMode return_mode = ReturnMode::mean;
  std::uint64_t seed = 0;

  void validate() const;
};

struct IterationRecord {
  Tensor mu;       // B x n, distribution the samples were drawn from
  Tensor sigma2;   // B x n
  Tensor samples;  // (B * N) x n
  Tensor values;   // B x N, raw objective values
  Tensor weights;  // B x N, elite weights
};

struct IterationTrace {
  std::vector<IterationRecord> iterations;
};

/// Values of a batch of points: (rows x n) -> rows x 1.
using ValueFn = std::function<Tensor(const Tensor& points)>;
/// Recorded values of a batch of points on the points' Tape.
using DifferentiableFn = std::function<ad::Var(const ad::Var& points)>;

/// Evaluates a differentiable objective on a scratch tape.
ValueFn values_of(DifferentiableFn f);

/// Indicator of the k smallest values; ties go to the lowest index.
std::vector<double> hard_topk_indicator(std::span<const double> values, std::size_t k);

/// Mean and biased (divide-by-k) variance of the k elite rows of X (N x n).
GaussianDistribution gaussian_fit_hard(const Tensor& samples, std::span<const double> values, std::size_t k);

/// Weighted refit mu = (1/k) sum I_i X_i, sigma2 = (1/k) sum I_i (X_i - mu)^2,
/// floored at kVarianceFloor. samples: (B * N) x n, weights: B x N.
GaussianVars gaussian_fit_soft(const ad::Var& samples, const ad::Var& weights, std::size_t k);

struct CemResult {
  Tensor point;        // B x n
  Tensor best_values;  // B x 1, lowest value seen per problem
  GaussianDistribution final_distribution;
  IterationTrace trace;
};

CemResult cem(const ValueFn& objective, const GaussianDistribution& init, const DcemConfig& cfg);

struct DcemResult {
  ad::Var point;  // B x n
  GaussianVars final_distribution;
  IterationTrace trace;
};

DcemResult dcem(const DifferentiableFn& objective, const GaussianVars& init, std::optional<Box> box,
                const DcemConfig& cfg);

/// dcem starting from constant distribution parameters on `tape`.
DcemResult dcem(ad::Tape& tape, const DifferentiableFn& objective, const GaussianDistribution& init,
                const DcemConfig& cfg);

/// Unrolled gradient descent y_{t+1} = y_t - lr * grad_y sum(f(y_t)).
/// With create_graph the inner gradients are recorded, so the result is
/// differentiable with respect to anything f depends on.
ad::Var unrolled_gd(const DifferentiableFn& objective, const ad::Var& y0, std::size_t steps, double lr,
                    bool create_graph = true);

/// Standard normal noise matrices used by both paths, so a shared seed
/// reproduces the same samples in cem and dcem.
class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed);
  Tensor next(std::size_t rows, std::size_t cols);

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

}  // namespace dcem::optim
