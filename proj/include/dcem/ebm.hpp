#pragma once

// Energy-based 1-D regression: y_hat(x) = argmin_y E_theta(y | x), with the
// argmin approximated by unrolled gradient descent or by DCEM, and theta
// trained on the squared error of y_hat through the inner optimizer.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcem/autodiff.hpp"
#include "dcem/nn.hpp"
#include "dcem/tensor.hpp"

namespace dcem::ebm {

double target(double x);  // x * sin(x)

struct RegressionTask {
  Tensor x_train, y_train;  // n x 1
  Tensor x_val, y_val;
  std::uint64_t seed = 0;

  /// x ~ U[0, 2 pi], y = x sin x, drawn from one seeded stream.
  static RegressionTask generate(std::size_t n_train = 1000, std::size_t n_val = 200, std::uint64_t seed = 0);
};

enum class InferenceMethod { unrolled_gd, dcem };
std::string to_string(InferenceMethod m);
InferenceMethod parse_method(const std::string& name);

struct InferenceConfig {
  InferenceMethod method = InferenceMethod::dcem;
  std::size_t steps = 10;  // GD steps or DCEM iterations
  double lr = 0.1;         // unrolled_gd
  double y0 = 0.0;         // GD start, DCEM initial mean
  std::size_t num_samples = 100;
  std::size_t num_elites = 10;
  double tau = 1.0;
  double sigma0 = 3.0;
  bool normalize = true;
  std::uint64_t seed = 0;  // DCEM noise at evaluation time

  static InferenceConfig defaults(InferenceMethod m);
  void validate() const;
};

/// E(y | x) for row batches: x, y are R x 1, result R x 1.
using EnergyFn = std::function<ad::Var(const ad::Var& x, const ad::Var& y)>;

struct EnergyNetworkConfig {
  std::size_t hidden = 128;
  std::size_t layers = 2;
  std::uint64_t seed = 0;
};

class EnergyNetwork {
 public:
  explicit EnergyNetwork(const EnergyNetworkConfig& cfg = {});

  nn::Mlp& mlp() { return mlp_; }
  const nn::Mlp& mlp() const { return mlp_; }
  const EnergyNetworkConfig& config() const { return cfg_; }

  /// Energy through parameters bound on a tape.
  static EnergyFn energy(const nn::Mlp::Bound& bound);
  /// Energy with the current parameters as constants on `tape`.
  EnergyFn energy(ad::Tape& tape) const;

 private:
  EnergyNetworkConfig cfg_;
  nn::Mlp mlp_;
};

/// y_hat for a batch of inputs x (B x 1), differentiable through the inner solve.
ad::Var predict(const EnergyFn& energy, const ad::Var& x, const InferenceConfig& cfg, bool create_graph = true);

/// Predictions of the network for plain inputs, without an outer gradient.
Tensor predict_values(const EnergyNetwork& net, const Tensor& x, const InferenceConfig& cfg);

double mse(const Tensor& prediction, const Tensor& target);

struct TrainConfig {
  std::size_t outer_steps = 5000;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::size_t eval_every = 100;
  std::uint64_t seed = 0;
  double divergence_threshold = 1e6;
};

struct LossPoint {
  std::size_t step = 0;
  double train_mse = 0.0;  // mean minibatch loss since the previous row
  double val_mse = 0.0;
};

struct TrainResult {
  EnergyNetwork model;
  std::vector<LossPoint> curve;
  double final_val_mse = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::size_t step, double loss)
      : std::runtime_error(what), step_(step), loss_(loss) {}
  std::size_t step() const { return step_; }
  double loss() const { return loss_; }

 private:
  std::size_t step_;
  double loss_;
};

/// Per-step callback, e.g. for progress output: (step, minibatch loss).
using StepCallback = std::function<void(std::size_t, double)>;

TrainResult train(const RegressionTask& task, const InferenceConfig& inference, const TrainConfig& cfg,
                  EnergyNetwork init, const StepCallback& on_step = {});

/// Fraction of inputs whose prediction is a local minimum at resolution delta:
/// E(y_hat - delta) >= E(y_hat) and E(y_hat + delta) >= E(y_hat).
double local_minimum_pass_rate(const EnergyNetwork& net, const Tensor& x, const InferenceConfig& cfg,
                               double delta = 0.05);
/// The same probe for given predictions y_hat.
double local_minimum_pass_rate(const EnergyFn& energy, const Tensor& x, const Tensor& y_hat, double delta = 0.05);

struct SurfacePoint {
  double x, y, energy, normalized;
};

/// Energy on a grid; normalized = log(1 + E - min over the y-slice at that x).
std::vector<SurfacePoint> energy_surface(const EnergyFn& energy, const std::vector<double>& xs,
                                         const std::vector<double>& ys);
std::vector<SurfacePoint> energy_surface(const EnergyNetwork& net, const std::vector<double>& xs,
                                         const std::vector<double>& ys);
void write_surface_csv(std::ostream& out, const std::vector<SurfacePoint>& surface);

struct AblationRow {
  std::size_t iterations;
  double val_mse;
};

/// Validation MSE with the inner step count replaced by each entry of `counts`.
std::vector<AblationRow> ablate_inner_iterations(const EnergyNetwork& net, const Tensor& x, const Tensor& y,
                                                 const InferenceConfig& cfg,
                                                 const std::vector<std::size_t>& counts = {1, 10, 20, 30});

std::vector<double> linspace(double lo, double hi, std::size_t n);

}  // namespace dcem::ebm
