#pragma once

// Cartpole embedded control. A decoder maps a latent z in [0,1]^{n_z} to an
// open-loop control sequence u_{1:H} in [0,1]^H; the controller searches z
// with DCEM and the decoder is trained through that search.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcem/autodiff.hpp"
#include "dcem/nn.hpp"
#include "dcem/optimizers.hpp"
#include "dcem/tensor.hpp"

namespace dcem::control {

enum class Integrator { semi_implicit_euler, rk4 };
std::string to_string(Integrator i);
Integrator parse_integrator(const std::string& name);

struct CartpoleParams {
  double gravity = 9.8;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double half_length = 0.5;
  double force_max = 10.0;
  double dt = 0.05;
  Integrator integrator = Integrator::rk4;
};

/// theta = 0 is upright; angles are not wrapped.
template <class T>
struct CartpoleState {
  T p, p_dot, theta, theta_dot;
};

/// C(x, u) = w_p p^2 + w_theta (cos theta - 1)^2 + w_v p_dot^2 + w_w theta_dot^2 + w_u (u - u_ref)^2
struct CostWeights {
  double position = 0.1;
  double angle = 1.0;
  double velocity = 0.01;
  double angular_velocity = 0.01;
  double control = 0.004;  // 0.001 (2u - 1)^2
  double control_ref = 0.5;
};

struct ControlProblem {
  CartpoleParams dynamics;
  CostWeights cost;
  std::size_t horizon = 20;
};

// ---- dynamics ---------------------------------------------------------------

/// Time derivative (p_dot, p_ddot, theta_dot, theta_ddot) under force F.
template <class T>
CartpoleState<T> cartpole_derivative(const CartpoleState<T>& s, const T& force, const CartpoleParams& c) {
  using std::cos;
  using std::sin;
  const double total = c.cart_mass + c.pole_mass;
  const double ml = c.pole_mass * c.half_length;
  const T st = sin(s.theta);
  const T ct = cos(s.theta);
  const T temp = (force + ml * (s.theta_dot * s.theta_dot) * st) / total;
  const T theta_acc = (c.gravity * st - ct * temp) / (c.half_length * (4.0 / 3.0 - (c.pole_mass / total) * (ct * ct)));
  const T p_acc = temp - (ml / total) * (theta_acc * ct);
  return {s.p_dot, p_acc, s.theta_dot, theta_acc};
}

template <class T>
CartpoleState<T> axpy_state(const CartpoleState<T>& s, double h, const CartpoleState<T>& d) {
  return {s.p + d.p * h, s.p_dot + d.p_dot * h, s.theta + d.theta * h, s.theta_dot + d.theta_dot * h};
}

/// One step with force (2u - 1) F_max held over dt.
template <class T>
CartpoleState<T> cartpole_step(const CartpoleState<T>& s, const T& u, const CartpoleParams& c) {
  const T force = (u * 2.0 - 1.0) * c.force_max;
  const double dt = c.dt;
  if (c.integrator == Integrator::semi_implicit_euler) {
    const CartpoleState<T> d = cartpole_derivative(s, force, c);
    const T p_dot = s.p_dot + d.p_dot * dt;
    const T theta_dot = s.theta_dot + d.theta_dot * dt;
    return {s.p + p_dot * dt, p_dot, s.theta + theta_dot * dt, theta_dot};
  }
  const CartpoleState<T> k1 = cartpole_derivative(s, force, c);
  const CartpoleState<T> k2 = cartpole_derivative(axpy_state(s, dt / 2, k1), force, c);
  const CartpoleState<T> k3 = cartpole_derivative(axpy_state(s, dt / 2, k2), force, c);
  const CartpoleState<T> k4 = cartpole_derivative(axpy_state(s, dt, k3), force, c);
  auto combine = [dt](const T& x, const T& a, const T& b, const T& cc, const T& d) {
    return x + (a + (b + cc) * 2.0 + d) * (dt / 6.0);
  };
  return {combine(s.p, k1.p, k2.p, k3.p, k4.p), combine(s.p_dot, k1.p_dot, k2.p_dot, k3.p_dot, k4.p_dot),
          combine(s.theta, k1.theta, k2.theta, k3.theta, k4.theta),
          combine(s.theta_dot, k1.theta_dot, k2.theta_dot, k3.theta_dot, k4.theta_dot)};
}

template <class T>
T stage_cost(const CartpoleState<T>& s, const T& u, const CostWeights& w) {
  using std::cos;
  const T c = cos(s.theta) - 1.0;
  const T du = u - w.control_ref;
  return (s.p * s.p) * w.position + (c * c) * w.angle + (s.p_dot * s.p_dot) * w.velocity +
         (s.theta_dot * s.theta_dot) * w.angular_velocity + (du * du) * w.control;
}

/// Mechanical energy with the potential measured from the hanging position.
double mechanical_energy(const CartpoleState<double>& s, const CartpoleParams& c);

// ---- rollouts -----------------------------------------------------------------

using State = CartpoleState<double>;

/// sum_t C(x_t, u_t) for t = 1..H, x_1 = x_init.
double rollout_cost(const ControlProblem& prob, const State& x_init, std::span<const double> u);

/// States x_1..x_{H+1} visited by u.
std::vector<State> rollout_states(const ControlProblem& prob, const State& x_init, std::span<const double> u);

/// Batched differentiable rollout: x_init is R x 4 (p, p_dot, theta, theta_dot
/// per row), u is R x H. Returns per-row total cost, R x 1.
ad::Var rollout_cost(const ControlProblem& prob, const Tensor& x_init, const ad::Var& u);

/// Batched rollout on plain values: x_init R x 4, u R x H -> R x 1.
Tensor rollout_costs(const ControlProblem& prob, const Tensor& x_init, const Tensor& u);

Tensor states_to_tensor(const std::vector<State>& states);

/// Initial states p, p_dot ~ U[-.5, .5], theta ~ U[-1, 1], theta_dot ~ U[-.5, .5].
std::vector<State> sample_initial_states(std::size_t count, std::uint64_t seed);

// ---- expert -------------------------------------------------------------------

struct ExpertConfig {
  optim::DcemConfig cem{.num_samples = 1000, .num_elites = 100, .iterations = 10, .tau = 0.0};
  double mu0 = 0.5;
  double sigma0 = 0.5;
};

struct Plan {
  std::vector<double> u;
  double cost = 0.0;
};

/// CEM over [0,1]^H from each initial state; returns the final mean as the plan.
std::vector<Plan> expert_cem(const ControlProblem& prob, const std::vector<State>& x_init, const ExpertConfig& cfg);

/// Best of `count` i.i.d. uniform control sequences.
Plan random_shooting(const ControlProblem& prob, const State& x_init, std::size_t count, std::uint64_t seed);

// ---- decoder and latent search ------------------------------------------------

struct DecoderConfig {
  std::size_t latent_dim = 2;
  std::size_t hidden = 200;
  std::size_t layers = 2;
  std::uint64_t seed = 0;
};

/// n_z -> hidden (ELU) ... -> H (sigmoid).
nn::Mlp make_decoder(const DecoderConfig& cfg, std::size_t horizon);

struct LatentSolveConfig {
  optim::DcemConfig dcem{.num_samples = 100, .num_elites = 10, .iterations = 10, .tau = 1.0};
  double mu0 = 0.5;
  double sigma0 = 0.5;
};

/// C_theta(z; x_init) for R latents (R x n_z) and R initial states (R x 4).
ad::Var latent_cost(const ControlProblem& prob, const nn::Mlp::Bound& decoder, const Tensor& x_init,
                    const ad::Var& z);

struct LatentSolution {
  ad::Var z;     // B x n_z
  ad::Var cost;  // B x 1, C_theta(z_hat)
};

/// Searches the latent space for B initial states at once. With tau > 0 the
/// search is DCEM and z_hat depends on the decoder parameters; with tau = 0
/// it is CEM and z_hat is a constant.
LatentSolution solve_latent(const ControlProblem& prob, const nn::Mlp::Bound& decoder, const Tensor& x_init,
                            const LatentSolveConfig& cfg);

/// Embedded cost C_theta(z_hat) per initial state, without an outer gradient.
std::vector<double> embedded_costs(const ControlProblem& prob, const nn::Mlp& decoder,
                                   const std::vector<State>& x_init, const LatentSolveConfig& cfg);

struct ControlTrainConfig {
  std::size_t outer_steps = 2000;
  double lr = 1e-3;
  std::size_t eval_every = 50;
  std::size_t validation_states = 32;
  std::uint64_t validation_seed = 1000;
  std::uint64_t seed = 0;
  double divergence_threshold = 1e6;
};

struct CostPoint {
  std::size_t step = 0;
  double train_cost = 0.0;  // mean per-step cost since the previous row
  double val_cost = 0.0;
};

struct DecoderTrainResult {
  nn::Mlp decoder;  // best validation checkpoint
  nn::Mlp final_decoder;
  std::vector<CostPoint> curve;
  double best_val_cost = 0.0;
  std::size_t best_step = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::size_t step) : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

using StepCallback = std::function<void(std::size_t step, double cost)>;

DecoderTrainResult train_decoder(const ControlProblem& prob, nn::Mlp decoder, const LatentSolveConfig& solve,
                                 const ControlTrainConfig& cfg, const StepCallback& on_step = {});

/// mean_i expert_i / max(embedded_i, 1e-8)
double improvement_factor(std::span<const double> expert_costs, std::span<const double> embedded_costs);

struct SurfaceCell {
  double z1, z2, cost;
};

/// C_theta(z; x_init) on a resolution x resolution grid over [0,1]^2.
std::vector<SurfaceCell> latent_surface(const ControlProblem& prob, const nn::Mlp& decoder, const State& x_init,
                                        std::size_t resolution);

void write_trajectory_csv(std::ostream& out, const ControlProblem& prob, const State& x_init,
                          std::span<const double> u);

}  // namespace dcem::control
