#include "dcem/control.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <sstream>

#include "dcem/csv.hpp"

namespace dcem::control {

namespace {

// Initial states per chunk when evaluating without an outer gradient.
constexpr std::size_t kEvalChunk = 8;

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

State state_row(const Tensor& x, std::size_t r) { return {x(r, 0), x(r, 1), x(r, 2), x(r, 3)}; }

Tensor repeat_tensor_rows(const Tensor& x, std::size_t times) {
  Tensor out(x.rows() * times, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t t = 0; t < times; ++t)
      std::copy_n(x.data() + r * x.cols(), x.cols(), out.data() + (r * times + t) * x.cols());
  return out;
}

}  // namespace

std::string to_string(Integrator i) { return i == Integrator::rk4 ? "rk4" : "semi_implicit_euler"; }

Integrator parse_integrator(const std::string& name) {
  if (name == "rk4") return Integrator::rk4;
  if (name == "semi_implicit_euler" || name == "euler") return Integrator::semi_implicit_euler;
  throw std::invalid_argument("unknown integrator '" + name + "' (expected rk4 or semi_implicit_euler)");
}

double mechanical_energy(const State& s, const CartpoleParams& c) {
  const double total = c.cart_mass + c.pole_mass;
  const double m = c.pole_mass, l = c.half_length;
  return 0.5 * total * s.p_dot * s.p_dot + m * l * s.p_dot * s.theta_dot * std::cos(s.theta) +
         0.5 * (4.0 / 3.0) * m * l * l * s.theta_dot * s.theta_dot + m * c.gravity * l * (1.0 + std::cos(s.theta));
}

double rollout_cost(const ControlProblem& prob, const State& x_init, std::span<const double> u) {
  if (u.size() != prob.horizon)
    throw ShapeError("rollout_cost: " + std::to_string(u.size()) + " controls for horizon " +
                     std::to_string(prob.horizon));
  State s = x_init;
  double total = 0.0;
  for (std::size_t t = 0; t < u.size(); ++t) {
    total += stage_cost(s, u[t], prob.cost);
    s = cartpole_step(s, u[t], prob.dynamics);
  }
  return total;
}

std::vector<State> rollout_states(const ControlProblem& prob, const State& x_init, std::span<const double> u) {
  std::vector<State> out{x_init};
  for (double ut : u) out.push_back(cartpole_step(out.back(), ut, prob.dynamics));
  return out;
}

ad::Var rollout_cost(const ControlProblem& prob, const Tensor& x_init, const ad::Var& u) {
  if (x_init.cols() != 4) throw ShapeError("rollout_cost: initial states must be R x 4, got " + x_init.shape_str());
  if (u.rows() != x_init.rows() || u.cols() != prob.horizon)
    throw ShapeError("rollout_cost: controls " + u.value().shape_str() + " for " + std::to_string(x_init.rows()) +
                     " states and horizon " + std::to_string(prob.horizon));
  ad::Tape& tape = u.tape();
  const std::size_t rows = x_init.rows();
  auto column = [&](std::size_t c) {
    Tensor t(rows, 1);
    for (std::size_t r = 0; r < rows; ++r) t[r] = x_init(r, c);
    return tape.constant(std::move(t));
  };
  CartpoleState<ad::Var> s{column(0), column(1), column(2), column(3)};
  ad::Var total;
  for (std::size_t t = 0; t < prob.horizon; ++t) {
    const ad::Var ut = ad::slice_cols(u, t, t + 1);
    const ad::Var c = stage_cost(s, ut, prob.cost);
    total = t == 0 ? c : total + c;
    s = cartpole_step(s, ut, prob.dynamics);
  }
  return total;
}

Tensor rollout_costs(const ControlProblem& prob, const Tensor& x_init, const Tensor& u) {
  if (u.rows() != x_init.rows() || u.cols() != prob.horizon || x_init.cols() != 4)
    throw ShapeError("rollout_costs: states " + x_init.shape_str() + " and controls " + u.shape_str());
  Tensor out(u.rows(), 1);
  for (std::size_t r = 0; r < u.rows(); ++r) out[r] = rollout_cost(prob, state_row(x_init, r), u.row_span(r));
  return out;
}

Tensor states_to_tensor(const std::vector<State>& states) {
  Tensor t(states.size(), 4);
  for (std::size_t i = 0; i < states.size(); ++i) {
    t(i, 0) = states[i].p;
    t(i, 1) = states[i].p_dot;
    t(i, 2) = states[i].theta;
    t(i, 3) = states[i].theta_dot;
  }
  return t;
}

std::vector<State> sample_initial_states(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> half(-0.5, 0.5), unit(-1.0, 1.0);
  std::vector<State> out(count);
  for (auto& s : out) {
    s.p = half(rng);
    s.p_dot = half(rng);
    s.theta = unit(rng);
    s.theta_dot = half(rng);
  }
  return out;
}

std::vector<Plan> expert_cem(const ControlProblem& prob, const std::vector<State>& x_init, const ExpertConfig& cfg) {
  if (x_init.empty()) return {};
  const std::size_t n = cfg.cem.num_samples;
  const Tensor states = states_to_tensor(x_init);
  const Tensor per_sample = repeat_tensor_rows(states, n);
  optim::ValueFn f = [&](const Tensor& u) { return rollout_costs(prob, per_sample, u); };
  auto init = optim::GaussianDistribution::isotropic(x_init.size(), prob.horizon, cfg.mu0, cfg.sigma0,
                                                      optim::Box{0.0, 1.0});
  const auto result = optim::cem(f, init, cfg.cem);
  std::vector<Plan> plans(x_init.size());
  for (std::size_t b = 0; b < x_init.size(); ++b) {
    const auto row = result.point.row_span(b);
    plans[b].u.assign(row.begin(), row.end());
    plans[b].cost = rollout_cost(prob, x_init[b], plans[b].u);
  }
  return plans;
}

Plan random_shooting(const ControlProblem& prob, const State& x_init, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Plan best{{}, std::numeric_limits<double>::infinity()};
  std::vector<double> u(prob.horizon);
  for (std::size_t i = 0; i < count; ++i) {
    for (double& e : u) e = u01(rng);
    const double c = rollout_cost(prob, x_init, u);
    if (c < best.cost) best = {u, c};
  }
  return best;
}

nn::Mlp make_decoder(const DecoderConfig& cfg, std::size_t horizon) {
  std::vector<std::size_t> sizes{cfg.latent_dim};
  for (std::size_t l = 0; l < cfg.layers; ++l) sizes.push_back(cfg.hidden);
  sizes.push_back(horizon);
  return nn::Mlp(sizes, nn::Activation::elu, nn::Activation::sigmoid, cfg.seed);
}

ad::Var latent_cost(const ControlProblem& prob, const nn::Mlp::Bound& decoder, const Tensor& x_init,
                    const ad::Var& z) {
  return rollout_cost(prob, x_init, decoder(z));
}

LatentSolution solve_latent(const ControlProblem& prob, const nn::Mlp::Bound& decoder, const Tensor& x_init,
                            const LatentSolveConfig& cfg) {
  if (decoder.params.empty()) throw std::invalid_argument("solve_latent: unbound decoder");
  ad::Tape& tape = decoder.params.front().tape();
  const std::size_t batch = x_init.rows();
  const std::size_t nz = decoder.net->in_features();
  const Tensor per_sample = repeat_tensor_rows(x_init, cfg.dcem.num_samples);
  ad::Var z;
  if (cfg.dcem.tau > 0.0) {
    auto objective = [&](const ad::Var& zs) { return latent_cost(prob, decoder, per_sample, zs); };
    optim::GaussianVars init{tape.constant(Tensor(batch, nz, cfg.mu0)),
                             tape.constant(Tensor(batch, nz, cfg.sigma0 * cfg.sigma0))};
    z = optim::dcem(objective, init, optim::Box{0.0, 1.0}, cfg.dcem).point;
  } else {
    optim::ValueFn f = [&](const Tensor& zs) {
      ad::Tape scratch;
      return latent_cost(prob, decoder.net->bind(scratch, false), per_sample, scratch.constant(zs)).value();
    };
    auto init = optim::GaussianDistribution::isotropic(batch, nz, cfg.mu0, cfg.sigma0, optim::Box{0.0, 1.0});
    z = tape.constant(optim::cem(f, init, cfg.dcem).point);
  }
  return {z, latent_cost(prob, decoder, x_init, z)};
}

std::vector<double> embedded_costs(const ControlProblem& prob, const nn::Mlp& decoder,
                                   const std::vector<State>& x_init, const LatentSolveConfig& cfg) {
  std::vector<double> out;
  out.reserve(x_init.size());
  for (std::size_t begin = 0, chunk = 0; begin < x_init.size(); begin += kEvalChunk, ++chunk) {
    const std::size_t end = std::min(x_init.size(), begin + kEvalChunk);
    LatentSolveConfig c = cfg;
    c.dcem.seed = mix_seed(cfg.dcem.seed, chunk);
    ad::Tape tape;
    const auto bound = decoder.bind(tape, false);
    const Tensor states =
        states_to_tensor(std::vector<State>(x_init.begin() + static_cast<std::ptrdiff_t>(begin),
                                            x_init.begin() + static_cast<std::ptrdiff_t>(end)));
    const Tensor cost = solve_latent(prob, bound, states, c).cost.value();
    out.insert(out.end(), cost.values().begin(), cost.values().end());
  }
  return out;
}

DecoderTrainResult train_decoder(const ControlProblem& prob, nn::Mlp decoder, const LatentSolveConfig& solve,
                                 const ControlTrainConfig& cfg, const StepCallback& on_step) {
  if (decoder.out_features() != prob.horizon)
    throw optim::ConfigError("decoder output size " + std::to_string(decoder.out_features()) +
                             " does not match horizon " + std::to_string(prob.horizon));
  if (cfg.eval_every == 0) throw optim::ConfigError("eval_every must be positive");
  solve.dcem.validate();

  const std::vector<State> val_states = sample_initial_states(cfg.validation_states, cfg.validation_seed);
  auto validate = [&](const nn::Mlp& dec) {
    const auto costs = embedded_costs(prob, dec, val_states, solve);
    double s = 0.0;
    for (double c : costs) s += c;
    return costs.empty() ? 0.0 : s / static_cast<double>(costs.size());
  };

  DecoderTrainResult result{decoder, decoder, {}, 0.0, 0};
  result.best_val_cost = validate(decoder);
  result.curve.push_back({0, std::nan(""), result.best_val_cost});

  nn::Adam adam({.lr = cfg.lr});
  double window = 0.0;
  std::size_t window_n = 0;
  for (std::size_t step = 1; step <= cfg.outer_steps; ++step) {
    const State x = sample_initial_states(1, mix_seed(cfg.seed, step)).front();
    LatentSolveConfig inner = solve;
    inner.dcem.seed = mix_seed(solve.dcem.seed + 1, step);

    ad::Tape tape;
    const auto bound = decoder.bind(tape, true);
    const ad::Var cost = ad::sum(solve_latent(prob, bound, states_to_tensor({x}), inner).cost);
    const double c = cost.item();
    if (!std::isfinite(c) || c > cfg.divergence_threshold) {
      std::ostringstream msg;
      msg << "decoder training diverged at outer step " << step << ": cost " << c;
      throw TrainingDiverged(msg.str(), step);
    }
    tape.backward(cost);
    adam.step(decoder.parameters(), nn::gradients(bound));
    window += c;
    ++window_n;
    if (on_step) on_step(step, c);

    if (step % cfg.eval_every == 0 || step == cfg.outer_steps) {
      const double v = validate(decoder);
      result.curve.push_back({step, window / static_cast<double>(window_n), v});
      window = 0.0;
      window_n = 0;
      if (v < result.best_val_cost) {
        result.best_val_cost = v;
        result.best_step = step;
        result.decoder = decoder;
      }
    }
  }
  result.final_decoder = decoder;
  return result;
}

double improvement_factor(std::span<const double> expert_costs, std::span<const double> embedded_costs) {
  if (expert_costs.size() != embedded_costs.size() || expert_costs.empty())
    throw std::invalid_argument("improvement_factor: need matching, non-empty cost lists");
  double s = 0.0;
  for (std::size_t i = 0; i < expert_costs.size(); ++i) s += expert_costs[i] / std::max(embedded_costs[i], 1e-8);
  return s / static_cast<double>(expert_costs.size());
}

std::vector<SurfaceCell> latent_surface(const ControlProblem& prob, const nn::Mlp& decoder, const State& x_init,
                                        std::size_t resolution) {
  if (decoder.in_features() != 2) throw std::invalid_argument("latent_surface: needs a 2-D latent space");
  if (resolution < 2) throw std::invalid_argument("latent_surface: resolution must be at least 2");
  const std::size_t n = resolution * resolution;
  Tensor z(n, 2);
  for (std::size_t i = 0; i < resolution; ++i)
    for (std::size_t j = 0; j < resolution; ++j) {
      z(i * resolution + j, 0) = static_cast<double>(i) / (resolution - 1);
      z(i * resolution + j, 1) = static_cast<double>(j) / (resolution - 1);
    }
  const Tensor u = decoder.forward(z);
  const Tensor cost = rollout_costs(prob, repeat_tensor_rows(states_to_tensor({x_init}), n), u);
  std::vector<SurfaceCell> out(n);
  for (std::size_t r = 0; r < n; ++r) out[r] = {z(r, 0), z(r, 1), cost[r]};
  return out;
}

void write_trajectory_csv(std::ostream& out, const ControlProblem& prob, const State& x_init,
                          std::span<const double> u) {
  const auto states = rollout_states(prob, x_init, u);
  csv::Writer w(out, {"t", "p", "p_dot", "theta", "theta_dot", "u"});
  for (std::size_t t = 0; t < states.size(); ++t) {
    const auto& s = states[t];
    w.row({static_cast<double>(t), s.p, s.p_dot, s.theta, s.theta_dot, t < u.size() ? u[t] : std::nan("")});
  }
}

}  // namespace dcem::control
