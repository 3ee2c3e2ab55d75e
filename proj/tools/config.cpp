#include "config.hpp"

#include <fstream>

namespace dcem::cli {

using nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LmlSection, x, k, tau)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(OptimizeSection, objective, method, dim, theta, num_samples,
                                                num_elites, iterations, tau, mu0, sigma0, normalize, return_mode)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RegressSection, n_train, n_val, hidden, layers, outer_steps,
                                                batch_size, lr, eval_every, methods, inner_steps, inner_lr, y0,
                                                num_samples, num_elites, tau, sigma0, normalize, surface_x_points,
                                                surface_y_points, surface_y_min, surface_y_max, ablation_iterations,
                                                probe_delta)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExpertSection, num_samples, num_elites, iterations, sigma0)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AblationSection, latent_dims, taus, seeds)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CartpoleSection, horizon, integrator, latent_dim, hidden, layers,
                                                outer_steps, lr, eval_every, validation_states, validation_seed, tau,
                                                num_samples, num_elites, iterations, mu0, sigma0, expert,
                                                surface_resolution, trajectories, ablation, jobs)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, seed, output_dir, lml, optimize, regress, cartpole)

namespace {

void check_keys(const json& given, const json& reference, const std::string& path) {
  if (!given.is_object()) {
    if (reference.is_object()) throw UsageError("config: '" + path + "' must be an object");
    return;
  }
  for (const auto& [key, value] : given.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!reference.contains(key)) throw UsageError("config: unknown key '" + where + "'");
    if (reference[key].is_object()) check_keys(value, reference[key], where);
  }
}

}  // namespace

json to_json(const RunConfig& cfg) { return json(cfg); }

RunConfig from_json(const json& j) {
  check_keys(j, json(RunConfig{}), "");
  try {
    return j.get<RunConfig>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw UsageError("config file '" + path + "': " + e.what());
  }
}

optim::DcemConfig optimizer_config(const OptimizeSection& s, std::uint64_t seed) {
  optim::DcemConfig c{.num_samples = s.num_samples,
                      .num_elites = s.num_elites,
                      .iterations = s.iterations,
                      .tau = s.tau,
                      .normalize = s.normalize,
                      .seed = seed};
  if (s.return_mode == "mean")
    c.return_mode = optim::ReturnMode::mean;
  else if (s.return_mode == "best_sample")
    c.return_mode = optim::ReturnMode::best_sample;
  else
    throw UsageError("unknown return mode '" + s.return_mode + "' (expected mean or best_sample)");
  return c;
}

ebm::InferenceConfig inference_config(const RegressSection& s, ebm::InferenceMethod m, std::uint64_t seed) {
  ebm::InferenceConfig c = ebm::InferenceConfig::defaults(m);
  c.steps = s.inner_steps;
  c.lr = s.inner_lr;
  c.y0 = s.y0;
  c.num_samples = s.num_samples;
  c.num_elites = s.num_elites;
  c.tau = s.tau;
  c.sigma0 = s.sigma0;
  c.normalize = s.normalize;
  c.seed = seed;
  return c;
}

ebm::TrainConfig regress_train_config(const RegressSection& s, std::uint64_t seed) {
  return {.outer_steps = s.outer_steps, .batch_size = s.batch_size, .lr = s.lr, .eval_every = s.eval_every, .seed = seed};
}

control::ControlProblem control_problem(const CartpoleSection& s) {
  control::ControlProblem p;
  p.horizon = s.horizon;
  try {
    p.dynamics.integrator = control::parse_integrator(s.integrator);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return p;
}

control::LatentSolveConfig latent_solve_config(const CartpoleSection& s, double tau, std::uint64_t seed) {
  control::LatentSolveConfig c;
  c.dcem = {.num_samples = s.num_samples, .num_elites = s.num_elites, .iterations = s.iterations, .tau = tau, .seed = seed};
  c.mu0 = s.mu0;
  c.sigma0 = s.sigma0;
  return c;
}

control::ExpertConfig expert_config(const CartpoleSection& s, std::uint64_t seed) {
  control::ExpertConfig c;
  c.cem = {.num_samples = s.expert.num_samples,
           .num_elites = s.expert.num_elites,
           .iterations = s.expert.iterations,
           .tau = 0.0,
           .seed = seed};
  c.mu0 = 0.5;
  c.sigma0 = s.expert.sigma0;
  return c;
}

control::ControlTrainConfig control_train_config(const CartpoleSection& s, std::uint64_t seed) {
  return {.outer_steps = s.outer_steps,
          .lr = s.lr,
          .eval_every = s.eval_every,
          .validation_states = s.validation_states,
          .validation_seed = s.validation_seed,
          .seed = seed};
}

}  // namespace dcem::cli
