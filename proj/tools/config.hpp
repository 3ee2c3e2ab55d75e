#pragma once

// Run configuration shared by every subcommand. Loaded from an optional JSON
// file, then overridden by flags; the manifest of a run is this object
// serialized back, so every knob that affects results shows up there.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcem/control.hpp"
#include "dcem/ebm.hpp"
#include "dcem/optimizers.hpp"

namespace dcem::cli {

/// Bad flags, bad JSON or an invalid combination of settings (exit code 2).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LmlSection {
  std::vector<double> x{2.0, 0.0};
  std::size_t k = 1;
  double tau = 1.0;
};

struct OptimizeSection {
  std::string objective = "quadratic";  // quadratic | shifted_quadratic | multimodal
  std::string method = "dcem";          // dcem | cem
  std::size_t dim = 1;
  double theta = 2.0;  // shifted_quadratic center
  std::size_t num_samples = 100;
  std::size_t num_elites = 10;
  std::size_t iterations = 10;
  double tau = 1.0;
  double mu0 = 0.0;
  double sigma0 = 5.0;
  bool normalize = true;
  std::string return_mode = "mean";  // mean | best_sample
};

struct RegressSection {
  std::size_t n_train = 1000;
  std::size_t n_val = 200;
  std::size_t hidden = 128;
  std::size_t layers = 2;
  std::size_t outer_steps = 5000;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::size_t eval_every = 100;
  std::vector<std::string> methods{"dcem", "unrolled_gd"};
  std::size_t inner_steps = 10;
  double inner_lr = 0.1;
  double y0 = 0.0;
  std::size_t num_samples = 100;
  std::size_t num_elites = 10;
  double tau = 1.0;
  double sigma0 = 3.0;
  bool normalize = true;
  std::size_t surface_x_points = 100;
  std::size_t surface_y_points = 200;
  double surface_y_min = -6.0;
  double surface_y_max = 3.0;
  std::vector<std::size_t> ablation_iterations{1, 10, 20, 30};
  double probe_delta = 0.05;
};

struct ExpertSection {
  std::size_t num_samples = 1000;
  std::size_t num_elites = 100;
  std::size_t iterations = 10;
  double sigma0 = 0.5;
};

struct AblationSection {
  std::vector<std::size_t> latent_dims{2, 4, 16};
  std::vector<double> taus{1.0, 0.1, 0.0};
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

struct CartpoleSection {
  std::size_t horizon = 20;
  std::string integrator = "rk4";
  std::size_t latent_dim = 2;
  std::size_t hidden = 200;
  std::size_t layers = 2;
  std::size_t outer_steps = 2000;
  double lr = 1e-3;
  std::size_t eval_every = 50;
  std::size_t validation_states = 32;
  std::uint64_t validation_seed = 1000;
  double tau = 1.0;
  std::size_t num_samples = 100;
  std::size_t num_elites = 10;
  std::size_t iterations = 10;
  double mu0 = 0.5;
  double sigma0 = 0.5;
  ExpertSection expert;
  std::size_t surface_resolution = 100;
  std::size_t trajectories = 4;
  AblationSection ablation;
  std::size_t jobs = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir;  // empty: $DCEM_OUTPUT_ROOT (or ./runs) / <command>
  LmlSection lml;
  OptimizeSection optimize;
  RegressSection regress;
  CartpoleSection cartpole;
};

nlohmann::json to_json(const RunConfig& cfg);

/// Missing keys keep their defaults; unknown keys and wrong types throw UsageError.
RunConfig from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

// Library configurations built from the sections.
optim::DcemConfig optimizer_config(const OptimizeSection& s, std::uint64_t seed);
ebm::InferenceConfig inference_config(const RegressSection& s, ebm::InferenceMethod m, std::uint64_t seed);
ebm::TrainConfig regress_train_config(const RegressSection& s, std::uint64_t seed);
control::ControlProblem control_problem(const CartpoleSection& s);
control::LatentSolveConfig latent_solve_config(const CartpoleSection& s, double tau, std::uint64_t seed);
control::ExpertConfig expert_config(const CartpoleSection& s, std::uint64_t seed);
control::ControlTrainConfig control_train_config(const CartpoleSection& s, std::uint64_t seed);

}  // namespace dcem::cli
