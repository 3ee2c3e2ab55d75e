#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <mutex>
#include <numbers>
#include <thread>

#include "dcem/csv.hpp"
#include "dcem/lml.hpp"

#ifndef DCEM_GIT_DESCRIBE
#define DCEM_GIT_DESCRIBE "unknown"
#endif

namespace dcem::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::ofstream open_file(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  return f;
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& cfg, const json& body) {
  json m{{"command", command}, {"version", version()}, {"config", to_json(cfg)}};
  m.update(body);
  open_file(dir / "manifest.json") << m.dump(2) << "\n";
}

std::string tag(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// ---- objective registry ------------------------------------------------------

const std::vector<std::string> kObjectives{"quadratic", "shifted_quadratic", "multimodal"};

/// rows x dim -> rows x 1. theta is 1 x 1 and only used by shifted_quadratic.
ad::Var evaluate_objective(const std::string& name, const ad::Var& x, const ad::Var& theta) {
  if (name == "quadratic") return ad::row_sum(ad::square(x - 3.0));
  if (name == "shifted_quadratic") return ad::row_sum(ad::square(x - ad::expand(theta, x.rows(), x.cols())));
  // 1-D Rastrigin per coordinate, global minimum 0 at the origin
  return ad::row_sum(ad::square(x) - 10.0 * ad::cos(2.0 * std::numbers::pi * x) + 10.0);
}

json trace_json(const optim::IterationTrace& trace) {
  json out = json::array();
  for (std::size_t t = 0; t < trace.iterations.size(); ++t) {
    const auto& it = trace.iterations[t];
    const auto v = it.values.values();
    double mean = 0.0;
    for (double x : v) mean += x;
    double wsum = 0.0;
    for (double w : it.weights.values()) wsum += w;
    out.push_back({{"iteration", t + 1},
                   {"mu", std::vector<double>(it.mu.values().begin(), it.mu.values().end())},
                   {"sigma2", std::vector<double>(it.sigma2.values().begin(), it.sigma2.values().end())},
                   {"min_value", *std::min_element(v.begin(), v.end())},
                   {"mean_value", mean / static_cast<double>(v.size())},
                   {"weight_sum", wsum}});
  }
  return out;
}

// ---- regression helpers -----------------------------------------------------------

void write_loss_csv(const fs::path& path, const std::vector<ebm::LossPoint>& curve) {
  auto f = open_file(path);
  csv::Writer w(f, {"step", "train_mse", "val_mse"});
  for (const auto& p : curve) w.row({static_cast<double>(p.step), p.train_mse, p.val_mse});
}

/// Fraction of x-slices whose energy argmin lies within `tol` of the target.
double surface_argmin_rate(const std::vector<ebm::SurfacePoint>& surface, std::size_t ny, double tol) {
  const std::size_t nx = surface.size() / ny;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < nx; ++i) {
    auto begin = surface.begin() + static_cast<std::ptrdiff_t>(i * ny);
    auto best = std::min_element(begin, begin + static_cast<std::ptrdiff_t>(ny),
                                 [](const auto& a, const auto& b) { return a.energy < b.energy; });
    if (std::abs(best->y - ebm::target(best->x)) <= tol) ++hits;
  }
  return nx == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(nx);
}

// ---- cartpole helpers ------------------------------------------------------------

void write_cost_curve(const fs::path& path, const std::vector<control::CostPoint>& curve) {
  auto f = open_file(path);
  csv::Writer w(f, {"step", "train_cost", "val_cost"});
  for (const auto& p : curve) w.row({static_cast<double>(p.step), p.train_cost, p.val_cost});
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::vector<double> plan_costs(const std::vector<control::Plan>& plans) {
  std::vector<double> out;
  for (const auto& p : plans) out.push_back(p.cost);
  return out;
}

/// Decoded controls of the latent found for a single initial state.
std::vector<double> embedded_plan(const control::ControlProblem& prob, const nn::Mlp& decoder,
                                  const control::State& x, const control::LatentSolveConfig& solve) {
  ad::Tape tape;
  const auto bound = decoder.bind(tape, false);
  const auto sol = control::solve_latent(prob, bound, control::states_to_tensor({x}), solve);
  const Tensor u = decoder.forward(sol.z.value());
  return {u.values().begin(), u.values().end()};
}

struct CellResult {
  std::size_t latent_dim;
  double tau;
  std::uint64_t seed;
  double factor = 0.0;
  double best_val_cost = 0.0;
  std::size_t best_step = 0;
  std::string error;
  std::shared_ptr<nn::Mlp> decoder;  // best checkpoint, kept only with artifacts
};

/// One decoder training run and its evaluation, written under `dir`.
CellResult run_cell(const CartpoleSection& s, std::size_t latent_dim, double tau, std::uint64_t seed,
                    const std::vector<control::State>& val_states, const std::vector<double>& expert,
                    const fs::path& dir, bool artifacts, std::ostream* log, std::mutex& log_mutex) {
  CellResult res{latent_dim, tau, seed};
  const auto prob = control_problem(s);
  const auto solve = latent_solve_config(s, tau, seed);
  auto tc = control_train_config(s, seed);
  auto decoder = control::make_decoder({latent_dim, s.hidden, s.layers, seed}, s.horizon);
  const std::string name = "n_z=" + std::to_string(latent_dim) + " tau=" + tag(tau) + " seed=" + std::to_string(seed);

  auto r = control::train_decoder(prob, decoder, solve, tc, [&](std::size_t step, double cost) {
    if (log && (step % s.eval_every == 0 || step == s.outer_steps)) {
      std::lock_guard lock(log_mutex);
      *log << "[cartpole " << name << "] step " << step << " cost " << cost << "\n";
    }
  });
  write_cost_curve(dir / "curve.csv", r.curve);
  const auto embedded = control::embedded_costs(prob, r.decoder, val_states, solve);
  res.factor = control::improvement_factor(expert, embedded);
  res.best_val_cost = r.best_val_cost;
  res.best_step = r.best_step;

  if (artifacts) {
    res.decoder = std::make_shared<nn::Mlp>(r.decoder);
    auto f = open_file(dir / "validation.csv");
    csv::Writer w(f, {"state", "p", "p_dot", "theta", "theta_dot", "expert_cost", "embedded_cost"});
    for (std::size_t i = 0; i < val_states.size(); ++i) {
      const auto& x = val_states[i];
      w.row({static_cast<double>(i), x.p, x.p_dot, x.theta, x.theta_dot, expert[i], embedded[i]});
    }
  }
  return res;
}

}  // namespace

std::string version() { return DCEM_GIT_DESCRIBE; }

fs::path output_directory(const RunConfig& cfg, const std::string& command) {
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  const char* root = std::getenv("DCEM_OUTPUT_ROOT");
  return fs::path(root && *root ? root : "runs") / command;
}

int cmd_lml(const RunConfig& cfg, std::ostream& out) {
  const auto& s = cfg.lml;
  if (!(s.tau > 0.0))
    throw UsageError("lml-proj needs --tau > 0; use the topk subcommand for the hard top-k indicator");
  const auto sol = lml::project(s.x, s.k, s.tau);
  out << json{{"y", sol.y}, {"nu", sol.nu}, {"residual", sol.residual}, {"iterations", sol.iterations}}.dump(2)
      << "\n";
  return 0;
}

int cmd_topk(const RunConfig& cfg, std::ostream& out) {
  const auto& s = cfg.lml;
  if (s.k == 0 || s.k > s.x.size()) throw UsageError("topk needs 1 <= k <= number of scores");
  std::vector<double> neg(s.x.size());
  std::transform(s.x.begin(), s.x.end(), neg.begin(), [](double v) { return -v; });
  out << json{{"y", optim::hard_topk_indicator(neg, s.k)}}.dump(2) << "\n";
  return 0;
}

int cmd_optimize(const RunConfig& cfg, std::ostream& out) {
  const auto& s = cfg.optimize;
  if (std::find(kObjectives.begin(), kObjectives.end(), s.objective) == kObjectives.end())
    throw UsageError("unknown objective '" + s.objective + "' (expected quadratic, shifted_quadratic or multimodal)");
  if (s.method != "dcem" && s.method != "cem")
    throw UsageError("unknown method '" + s.method + "' (expected dcem or cem)");
  if (s.dim == 0) throw UsageError("--dim must be positive");
  if (!(s.sigma0 > 0.0)) throw UsageError("--sigma0 must be positive");
  const auto dc = optimizer_config(s, cfg.seed);
  dc.validate();
  const auto init = optim::GaussianDistribution::isotropic(1, s.dim, s.mu0, s.sigma0);

  ad::Tape tape;
  const ad::Var theta = tape.variable(Tensor::scalar(s.theta));
  auto objective = [&](const ad::Var& x) { return evaluate_objective(s.objective, x, theta); };

  json result{{"objective", s.objective}, {"method", s.method}};
  Tensor x_hat;
  if (s.method == "cem") {
    if (dc.tau != 0.0) throw UsageError("--method cem needs --tau 0");
    const auto r = optim::cem(optim::values_of(objective), init, dc);
    x_hat = r.point;
    result["trace"] = trace_json(r.trace);
  } else {
    if (!(dc.tau > 0.0)) throw UsageError("--method dcem needs --tau > 0 (use --method cem for tau 0)");
    const auto r = optim::dcem(tape, objective, init, dc);
    x_hat = r.point.value();
    result["trace"] = trace_json(r.trace);
    if (s.objective == "shifted_quadratic") {
      tape.backward(ad::sum(r.point));
      result["d_sum_x_hat_d_theta"] = theta.grad()[0];
    }
  }
  ad::Tape scratch;
  result["x_hat"] = std::vector<double>(x_hat.values().begin(), x_hat.values().end());
  result["f_x_hat"] = evaluate_objective(s.objective, scratch.constant(x_hat), scratch.constant(Tensor::scalar(s.theta))).item();
  out << result.dump(2) << "\n";
  return 0;
}

int cmd_regress(const RunConfig& cfg, const fs::path& dir, std::ostream& out, std::ostream& log) {
  const auto& s = cfg.regress;
  std::vector<std::pair<std::string, ebm::InferenceConfig>> runs;
  for (const auto& name : s.methods) {
    ebm::InferenceMethod m;
    try {
      m = ebm::parse_method(name);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    auto inf = inference_config(s, m, cfg.seed);
    inf.validate();
    runs.emplace_back(ebm::to_string(m), inf);
  }
  if (s.surface_x_points < 2 || s.surface_y_points < 2 || !(s.surface_y_max > s.surface_y_min))
    throw UsageError("surface grid needs at least 2 points per axis and y_max > y_min");
  const auto tc = regress_train_config(s, cfg.seed);
  const auto task = ebm::RegressionTask::generate(s.n_train, s.n_val, cfg.seed);
  const auto xs = ebm::linspace(0.0, 2.0 * std::numbers::pi, s.surface_x_points);
  const auto ys = ebm::linspace(s.surface_y_min, s.surface_y_max, s.surface_y_points);

  json metrics = json::object();
  for (const auto& [name, inf] : runs) {
    const ebm::EnergyNetwork net({s.hidden, s.layers, cfg.seed});
    ebm::TrainResult r;
    try {
      r = ebm::train(task, inf, tc, net, [&, name = name](std::size_t step, double loss) {
        if (step % s.eval_every == 0 || step == s.outer_steps)
          log << "[regress " << name << "] step " << step << " loss " << loss << "\n";
      });
    } catch (const ebm::TrainingDiverged& e) {
      write_manifest(dir, "regress", cfg,
                     {{"status", "failed"}, {"method", name}, {"error", e.what()}, {"step", e.step()}, {"metrics", metrics}});
      throw;
    }
    const fs::path sub = dir / name;
    write_loss_csv(sub / "loss.csv", r.curve);

    const auto surface = ebm::energy_surface(r.model, xs, ys);
    auto sf = open_file(sub / "surface.csv");
    ebm::write_surface_csv(sf, surface);

    const auto ablation = ebm::ablate_inner_iterations(r.model, task.x_val, task.y_val, inf, s.ablation_iterations);
    auto af = open_file(sub / "ablation.csv");
    csv::Writer aw(af, {"iterations", "val_mse"});
    json ablation_json = json::object();
    for (const auto& row : ablation) {
      aw.row({static_cast<double>(row.iterations), row.val_mse});
      ablation_json[std::to_string(row.iterations)] = row.val_mse;
    }

    metrics[name] = {{"final_val_mse", r.final_val_mse},
                     {"final_train_mse", r.curve.back().train_mse},
                     {"probe_pass_rate", ebm::local_minimum_pass_rate(r.model, task.x_val, inf, s.probe_delta)},
                     {"surface_argmin_rate", surface_argmin_rate(surface, ys.size(), 0.3)},
                     {"ablation_val_mse", ablation_json}};
  }
  write_manifest(dir, "regress", cfg, {{"status", "ok"}, {"metrics", metrics}});
  out << metrics.dump(2) << "\n";
  return 0;
}

int cmd_cartpole(const RunConfig& cfg, CartpoleMode mode, const fs::path& dir, std::ostream& out, std::ostream& log) {
  const auto& s = cfg.cartpole;
  const auto prob = control_problem(s);
  if (s.eval_every == 0) throw UsageError("--eval-every must be positive");
  const auto val_states = control::sample_initial_states(s.validation_states, s.validation_seed);
  const auto expert_cfg = expert_config(s, cfg.seed);
  expert_cfg.cem.validate();

  if (mode == CartpoleMode::ablate) {
    if (s.jobs == 0) throw UsageError("--jobs must be positive");
    for (double tau : s.ablation.taus) latent_solve_config(s, tau, 0).dcem.validate();
    std::vector<CellResult> cells;
    for (auto d : s.ablation.latent_dims)
      for (double tau : s.ablation.taus)
        for (auto seed : s.ablation.seeds) cells.push_back({d, tau, seed});

    const auto expert = plan_costs(control::expert_cem(prob, val_states, expert_cfg));
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    auto worker = [&] {
      for (std::size_t i; (i = next++) < cells.size();) {
        auto& c = cells[i];
        const fs::path sub = dir / ("nz" + std::to_string(c.latent_dim) + "_tau" + tag(c.tau) + "_seed" +
                                    std::to_string(c.seed));
        try {
          c = run_cell(s, c.latent_dim, c.tau, c.seed, val_states, expert, sub, false, &log, log_mutex);
        } catch (const std::exception& e) {
          c.error = e.what();
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t j = 1; j < std::min(s.jobs, cells.size()); ++j) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    auto f = open_file(dir / "improvement.csv");
    csv::Writer w(f, {"n_z", "tau", "seed", "factor", "best_val_cost", "best_step"});
    json rows = json::array();
    bool failed = false;
    for (const auto& c : cells) {
      w.row({static_cast<double>(c.latent_dim), c.tau, static_cast<double>(c.seed), c.factor, c.best_val_cost,
             static_cast<double>(c.best_step)});
      json row{{"n_z", c.latent_dim}, {"tau", c.tau}, {"seed", c.seed}, {"factor", c.factor},
               {"best_val_cost", c.best_val_cost}, {"best_step", c.best_step}};
      if (!c.error.empty()) row["error"] = c.error, failed = true;
      rows.push_back(row);
    }
    write_manifest(dir, "cartpole", cfg,
                   {{"status", failed ? "failed" : "ok"}, {"mode", "ablate"}, {"mean_expert_cost", mean_of(expert)},
                    {"cells", rows}});
    out << rows.dump(2) << "\n";
    return failed ? 1 : 0;
  }

  const auto plans = control::expert_cem(prob, val_states, expert_cfg);
  const auto expert = plan_costs(plans);
  if (mode == CartpoleMode::expert_only) {
    auto f = open_file(dir / "expert.csv");
    csv::Writer w(f, {"state", "p", "p_dot", "theta", "theta_dot", "expert_cost"});
    for (std::size_t i = 0; i < val_states.size(); ++i) {
      const auto& x = val_states[i];
      w.row({static_cast<double>(i), x.p, x.p_dot, x.theta, x.theta_dot, expert[i]});
    }
    const json metrics{{"mean_expert_cost", mean_of(expert)}};
    write_manifest(dir, "cartpole", cfg, {{"status", "ok"}, {"mode", "expert_only"}, {"metrics", metrics}});
    out << metrics.dump(2) << "\n";
    return 0;
  }

  const auto solve = latent_solve_config(s, s.tau, cfg.seed);
  solve.dcem.validate();
  const auto untrained = control::make_decoder({s.latent_dim, s.hidden, s.layers, cfg.seed}, s.horizon);
  const double baseline =
      control::improvement_factor(expert, control::embedded_costs(prob, untrained, val_states, solve));

  std::mutex log_mutex;
  CellResult cell;
  try {
    cell = run_cell(s, s.latent_dim, s.tau, cfg.seed, val_states, expert, dir, true, &log, log_mutex);
  } catch (const control::TrainingDiverged& e) {
    write_manifest(dir, "cartpole", cfg,
                   {{"status", "failed"}, {"mode", "train"}, {"error", e.what()}, {"step", e.step()}});
    throw;
  }
  json metrics{{"improvement_factor", cell.factor},
               {"untrained_improvement_factor", baseline},
               {"best_val_cost", cell.best_val_cost},
               {"best_step", cell.best_step},
               {"mean_expert_cost", mean_of(expert)}};

  if (s.latent_dim == 2 && !val_states.empty()) {
    const auto surface = control::latent_surface(prob, *cell.decoder, val_states.front(), s.surface_resolution);
    auto f = open_file(dir / "surface.csv");
    csv::Writer w(f, {"z1", "z2", "cost"});
    double lo = INFINITY;
    for (const auto& c : surface) w.row({c.z1, c.z2, c.cost}), lo = std::min(lo, c.cost);
    std::size_t low = 0;
    for (const auto& c : surface) low += c.cost <= lo + 0.1 * std::abs(lo);
    metrics["surface_min_cost"] = lo;
    metrics["surface_low_cost_fraction"] = static_cast<double>(low) / static_cast<double>(surface.size());
  }
  for (std::size_t i = 0; i < std::min(s.trajectories, val_states.size()); ++i) {
    const std::string stem = "state" + std::to_string(i);
    auto fe = open_file(dir / "trajectories" / (stem + "_embedded.csv"));
    control::write_trajectory_csv(fe, prob, val_states[i], embedded_plan(prob, *cell.decoder, val_states[i], solve));
    auto fx = open_file(dir / "trajectories" / (stem + "_expert.csv"));
    control::write_trajectory_csv(fx, prob, val_states[i], plans[i].u);
  }

  write_manifest(dir, "cartpole", cfg, {{"status", "ok"}, {"mode", "train"}, {"metrics", metrics}});
  {
    auto f = open_file(dir / "improvement.csv");
    csv::Writer w(f, {"n_z", "tau", "seed", "factor"});
    w.row({static_cast<double>(s.latent_dim), s.tau, static_cast<double>(cfg.seed), cell.factor});
  }
  out << metrics.dump(2) << "\n";
  return 0;
}

}  // namespace dcem::cli
