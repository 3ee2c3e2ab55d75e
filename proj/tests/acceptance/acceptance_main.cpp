// Acceptance run: one PASS/FAIL line per criterion. Criterion 8 only warns.
//
//   acceptance [--criteria 1,2,...]
//
// Criteria 6-8 train the full default configurations and take a long time on
// one core; progress goes to stderr.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "config.hpp"
#include "dcem/control.hpp"
#include "dcem/ebm.hpp"
#include "dcem/lml.hpp"
#include "dcem/optimizers.hpp"
#include "support/gradcheck.hpp"

using namespace dcem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// ---- 1: LML correctness -----------------------------------------------------------

Outcome lml_correctness() {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> n_dist(3, 64);
  std::uniform_real_distribution<double> log_tau(std::log(1e-2), std::log(10.0)), shift(-50.0, 50.0);
  // standardized scores, the inputs dcem feeds the projection
  std::normal_distribution<double> u;
  double feas = 0, stat = 0, shift_err = 0;
  bool interior = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = n_dist(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, n - 1)(rng);
    const double tau = std::exp(log_tau(rng));
    std::vector<double> x(n);
    for (auto& v : x) v = u(rng);
    const auto sol = lml::project(x, k, tau);
    feas = std::max(feas, std::abs(std::accumulate(sol.y.begin(), sol.y.end(), 0.0) - static_cast<double>(k)));
    for (std::size_t i = 0; i < n; ++i) {
      interior = interior && sol.y[i] > 0.0 && sol.y_complement[i] > 0.0;
      // stationarity of -x^T y - tau H_b(y) + nu (1^T y - k): y_i = sigmoid((x_i + nu) / tau)
      stat = std::max(stat, std::abs(sol.y[i] - sigmoid((x[i] + sol.nu) / tau)));
    }
    const double c = shift(rng);
    std::vector<double> xs(x);
    for (auto& v : xs) v += c;
    const auto sol2 = lml::project(xs, k, tau);
    for (std::size_t i = 0; i < n; ++i) shift_err = std::max(shift_err, std::abs(sol2.y[i] - sol.y[i]));
  }
  return {feas <= 1e-9 && interior && stat <= 1e-9 && shift_err <= 1e-9,
          fmt("max |1'y-k| %.2e, interior %s, stationarity %.2e, shift %.2e over 1000 instances", feas,
              interior ? "yes" : "no", stat, shift_err)};
}

// ---- 2: hard top-k limit ----------------------------------------------------------

Outcome topk_limit() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> n_dist(3, 64);
  std::uniform_real_distribution<double> gap(0.1, 0.6), start(-5.0, 5.0);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = n_dist(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, n - 1)(rng);
    std::vector<double> x(n);
    x[0] = start(rng);
    for (std::size_t i = 1; i < n; ++i) x[i] = x[i - 1] + gap(rng);
    std::shuffle(x.begin(), x.end(), rng);
    std::vector<double> neg(n);
    for (std::size_t i = 0; i < n; ++i) neg[i] = -x[i];
    const auto hard = optim::hard_topk_indicator(neg, k);
    const auto y = lml::project(x, k, 1e-5).y;
    for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(y[i] - hard[i]));
  }
  return {worst <= 1e-3, fmt("max |y(1e-5) - top-k| %.2e over 200 instances", worst)};
}

// ---- 3: implicit gradients and the op suite ---------------------------------------

Outcome implicit_gradients() {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> n_dist(3, 32);
  std::uniform_real_distribution<double> log_tau(std::log(1e-1), std::log(10.0)), u(-2.0, 2.0);
  double worst_lml = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = n_dist(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, n - 1)(rng);
    const double tau = std::exp(log_tau(rng));
    std::vector<double> x(n), w(n);
    for (auto& v : x) v = u(rng);
    for (auto& v : w) v = u(rng);
    const auto sol = lml::project(x, k, tau);
    const auto an = lml::vjp(sol, tau, w);
    auto f = [&](const std::vector<double>& xx) {
      const auto y = lml::project(xx, k, tau).y;
      return std::inner_product(y.begin(), y.end(), w.begin(), 0.0);
    };
    Tensor a(1, n), fd(1, n);
    for (std::size_t i = 0; i < n; ++i) {
      auto p = x, m = x;
      p[i] += 1e-5;
      m[i] -= 1e-5;
      fd[i] = (f(p) - f(m)) / 2e-5;
      a[i] = an[i];
    }
    worst_lml = std::max(worst_lml, testing::rel_err(a, fd));
  }

  using ad::Var;
  using OpFn = std::function<Var(const std::vector<Var>&)>;
  const std::vector<std::size_t> idx{0, 0, 1};
  const std::vector<std::tuple<std::string, OpFn, int, double, double>> ops{
      {"add", [](auto& v) { return v[0] + v[1]; }, 2, -2, 2},
      {"sub", [](auto& v) { return v[0] - v[1]; }, 2, -2, 2},
      {"mul", [](auto& v) { return v[0] * v[1]; }, 2, -2, 2},
      {"div", [](auto& v) { return v[0] / v[1]; }, 2, 0.5, 2},
      {"matmul", [](auto& v) { return ad::matmul(v[0], ad::transpose(v[1])); }, 2, -1, 1},
      {"row_sum", [](auto& v) { return ad::row_sum(v[0]); }, 1, -2, 2},
      {"col_sum", [](auto& v) { return ad::col_sum(v[0]); }, 1, -2, 2},
      {"mean", [](auto& v) { return ad::square(ad::mean(v[0])); }, 1, -2, 2},
      {"square", [](auto& v) { return ad::square(v[0]); }, 1, -2, 2},
      {"sqrt", [](auto& v) { return ad::sqrt(v[0]); }, 1, 0.2, 3},
      {"exp", [](auto& v) { return ad::exp(v[0]); }, 1, -2, 2},
      {"log", [](auto& v) { return ad::log(v[0]); }, 1, 0.2, 3},
      {"tanh", [](auto& v) { return ad::tanh(v[0]); }, 1, -2, 2},
      {"sigmoid", [](auto& v) { return ad::sigmoid(v[0]); }, 1, -4, 4},
      {"softplus", [](auto& v) { return ad::softplus(v[0]); }, 1, -4, 4},
      {"sin", [](auto& v) { return ad::sin(v[0]); }, 1, -3, 3},
      {"cos", [](auto& v) { return ad::cos(v[0]); }, 1, -3, 3},
      {"elu", [](auto& v) { return ad::elu(v[0]) - ad::elu(-v[0]); }, 1, 0.05, 2},
      {"concat", [](auto& v) { std::vector<Var> p{v[0], v[1]}; return ad::concat_cols(p); }, 2, -2, 2},
      {"select_rows", [&](auto& v) { return ad::select_rows(v[0], idx); }, 1, -2, 2},
      {"repeat/segment", [](auto& v) { return ad::segment_sum(ad::square(ad::repeat_rows(v[0], 3)), 1); }, 1, -2, 2},
      {"lml", [](auto& v) { return lml::project(v[0], 1, 0.7); }, 1, -2, 2},
  };
  double worst_op = 0;
  std::string worst_name;
  for (const auto& [name, op, arity, lo, hi] : ops) {
    for (int trial = 0; trial < 4; ++trial) {
      std::vector<Tensor> in;
      for (int a = 0; a < arity; ++a) in.push_back(testing::random_tensor(rng, 3, 4, lo, hi));
      const std::uint64_t seed = rng();
      testing::ScalarFn f = [&](ad::Tape&, const std::vector<Var>& v) {
        Var out = op(v);
        std::mt19937_64 r(seed);
        return ad::sum(out * out.tape().constant(testing::random_tensor(r, out.rows(), out.cols())));
      };
      const double e = testing::gradcheck(f, in);
      if (e > worst_op) worst_op = e, worst_name = name;
    }
  }
  return {worst_lml <= 1e-4 && worst_op <= 1e-4,
          fmt("LML vjp rel err %.2e over 100 instances; op suite worst %.2e (%s)", worst_lml, worst_op,
              worst_name.c_str())};
}

// ---- 4, 5: DCEM against CEM and its outer gradient ------------------------------------

Outcome dcem_matches_cem() {
  const cli::OptimizeSection s;  // registry defaults: (x - 3)^2, mu0 0, sigma0 5, N 100, k 10, T 10
  const auto init = optim::GaussianDistribution::isotropic(1, 1, s.mu0, s.sigma0);
  auto f = [](const ad::Var& x) { return ad::row_sum(ad::square(x - 3.0)); };
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto hard = cli::optimizer_config(s, seed);
    hard.tau = 0.0;
    auto soft = hard;
    soft.tau = 1e-5;
    const double a = optim::cem(optim::values_of(f), init, hard).point[0];
    ad::Tape tape;
    const double b = optim::dcem(tape, f, init, soft).point.item();
    worst = std::max(worst, std::abs(a - b));
  }
  return {worst <= 1e-4, fmt("max |mu_dcem - mu_cem| %.2e over 20 seeds", worst)};
}

Outcome dcem_gradient() {
  const optim::DcemConfig base{.num_samples = 20, .num_elites = 5, .iterations = 3, .tau = 1.0};
  const auto init = optim::GaussianDistribution::isotropic(1, 1, 0.0, 5.0);
  auto solve = [&](ad::Tape& tape, const ad::Var& theta, std::uint64_t seed) {
    auto cfg = base;
    cfg.seed = seed;
    auto f = [&](const ad::Var& x) { return ad::square(x - ad::expand(theta, x.rows(), 1)); };
    return optim::dcem(tape, f, init, cfg).point;
  };
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ad::Tape tape;
    ad::Var theta = tape.variable(Tensor::scalar(2.0));
    tape.backward(solve(tape, theta, seed));
    const double an = theta.grad()[0];
    auto at = [&](double t) {
      ad::Tape s;
      return solve(s, s.constant(Tensor::scalar(t)), seed).item();
    };
    const double fd = (at(2.0 + 1e-5) - at(2.0 - 1e-5)) / 2e-5;
    worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-12}));
  }
  return {worst <= 1e-3, fmt("max rel err d(output)/d(theta) %.2e over 20 seeds", worst)};
}

// ---- 6: regression experiment -------------------------------------------------------

Outcome regression() {
  const cli::RegressSection s;
  const std::uint64_t seed = 0;
  const auto task = ebm::RegressionTask::generate(s.n_train, s.n_val, seed);
  const auto tc = cli::regress_train_config(s, seed);

  struct Run {
    ebm::TrainResult result;
    ebm::InferenceConfig inference;
    double probe;
  };
  std::vector<Run> runs;
  for (auto method : {ebm::InferenceMethod::dcem, ebm::InferenceMethod::unrolled_gd}) {
    const auto inf = cli::inference_config(s, method, seed);
    const auto t0 = std::chrono::steady_clock::now();
    auto r = ebm::train(task, inf, tc, ebm::EnergyNetwork({s.hidden, s.layers, seed}),
                        [&](std::size_t step, double loss) {
                          if (step % 500 == 0)
                            std::cerr << "  [6] " << ebm::to_string(method) << " step " << step << " loss " << loss
                                      << "\n";
                        });
    std::cerr << "  [6] " << ebm::to_string(method) << " trained in "
              << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
    const double probe = ebm::local_minimum_pass_rate(r.model, task.x_val, inf, s.probe_delta);
    runs.push_back({std::move(r), inf, probe});
  }
  const auto& dcem = runs[0];
  const auto& gd = runs[1];
  const auto ablation =
      ebm::ablate_inner_iterations(dcem.result.model, task.x_val, task.y_val, dcem.inference, {10, 30});
  const double mse10 = ablation[0].val_mse, mse30 = ablation[1].val_mse;
  const double train_dcem = dcem.result.curve.back().train_mse, train_gd = gd.result.curve.back().train_mse;
  const double ratio = std::max(train_dcem, train_gd) / std::min(train_dcem, train_gd);
  const auto gd_ablation = ebm::ablate_inner_iterations(gd.result.model, task.x_val, task.y_val, gd.inference, {30});

  // Converged: the final training loss is at most 5% of the first logged one.
  auto reduction = [](const ebm::TrainResult& r) {
    double first = std::nan("");
    for (const auto& row : r.curve)
      if (std::isfinite(row.train_mse)) {
        first = row.train_mse;
        break;
      }
    return r.curve.back().train_mse / first;
  };
  const double red_dcem = reduction(dcem.result), red_gd = reduction(gd.result);
  const bool converged = red_dcem <= 0.05 && red_gd <= 0.05;

  const bool pass = converged && dcem.probe >= 0.8 && dcem.probe > gd.probe && mse30 <= 2.0 * mse10;
  return {pass, fmt("train mse dcem %.4g gd %.4g (final/first %.3g, %.3g; ratio %.2f, not gated); probe dcem %.3f "
                    "gd %.3f; dcem val mse @10 %.4g @30 %.4g; gd val mse @10 %.4g @30 %.4g",
                    train_dcem, train_gd, red_dcem, red_gd, ratio, dcem.probe, gd.probe, mse10, mse30,
                    gd.result.final_val_mse, gd_ablation[0].val_mse)};
}

// ---- 7, 8: cartpole --------------------------------------------------------------------

struct CartpoleRun {
  double factor;
  double best_val_cost;
};

CartpoleRun cartpole_run(std::size_t latent_dim, double tau, std::uint64_t seed, const std::vector<double>* expert) {
  const cli::CartpoleSection s;
  const auto prob = cli::control_problem(s);
  const auto solve = cli::latent_solve_config(s, tau, seed);
  const auto t0 = std::chrono::steady_clock::now();
  auto r = control::train_decoder(prob, control::make_decoder({latent_dim, s.hidden, s.layers, seed}, s.horizon),
                                  solve, cli::control_train_config(s, seed));
  CartpoleRun out{0.0, r.best_val_cost};
  if (expert) {
    const auto states = control::sample_initial_states(s.validation_states, s.validation_seed);
    out.factor = control::improvement_factor(*expert, control::embedded_costs(prob, r.decoder, states, solve));
  }
  std::cerr << "  n_z " << latent_dim << " tau " << tau << " seed " << seed << ": best val cost " << r.best_val_cost
            << " at step " << r.best_step << (expert ? ", factor " + std::to_string(out.factor) : "") << " ("
            << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s)\n";
  return out;
}

Outcome cartpole_recovery() {
  const cli::CartpoleSection s;
  const auto prob = cli::control_problem(s);
  const auto states = control::sample_initial_states(s.validation_states, s.validation_seed);
  std::string detail = "factors";
  int passing = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::vector<double> expert;
    for (const auto& p : control::expert_cem(prob, states, cli::expert_config(s, seed))) expert.push_back(p.cost);
    const auto run = cartpole_run(s.latent_dim, s.tau, seed, &expert);
    passing += run.factor >= 0.9;
    detail += fmt(" %.3f", run.factor);
  }
  return {passing >= 2, detail + fmt(" (%d of 3 seeds >= 0.9)", passing)};
}

Outcome cartpole_ablation() {
  std::string detail = "best val cost tau=1 vs tau=0:";
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const double soft = cartpole_run(16, 1.0, seed, nullptr).best_val_cost;
    const double hard = cartpole_run(16, 0.0, seed, nullptr).best_val_cost;
    wins += soft < hard;
    detail += fmt(" seed %d %.3f vs %.3f;", static_cast<int>(seed), soft, hard);
  }
  return {wins >= 2, detail + fmt(" tau=1 better on %d of 3", wins)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("--criteria", only, "Comma-separated subset to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"LML correctness", lml_correctness},
      {"hard top-k limit", topk_limit},
      {"implicit gradients", implicit_gradients},
      {"dcem matches cem at low temperature", dcem_matches_cem},
      {"end-to-end dcem gradient", dcem_gradient},
      {"regression experiment", regression},
      {"cartpole recovery", cartpole_recovery},
      {"latent ablation (soft gate)", cartpole_ablation},
  };
  const std::set<int> selected(only.begin(), only.end());
  bool ok = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    std::cerr << "criterion " << id << ": running " << criteria[i].first << "\n";
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool soft = id == 8;
    const char* verdict = o.pass ? "PASS" : soft ? "WARN" : "FAIL";
    std::cout << "criterion " << id << " " << verdict << " " << criteria[i].first << ": " << o.detail
              << fmt(" [%.1f s]", secs) << std::endl;
    if (!o.pass && !soft) ok = false;
  }
  return ok ? 0 : 1;
}
