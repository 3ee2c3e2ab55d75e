#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "dcem/control.hpp"

using namespace dcem;
using namespace dcem::control;

namespace {

ControlProblem small_problem(std::size_t horizon) {
  ControlProblem p;
  p.horizon = horizon;
  return p;
}

LatentSolveConfig small_solve() {
  LatentSolveConfig s;
  s.dcem.num_samples = 10;
  s.dcem.num_elites = 3;
  s.dcem.iterations = 2;
  return s;
}

double max_coord_diff(const State& a, const State& b) {
  return std::max({std::abs(a.p - b.p), std::abs(a.p_dot - b.p_dot), std::abs(a.theta - b.theta),
                   std::abs(a.theta_dot - b.theta_dot)});
}

}  // namespace

TEST_CASE("both equilibria are fixed points under zero force") {
  CartpoleParams c;
  for (double theta : {0.0, std::numbers::pi}) {
    State s{0, 0, theta, 0};
    for (int i = 0; i < 50; ++i) s = cartpole_step(s, 0.5, c);
    CHECK(max_coord_diff(s, {0, 0, theta, 0}) <= 1e-12);
  }
}

TEST_CASE("one step matches a fine rk4 reference") {
  CartpoleParams c, fine;
  fine.dt = c.dt / 100;
  for (const auto& x : sample_initial_states(100, 3))
    for (double u : {0.0, 0.3, 1.0}) {
      State ref = x;
      for (int i = 0; i < 100; ++i) ref = cartpole_step(ref, u, fine);
      CHECK(max_coord_diff(cartpole_step(x, u, c), ref) <= 1e-3);
    }
}

TEST_CASE("unforced energy drift stays below one percent") {
  CartpoleParams c;
  for (const auto& x0 : sample_initial_states(10, 4)) {
    const double e0 = mechanical_energy(x0, c);
    State s = x0;
    for (int i = 0; i < 200; ++i) s = cartpole_step(s, 0.5, c);
    CHECK(std::abs(mechanical_energy(s, c) - e0) <= 0.01 * std::abs(e0));
  }
}

TEST_CASE("single-step cost at the upright state") {
  const auto prob = small_problem(1);
  for (double u : {0.0, 0.25, 0.5, 1.0}) {
    const double expected = 0.001 * (2 * u - 1) * (2 * u - 1);
    CHECK(rollout_cost(prob, State{0, 0, 0, 0}, std::vector<double>{u}) == doctest::Approx(expected).epsilon(1e-14));
  }
  CHECK_THROWS_AS(rollout_cost(prob, State{}, std::vector<double>{0.5, 0.5}), ShapeError);
}

TEST_CASE("neutral controls keep the upright cart at zero cost") {
  const auto prob = small_problem(20);
  CHECK(rollout_cost(prob, State{0, 0, 0, 0}, std::vector<double>(20, 0.5)) <= 1e-12);
}

TEST_CASE("differentiable rollout agrees with the plain rollout and finite differences") {
  const auto prob = small_problem(20);
  const auto states = sample_initial_states(3, 9);
  const Tensor x = states_to_tensor(states);
  Tensor u(3, 20);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u01(0.1, 0.9);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = u01(rng);

  ad::Tape tape;
  ad::Var uv = tape.variable(u);
  ad::Var cost = rollout_cost(prob, x, uv);
  const Tensor plain = rollout_costs(prob, x, u);
  for (std::size_t r = 0; r < 3; ++r) CHECK(cost.value()[r] == doctest::Approx(plain[r]).epsilon(1e-12));

  tape.backward(ad::sum(cost));
  const Tensor g = uv.grad();
  const double h = 1e-6;
  for (std::size_t i = 0; i < u.size(); ++i) {
    Tensor up = u, dn = u;
    up[i] += h;
    dn[i] -= h;
    double fp = 0, fm = 0;
    for (std::size_t r = 0; r < 3; ++r) fp += rollout_costs(prob, x, up)[r], fm += rollout_costs(prob, x, dn)[r];
    CHECK(g[i] == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-5).scale(1e-6));
  }
}

TEST_CASE("expert plans beat the neutral plan and random shooting") {
  const auto prob = small_problem(20);
  const auto states = sample_initial_states(100, 21);
  ExpertConfig cfg;
  cfg.cem.seed = 5;
  const auto plans = expert_cem(prob, states, cfg);
  REQUIRE(plans.size() == states.size());
  std::size_t wins = 0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    CHECK(plans[i].cost <= rollout_cost(prob, states[i], std::vector<double>(20, 0.5)) + 1e-12);
    for (double u : plans[i].u) CHECK((u >= 0.0 && u <= 1.0));
    if (plans[i].cost <= random_shooting(prob, states[i], 1000, 100 + i).cost) ++wins;
  }
  CHECK(wins >= 95);

  const auto again = expert_cem(prob, {states[0], states[1]}, cfg);
  CHECK(again[0].u == expert_cem(prob, {states[0], states[1]}, cfg)[0].u);
}

TEST_CASE("latent cost is the rollout cost of the decoded controls") {
  const auto prob = small_problem(5);
  auto dec = make_decoder({.latent_dim = 2, .hidden = 8, .layers = 2, .seed = 1}, 5);
  const auto states = sample_initial_states(4, 1);
  Tensor z(4, 2, {0.1, 0.9, 0.5, 0.5, 0.0, 1.0, 0.7, 0.2});
  ad::Tape tape;
  const auto bound = dec.bind(tape, false);
  const Tensor c = latent_cost(prob, bound, states_to_tensor(states), tape.constant(z)).value();
  const Tensor u = dec.forward(z);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t t = 0; t < 5; ++t) CHECK((u(r, t) > 0.0 && u(r, t) < 1.0));
    CHECK(c[r] == doctest::Approx(rollout_cost(prob, states[r], u.row_span(r))).epsilon(1e-12));
  }
}

TEST_CASE("decoder gradient through the latent search matches finite differences") {
  const auto prob = small_problem(3);
  const auto solve = [] {
    auto s = small_solve();
    s.dcem.seed = 17;
    return s;
  }();
  auto dec = make_decoder({.latent_dim = 2, .hidden = 4, .layers = 1, .seed = 3}, 3);
  const Tensor x = states_to_tensor(sample_initial_states(2, 8));

  auto loss = [&](const nn::Mlp& d) {
    ad::Tape tape;
    return ad::sum(solve_latent(prob, d.bind(tape, false), x, solve).cost).item();
  };
  ad::Tape tape;
  const auto bound = dec.bind(tape, true);
  tape.backward(ad::sum(solve_latent(prob, bound, x, solve).cost));
  const auto grads = nn::gradients(bound);

  double diff2 = 0, an2 = 0, fd2 = 0;
  const double h = 1e-6;
  for (std::size_t p = 0; p < dec.parameters().size(); ++p)
    for (std::size_t j = 0; j < dec.parameters()[p].size(); ++j) {
      nn::Mlp plus = dec, minus = dec;
      plus.parameters()[p][j] += h;
      minus.parameters()[p][j] -= h;
      const double fd = (loss(plus) - loss(minus)) / (2 * h);
      diff2 += (fd - grads[p][j]) * (fd - grads[p][j]);
      an2 += grads[p][j] * grads[p][j];
      fd2 += fd * fd;
    }
  CHECK(std::sqrt(diff2) / std::max(std::sqrt(an2), std::sqrt(fd2)) <= 1e-2);
}

TEST_CASE("decoder training") {
  const auto prob = small_problem(5);
  auto dec = make_decoder({.latent_dim = 2, .hidden = 16, .layers = 2, .seed = 2}, 5);
  ControlTrainConfig tc{.outer_steps = 0, .eval_every = 5, .validation_states = 4};

  SUBCASE("zero steps reports the untrained decoder") {
    auto r = train_decoder(prob, dec, small_solve(), tc);
    REQUIRE(r.curve.size() == 1);
    CHECK(r.best_step == 0);
    CHECK(r.decoder.parameters() == dec.parameters());
  }
  SUBCASE("runs with both the differentiable and the hard inner search and is deterministic") {
    tc.outer_steps = 10;
    tc.lr = 1e-2;
    for (double tau : {1.0, 0.0}) {
      CAPTURE(tau);
      auto solve = small_solve();
      solve.dcem.tau = tau;
      auto a = train_decoder(prob, dec, solve, tc);
      auto b = train_decoder(prob, dec, solve, tc);
      REQUIRE(a.curve.size() == 3);
      for (std::size_t i = 0; i < a.curve.size(); ++i) CHECK(a.curve[i].val_cost == b.curve[i].val_cost);
      CHECK(a.final_decoder.parameters() == b.final_decoder.parameters());
      CHECK(a.final_decoder.parameters() != dec.parameters());
      CHECK(a.best_val_cost <= a.curve.front().val_cost);
    }
  }
  SUBCASE("divergence") {
    tc.outer_steps = 3;
    tc.divergence_threshold = 1e-12;
    CHECK_THROWS_AS(train_decoder(prob, dec, small_solve(), tc), TrainingDiverged);
  }
  SUBCASE("horizon mismatch") { CHECK_THROWS(train_decoder(small_problem(6), dec, small_solve(), tc)); }
}

TEST_CASE("improvement factor") {
  std::vector<double> c{0.5, 1.0, 2.0};
  CHECK(improvement_factor(c, c) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(improvement_factor(std::vector<double>{1.0}, std::vector<double>{0.0}) == 1e8);
  CHECK_THROWS(improvement_factor(c, std::vector<double>{1.0}));
}

TEST_CASE("latent surface") {
  const auto prob = small_problem(5);
  nn::Mlp constant = make_decoder({.latent_dim = 2, .hidden = 4, .layers = 1, .seed = 0}, 5);
  for (auto& w : constant.parameters()[0].values()) w = 0.0;
  const State x0{0.1, 0, 0.3, 0};
  const auto flat = latent_surface(prob, constant, x0, 7);
  REQUIRE(flat.size() == 49);
  for (const auto& cell : flat) CHECK(cell.cost == flat.front().cost);
  CHECK(flat.front().z1 == 0.0);
  CHECK(flat.back().z2 == 1.0);

  auto dec = make_decoder({.latent_dim = 2, .hidden = 16, .layers = 2, .seed = 5}, 5);
  const auto surf = latent_surface(prob, dec, x0, 100);
  double grid_min = INFINITY;
  for (const auto& cell : surf) grid_min = std::min(grid_min, cell.cost);
  LatentSolveConfig solve;
  const double found = embedded_costs(prob, dec, {x0}, solve).front();
  CHECK(grid_min <= found + 1e-3);
}

TEST_CASE("trajectory csv") {
  const auto prob = small_problem(2);
  std::ostringstream out;
  write_trajectory_csv(out, prob, State{0, 0, 0, 0}, std::vector<double>{0.5, 0.5});
  CHECK(out.str() == "t,p,p_dot,theta,theta_dot,u\n0,0,0,0,0,0.5\n1,0,0,0,0,0.5\n2,0,0,0,0,nan\n");
}

TEST_CASE("integrator names") {
  CHECK(parse_integrator("rk4") == Integrator::rk4);
  CHECK(parse_integrator(to_string(Integrator::semi_implicit_euler)) == Integrator::semi_implicit_euler);
  CHECK_THROWS(parse_integrator("verlet"));
}
