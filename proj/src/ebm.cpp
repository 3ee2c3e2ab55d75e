#include "dcem/ebm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "dcem/csv.hpp"
#include "dcem/optimizers.hpp"

namespace dcem::ebm {

namespace {

// Points per inference chunk when no outer gradient is needed. Bounds tape
// memory; each chunk draws its DCEM noise from seed + chunk index.
constexpr std::size_t kEvalChunk = 25;

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

Tensor rows_of(const Tensor& t, std::size_t begin, std::size_t end) {
  return Tensor(end - begin, t.cols(),
                std::vector<double>(t.data() + begin * t.cols(), t.data() + end * t.cols()));
}

}  // namespace

double target(double x) { return x * std::sin(x); }

RegressionTask RegressionTask::generate(std::size_t n_train, std::size_t n_val, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
  RegressionTask task;
  task.seed = seed;
  task.x_train = Tensor(n_train, 1);
  task.y_train = Tensor(n_train, 1);
  task.x_val = Tensor(n_val, 1);
  task.y_val = Tensor(n_val, 1);
  for (std::size_t i = 0; i < n_train; ++i) {
    task.x_train[i] = u(rng);
    task.y_train[i] = target(task.x_train[i]);
  }
  for (std::size_t i = 0; i < n_val; ++i) {
    task.x_val[i] = u(rng);
    task.y_val[i] = target(task.x_val[i]);
  }
  return task;
}

std::string to_string(InferenceMethod m) { return m == InferenceMethod::dcem ? "dcem" : "unrolled_gd"; }

InferenceMethod parse_method(const std::string& name) {
  if (name == "dcem") return InferenceMethod::dcem;
  if (name == "unrolled_gd" || name == "gd") return InferenceMethod::unrolled_gd;
  throw std::invalid_argument("unknown inference method '" + name + "' (expected dcem or unrolled_gd)");
}

InferenceConfig InferenceConfig::defaults(InferenceMethod m) {
  InferenceConfig c;
  c.method = m;
  return c;
}

void InferenceConfig::validate() const {
  if (steps < 1 && method == InferenceMethod::dcem) throw optim::ConfigError("dcem inference needs at least 1 iteration");
  if (!(lr >= 0.0)) throw optim::ConfigError("inner lr must be non-negative");
  if (!(sigma0 > 0.0)) throw optim::ConfigError("sigma0 must be positive");
  if (method == InferenceMethod::dcem) {
    optim::DcemConfig d{num_samples, num_elites, steps, tau, normalize, optim::ReturnMode::mean, seed};
    d.validate();
    if (!(tau > 0.0)) throw optim::ConfigError("dcem inference needs tau > 0");
  }
}

EnergyNetwork::EnergyNetwork(const EnergyNetworkConfig& cfg) : cfg_(cfg) {
  std::vector<std::size_t> sizes{2};
  for (std::size_t l = 0; l < cfg.layers; ++l) sizes.push_back(cfg.hidden);
  sizes.push_back(1);
  mlp_ = nn::Mlp(sizes, nn::Activation::softplus, nn::Activation::identity, cfg.seed);
}

EnergyFn EnergyNetwork::energy(const nn::Mlp::Bound& bound) {
  return [bound](const ad::Var& x, const ad::Var& y) {
    const ad::Var parts[2] = {x, y};
    return bound(ad::concat_cols(parts));
  };
}

EnergyFn EnergyNetwork::energy(ad::Tape& tape) const { return energy(mlp_.bind(tape, false)); }

ad::Var predict(const EnergyFn& energy, const ad::Var& x, const InferenceConfig& cfg, bool create_graph) {
  cfg.validate();
  if (x.cols() != 1) throw ShapeError("predict: x must be a column, got " + x.value().shape_str());
  ad::Tape& tape = x.tape();
  const std::size_t batch = x.rows();
  if (cfg.method == InferenceMethod::unrolled_gd) {
    auto f = [&](const ad::Var& y) { return energy(x, y); };
    return optim::unrolled_gd(f, tape.constant(Tensor(batch, 1, cfg.y0)), cfg.steps, cfg.lr, create_graph);
  }
  optim::DcemConfig d{cfg.num_samples, cfg.num_elites, cfg.steps, cfg.tau, cfg.normalize, optim::ReturnMode::mean,
                      cfg.seed};
  ad::Var xs = ad::repeat_rows(x, cfg.num_samples);
  auto f = [&](const ad::Var& y) { return energy(xs, y); };
  optim::GaussianVars init{tape.constant(Tensor(batch, 1, cfg.y0)),
                           tape.constant(Tensor(batch, 1, cfg.sigma0 * cfg.sigma0))};
  return optim::dcem(f, init, std::nullopt, d).point;
}

Tensor predict_values(const EnergyNetwork& net, const Tensor& x, const InferenceConfig& cfg) {
  Tensor out(x.rows(), 1);
  for (std::size_t begin = 0, chunk = 0; begin < x.rows(); begin += kEvalChunk, ++chunk) {
    const std::size_t end = std::min(x.rows(), begin + kEvalChunk);
    InferenceConfig c = cfg;
    c.seed = mix_seed(cfg.seed, chunk);
    ad::Tape tape;
    const Tensor y = predict(net.energy(tape), tape.constant(rows_of(x, begin, end)), c, false).value();
    std::copy(y.values().begin(), y.values().end(), out.data() + begin);
  }
  return out;
}

double mse(const Tensor& prediction, const Tensor& target) {
  require_same_shape(prediction, target, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) s += (prediction[i] - target[i]) * (prediction[i] - target[i]);
  return s / static_cast<double>(prediction.size());
}

TrainResult train(const RegressionTask& task, const InferenceConfig& inference, const TrainConfig& cfg,
                  EnergyNetwork init, const StepCallback& on_step) {
  inference.validate();
  if (cfg.batch_size == 0) throw optim::ConfigError("batch_size must be positive");
  if (cfg.eval_every == 0) throw optim::ConfigError("eval_every must be positive");
  const std::size_t n = task.x_train.rows();
  if (n == 0) throw optim::ConfigError("empty training set");

  TrainResult result{std::move(init), {}, 0.0};
  nn::Mlp& mlp = result.model.mlp();
  nn::Adam adam({.lr = cfg.lr});
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  auto validate = [&] { return mse(predict_values(result.model, task.x_val, inference), task.y_val); };
  result.curve.push_back({0, std::nan(""), validate()});

  double window = 0.0;
  std::size_t window_n = 0;
  for (std::size_t step = 1; step <= cfg.outer_steps; ++step) {
    Tensor xb(cfg.batch_size, 1), yb(cfg.batch_size, 1);
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      const std::size_t j = pick(rng);
      xb[i] = task.x_train[j];
      yb[i] = task.y_train[j];
    }
    InferenceConfig inner = inference;
    inner.seed = mix_seed(inference.seed + 1, step);

    ad::Tape tape;
    auto bound = mlp.bind(tape, true);
    ad::Var y_hat = predict(EnergyNetwork::energy(bound), tape.constant(xb), inner, true);
    ad::Var loss = ad::mean(ad::square(y_hat - tape.constant(yb)));
    const double l = loss.item();
    if (!std::isfinite(l) || l > cfg.divergence_threshold) {
      std::ostringstream msg;
      msg << "training diverged at outer step " << step << ": minibatch loss " << l;
      if (result.curve.size() > 1) msg << " (last validation MSE " << result.curve.back().val_mse << ")";
      throw TrainingDiverged(msg.str(), step, l);
    }
    tape.backward(loss);
    adam.step(mlp.parameters(), nn::gradients(bound));
    window += l;
    ++window_n;
    if (on_step) on_step(step, l);

    if (step % cfg.eval_every == 0 || step == cfg.outer_steps) {
      result.curve.push_back({step, window / static_cast<double>(window_n), validate()});
      window = 0.0;
      window_n = 0;
    }
  }
  result.final_val_mse = result.curve.back().val_mse;
  return result;
}

double local_minimum_pass_rate(const EnergyFn& energy, const Tensor& x, const Tensor& y, double delta) {
  require_same_shape(x, y, "local_minimum_pass_rate");
  if (x.rows() == 0) return 0.0;
  const std::size_t n = x.rows();
  Tensor xs(3 * n, 1), ys(3 * n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t s = 0; s < 3; ++s) xs[3 * i + s] = x[i];
    ys[3 * i] = y[i] - delta;
    ys[3 * i + 1] = y[i];
    ys[3 * i + 2] = y[i] + delta;
  }
  ad::Tape tape;
  const Tensor e = energy(tape.constant(xs), tape.constant(ys)).value();
  std::size_t pass = 0;
  for (std::size_t i = 0; i < n; ++i) pass += e[3 * i] >= e[3 * i + 1] && e[3 * i + 2] >= e[3 * i + 1];
  return static_cast<double>(pass) / static_cast<double>(n);
}

double local_minimum_pass_rate(const EnergyNetwork& net, const Tensor& x, const InferenceConfig& cfg, double delta) {
  if (x.rows() == 0) return 0.0;
  const auto bound_energy = [&net](const ad::Var& xv, const ad::Var& yv) { return net.energy(xv.tape())(xv, yv); };
  return local_minimum_pass_rate(bound_energy, x, predict_values(net, x, cfg), delta);
}

std::vector<SurfacePoint> energy_surface(const EnergyFn& energy, const std::vector<double>& xs,
                                         const std::vector<double>& ys) {
  auto increasing = [](const std::vector<double>& g) {
    return std::adjacent_find(g.begin(), g.end(), std::greater_equal<>()) == g.end();
  };
  if (xs.empty() || ys.empty() || !increasing(xs) || !increasing(ys))
    throw std::invalid_argument("energy_surface: grids must be non-empty and strictly increasing");
  Tensor gx(xs.size() * ys.size(), 1), gy(xs.size() * ys.size(), 1);
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < ys.size(); ++j) {
      gx[i * ys.size() + j] = xs[i];
      gy[i * ys.size() + j] = ys[j];
    }
  ad::Tape tape;
  const Tensor e = energy(tape.constant(gx), tape.constant(gy)).value();
  std::vector<SurfacePoint> out;
  out.reserve(e.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double lo = e[i * ys.size()];
    for (std::size_t j = 1; j < ys.size(); ++j) lo = std::min(lo, e[i * ys.size() + j]);
    for (std::size_t j = 0; j < ys.size(); ++j) {
      const double ev = e[i * ys.size() + j];
      out.push_back({xs[i], ys[j], ev, std::log1p(ev - lo)});
    }
  }
  return out;
}

std::vector<SurfacePoint> energy_surface(const EnergyNetwork& net, const std::vector<double>& xs,
                                         const std::vector<double>& ys) {
  const auto bound_energy = [&net](const ad::Var& x, const ad::Var& y) { return net.energy(x.tape())(x, y); };
  return energy_surface(bound_energy, xs, ys);
}

void write_surface_csv(std::ostream& out, const std::vector<SurfacePoint>& surface) {
  csv::Writer w(out, {"x", "y", "energy", "energy_normalized"});
  for (const auto& p : surface) w.row({p.x, p.y, p.energy, p.normalized});
}

std::vector<AblationRow> ablate_inner_iterations(const EnergyNetwork& net, const Tensor& x, const Tensor& y,
                                                 const InferenceConfig& cfg, const std::vector<std::size_t>& counts) {
  std::vector<AblationRow> rows;
  for (std::size_t c : counts) {
    InferenceConfig ic = cfg;
    ic.steps = c;
    rows.push_back({c, mse(predict_values(net, x, ic), y)});
  }
  return rows;
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / (n - 1);
  return out;
}

}  // namespace dcem::ebm
