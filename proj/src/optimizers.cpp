#include "dcem/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "dcem/lml.hpp"

namespace dcem::optim {

namespace {

void check_finite(const Tensor& values, const char* where) {
  std::vector<std::size_t> bad;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!std::isfinite(values[i])) bad.push_back(i);
  if (bad.empty()) return;
  std::ostringstream msg;
  msg << where << ": objective returned non-finite values at sample rows";
  for (std::size_t i = 0; i < std::min<std::size_t>(bad.size(), 16); ++i) msg << ' ' << bad[i];
  if (bad.size() > 16) msg << " ... (" << bad.size() << " total)";
  throw NonFiniteError(msg.str(), std::move(bad));
}

void check_values_shape(const Tensor& values, std::size_t rows, const char* where) {
  if (values.rows() != rows || values.cols() != 1)
    throw ShapeError(std::string(where) + ": objective must return " + shape_str(rows, 1) + ", got " +
                     values.shape_str());
}

}  // namespace

struct NoiseStream::Impl {
  std::mt19937_64 rng;
  std::normal_distribution<double> normal;
};

NoiseStream::NoiseStream(std::uint64_t seed) : impl_(std::make_shared<Impl>(Impl{std::mt19937_64(seed), {}})) {}

Tensor NoiseStream::next(std::size_t rows, std::size_t cols) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = impl_->normal(impl_->rng);
  return t;
}

GaussianDistribution GaussianDistribution::isotropic(std::size_t batch, std::size_t dim, double mean, double stddev,
                                                     std::optional<Box> box) {
  return {Tensor(batch, dim, mean), Tensor(batch, dim, stddev * stddev), box};
}

void DcemConfig::validate() const {
  if (num_samples < 2) throw ConfigError("num_samples (N) must be at least 2");
  if (num_elites == 0 || num_elites > num_samples) throw ConfigError("num_elites (k) must satisfy 0 < k <= N");
  if (iterations < 1) throw ConfigError("iterations (T) must be at least 1");
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be finite and non-negative");
}

ValueFn values_of(DifferentiableFn f) {
  return [f = std::move(f)](const Tensor& points) {
    ad::Tape scratch;
    return f(scratch.constant(points)).value();
  };
}

std::vector<double> hard_topk_indicator(std::span<const double> values, std::size_t k) {
  if (k > values.size()) throw ConfigError("hard_topk_indicator: k exceeds the number of values");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> out(values.size(), 0.0);
  for (std::size_t i = 0; i < k; ++i) out[order[i]] = 1.0;
  return out;
}

GaussianDistribution gaussian_fit_hard(const Tensor& samples, std::span<const double> values, std::size_t k) {
  if (samples.rows() != values.size())
    throw ShapeError("gaussian_fit_hard: " + std::to_string(values.size()) + " values for samples " + samples.shape_str());
  const auto elite = hard_topk_indicator(values, k);
  const std::size_t n = samples.cols();
  GaussianDistribution g{Tensor(1, n), Tensor(1, n), std::nullopt};
  for (std::size_t i = 0; i < samples.rows(); ++i)
    if (elite[i] != 0.0)
      for (std::size_t j = 0; j < n; ++j) g.mu[j] += samples(i, j);
  for (std::size_t j = 0; j < n; ++j) g.mu[j] /= static_cast<double>(k);
  for (std::size_t i = 0; i < samples.rows(); ++i)
    if (elite[i] != 0.0)
      for (std::size_t j = 0; j < n; ++j) {
        const double d = samples(i, j) - g.mu[j];
        g.sigma2[j] += d * d;
      }
  for (std::size_t j = 0; j < n; ++j) g.sigma2[j] = std::max(g.sigma2[j] / static_cast<double>(k), kVarianceFloor);
  return g;
}

GaussianVars gaussian_fit_soft(const ad::Var& samples, const ad::Var& weights, std::size_t k) {
  const std::size_t batch = weights.rows();
  const std::size_t n_samples = weights.cols();
  const std::size_t dim = samples.cols();
  if (samples.rows() != batch * n_samples)
    throw ShapeError("gaussian_fit_soft: samples " + samples.value().shape_str() + " do not match weights " +
                     weights.value().shape_str());
  const Tensor& w = weights.value();
  for (std::size_t b = 0; b < batch; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n_samples; ++i) {
      const double wi = w(b, i);
      if (wi < -1e-12 || wi > 1.0 + 1e-12)
        throw std::runtime_error("gaussian_fit_soft: weight " + std::to_string(wi) + " outside [0, 1]");
      s += wi;
    }
    if (std::abs(s - static_cast<double>(k)) > 1e-3)
      throw std::runtime_error("gaussian_fit_soft: weights of problem " + std::to_string(b) + " sum to " +
                               std::to_string(s) + ", expected k=" + std::to_string(k));
  }
  const double inv_k = 1.0 / static_cast<double>(k);
  ad::Var w_rows = ad::broadcast_cols(ad::reshape(weights, batch * n_samples, 1), dim);
  ad::Var mu = ad::segment_sum(w_rows * samples, batch) * inv_k;
  ad::Var centered = samples - ad::repeat_rows(mu, n_samples);
  ad::Var var = ad::segment_sum(w_rows * ad::square(centered), batch) * inv_k;
  return {mu, ad::clamp(var, kVarianceFloor, std::numeric_limits<double>::infinity())};
}

CemResult cem(const ValueFn& objective, const GaussianDistribution& init, const DcemConfig& cfg) {
  cfg.validate();
  if (cfg.tau != 0.0) throw ConfigError("cem runs the hard top-k path and requires tau = 0");
  if (!init.mu.same_shape(init.sigma2)) throw ShapeError("cem: mu and sigma2 shapes differ");
  const std::size_t batch = init.batch(), dim = init.dim(), N = cfg.num_samples, k = cfg.num_elites;

  NoiseStream noise(cfg.seed);
  GaussianDistribution dist = init;
  CemResult result;
  result.best_values = Tensor(batch, 1, std::numeric_limits<double>::infinity());
  Tensor best_points(batch, dim);

  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    const Tensor eps = noise.next(batch * N, dim);
    Tensor samples(batch * N, dim);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < dim; ++j) {
          double x = dist.mu(b, j) + std::sqrt(dist.sigma2(b, j)) * eps(b * N + i, j);
          if (dist.box) x = std::clamp(x, dist.box->lower, dist.box->upper);
          samples(b * N + i, j) = x;
        }
    const Tensor values = objective(samples);
    check_values_shape(values, batch * N, "cem");
    check_finite(values, "cem");

    IterationRecord rec{dist.mu, dist.sigma2, samples, values.reshaped(batch, N), Tensor(batch, N)};
    for (std::size_t b = 0; b < batch; ++b) {
      const Tensor block(N, dim, std::vector<double>(samples.data() + b * N * dim, samples.data() + (b + 1) * N * dim));
      const std::span<const double> v(values.data() + b * N, N);
      const auto elite = hard_topk_indicator(v, k);
      std::copy(elite.begin(), elite.end(), rec.weights.row_span(b).begin());
      const GaussianDistribution fit = gaussian_fit_hard(block, v, k);
      std::copy(fit.mu.values().begin(), fit.mu.values().end(), dist.mu.row_span(b).begin());
      std::copy(fit.sigma2.values().begin(), fit.sigma2.values().end(), dist.sigma2.row_span(b).begin());
      for (std::size_t i = 0; i < N; ++i)
        if (v[i] < result.best_values[b]) {
          result.best_values[b] = v[i];
          std::copy_n(samples.data() + (b * N + i) * dim, dim, best_points.row_span(b).begin());
        }
    }
    result.trace.iterations.push_back(std::move(rec));
  }
  result.final_distribution = dist;
  result.point = cfg.return_mode == ReturnMode::mean ? dist.mu : best_points;
  return result;
}

DcemResult dcem(const DifferentiableFn& objective, const GaussianVars& init, std::optional<Box> box,
                const DcemConfig& cfg) {
  cfg.validate();
  if (!(cfg.tau > 0.0)) throw ConfigError("dcem requires tau > 0; use cem for the hard path");
  if (!init.mu.value().same_shape(init.sigma2.value())) throw ShapeError("dcem: mu and sigma2 shapes differ");
  ad::Tape& tape = init.mu.tape();
  const std::size_t batch = init.mu.rows(), dim = init.mu.cols(), N = cfg.num_samples, k = cfg.num_elites;

  NoiseStream noise(cfg.seed);
  GaussianVars dist = init;
  DcemResult result;
  std::vector<double> best_value(batch, std::numeric_limits<double>::infinity());
  std::vector<ad::Var> best_point(batch);

  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    ad::Var eps = tape.constant(noise.next(batch * N, dim));
    ad::Var stddev = ad::sqrt(dist.sigma2);
    ad::Var samples = ad::repeat_rows(dist.mu, N) + ad::repeat_rows(stddev, N) * eps;
    if (box) samples = ad::clamp(samples, box->lower, box->upper);

    ad::Var values = objective(samples);
    check_values_shape(values.value(), batch * N, "dcem");
    check_finite(values.value(), "dcem");
    ad::Var v = ad::reshape(values, batch, N);

    ad::Var weights;
    if (k == N) {
      // L_{N,N} is the single point 1: every sample is an elite
      weights = tape.constant(Tensor(batch, N, 1.0));
    } else {
      ad::Var scores = v;
      if (cfg.normalize) {
        ad::Var centered = v - ad::broadcast_cols(ad::row_sum(v) * (1.0 / N), N);
        ad::Var sd = ad::sqrt(ad::row_sum(ad::square(centered)) * (1.0 / N));
        scores = centered / ad::broadcast_cols(sd + kNormalizeEps, N);
      }
      // low cost -> large score -> weight near 1
      weights = lml::project(ad::neg(scores), k, cfg.tau);
    }

    result.trace.iterations.push_back(
        {dist.mu.value(), dist.sigma2.value(), samples.value(), v.value(), weights.value()});

    if (cfg.return_mode == ReturnMode::best_sample) {
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < N; ++i)
          if (v.value()(b, i) < best_value[b]) {
            best_value[b] = v.value()(b, i);
            const std::size_t row[1] = {b * N + i};
            best_point[b] = ad::select_rows(samples, row);
          }
    }
    dist = gaussian_fit_soft(samples, weights, k);
  }

  result.final_distribution = dist;
  if (cfg.return_mode == ReturnMode::mean) {
    result.point = dist.mu;
  } else {
    result.point = ad::concat_rows(best_point);
  }
  return result;
}

DcemResult dcem(ad::Tape& tape, const DifferentiableFn& objective, const GaussianDistribution& init,
                const DcemConfig& cfg) {
  GaussianVars vars{tape.constant(init.mu), tape.constant(init.sigma2)};
  return dcem(objective, vars, init.box, cfg);
}

ad::Var unrolled_gd(const DifferentiableFn& objective, const ad::Var& y0, std::size_t steps, double lr,
                    bool create_graph) {
  ad::Tape& tape = y0.tape();
  ad::Var y = y0;
  for (std::size_t t = 0; t < steps; ++t) {
    // a leaf that does not require a gradient cannot be differentiated against
    ad::Var at = y.requires_grad() ? y : tape.variable(y.value());
    ad::Var energy = ad::sum(objective(at));
    const ad::Var wrt[1] = {at};
    ad::Var g = tape.grad(energy, wrt, create_graph)[0];
    y = at - g * lr;
    for (double v : y.value().values())
      if (!std::isfinite(v))
        throw std::runtime_error("unrolled_gd: non-finite iterate after step " + std::to_string(t + 1));
  }
  if (!create_graph && steps > 0) return ad::detach(y);
  return y;
}

}  // namespace dcem::optim
