#include "dcem/nn.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace dcem::nn {

ad::Var activate(const ad::Var& x, Activation act) {
  switch (act) {
    case Activation::identity: return x;
    case Activation::softplus: return ad::softplus(x);
    case Activation::elu: return ad::elu(x);
    case Activation::tanh: return ad::tanh(x);
    case Activation::sigmoid: return ad::sigmoid(x);
  }
  throw std::logic_error("unknown activation");
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "softplus") return Activation::softplus;
  if (name == "elu") return Activation::elu;
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

Mlp::Mlp(std::vector<std::size_t> sizes, Activation hidden, Activation output, std::uint64_t seed)
    : sizes_(std::move(sizes)), hidden_(hidden), output_(output) {
  if (sizes_.size() < 2) throw std::invalid_argument("Mlp needs at least input and output sizes");
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor w(sizes_[l], sizes_[l + 1]);
    Tensor b(1, sizes_[l + 1]);
    for (double& e : w.values()) e = u(rng);
    for (double& e : b.values()) e = u(rng);
    params_.push_back(std::move(w));
    params_.push_back(std::move(b));
  }
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

Mlp::Bound Mlp::bind(ad::Tape& tape, bool trainable) const {
  Bound b{this, {}};
  for (const auto& p : params_) b.params.push_back(trainable ? tape.variable(p) : tape.constant(p));
  return b;
}

ad::Var Mlp::Bound::operator()(const ad::Var& x) const {
  if (x.cols() != net->in_features())
    throw ShapeError("Mlp: expected " + std::to_string(net->in_features()) + " input features, got " +
                     x.value().shape_str());
  ad::Var h = x;
  const std::size_t layers = params.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    h = ad::matmul(h, params[2 * l]) + ad::broadcast_rows(params[2 * l + 1], h.rows());
    h = activate(h, l + 1 == layers ? net->output_activation() : net->hidden_activation());
  }
  return h;
}

Tensor Mlp::forward(const Tensor& x) const {
  ad::Tape tape;
  return bind(tape, false)(tape.constant(x)).value();
}

void Adam::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.size()) throw std::invalid_argument("Adam: gradient count mismatch");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.rows(), p.cols());
      v_.emplace_back(p.rows(), p.cols());
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i], grads[i], "Adam");
    for (std::size_t j = 0; j < params[i].size(); ++j) {
      const double g = grads[i][j];
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1 - cfg_.beta1) * g;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1 - cfg_.beta2) * g * g;
      params[i][j] -= cfg_.lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + cfg_.eps);
    }
  }
}

std::vector<Tensor> gradients(const Mlp::Bound& bound) {
  std::vector<Tensor> out;
  for (const auto& p : bound.params) out.push_back(p.grad());
  return out;
}

}  // namespace dcem::nn
