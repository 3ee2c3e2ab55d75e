#pragma once

// Small fully-connected networks on the autodiff tape, plus Adam.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dcem/autodiff.hpp"
#include "dcem/tensor.hpp"

namespace dcem::nn {

enum class Activation { identity, softplus, elu, tanh, sigmoid };

ad::Var activate(const ad::Var& x, Activation act);
Activation parse_activation(const std::string& name);

/// Weights are stored as in x out so a layer is x W + b on row batches.
class Mlp {
 public:
  Mlp() = default;
  /// sizes = {in, hidden..., out}. Weights and biases are drawn from
  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Mlp(std::vector<std::size_t> sizes, Activation hidden, Activation output, std::uint64_t seed);

  std::size_t in_features() const { return sizes_.front(); }
  std::size_t out_features() const { return sizes_.back(); }
  const std::vector<std::size_t>& sizes() const { return sizes_; }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }

  /// w0, b0, w1, b1, ...
  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  /// Parameters placed on a tape, trainable or constant.
  struct Bound {
    const Mlp* net = nullptr;
    std::vector<ad::Var> params;
    ad::Var operator()(const ad::Var& x) const;
  };
  Bound bind(ad::Tape& tape, bool trainable) const;

  /// Plain evaluation on a scratch tape.
  Tensor forward(const Tensor& x) const;

 private:
  std::vector<std::size_t> sizes_;
  Activation hidden_ = Activation::softplus;
  Activation output_ = Activation::identity;
  std::vector<Tensor> params_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads);
  std::size_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

/// Gradients of the bound parameters after Tape::backward.
std::vector<Tensor> gradients(const Mlp::Bound& bound);

}  // namespace dcem::nn
