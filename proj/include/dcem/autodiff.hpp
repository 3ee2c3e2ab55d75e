#pragma once

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation applied to its Vars. Backward rules are
// written with the same Var operations, so a backward pass can either run
// eagerly (Tape::backward, values only) or record itself onto the tape
// (Tape::grad with create_graph = true), which gives exact second-order
// terms for the unrolled inner gradient steps.
//
// Shapes are explicit: no broadcasting except between a 1 x 1 scalar Var and
// a tensor. All other expansions go through broadcast_rows / broadcast_cols /
// repeat_rows so each VJP stays auditable.

#include <any>
#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dcem/tensor.hpp"

namespace dcem::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid for the Tape's lifetime.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const;
  std::size_t id() const { return id_; }

  const Tensor& value() const;
  /// Gradient from the most recent Tape::backward; zeros when the node was
  /// not reached (or never differentiated).
  Tensor grad() const;
  bool requires_grad() const;

  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Backward rule of a recorded node. Receives the adjoint of the node's
/// output and the node itself; returns one adjoint per parent. Entries whose
/// `needs` flag is false may be left as default-constructed Vars.
using BackwardFn = std::function<std::vector<Var>(const Var& grad_out, const Var& self, std::span<const bool> needs)>;

/// User-defined operation with a hand-written vector-Jacobian product.
/// `forward` may stash anything it needs for the backward pass in `context`.
struct CustomPrimitive {
  std::string name;
  std::function<Tensor(std::span<const Tensor* const> inputs, std::any& context)> forward;
  std::function<std::vector<Tensor>(const std::any& context, std::span<const Tensor* const> inputs, const Tensor& output,
                                    const Tensor& grad_out)>
      backward;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives a gradient.
  Var variable(Tensor value);
  /// Leaf that never receives a gradient.
  Var constant(Tensor value);

  /// Appends a node computed from `inputs`. The backward rule is dropped when
  /// no input requires a gradient or recording is paused.
  Var record(std::string_view op, std::vector<Var> inputs, Tensor value, BackwardFn backward);

  /// Applies a custom primitive; its backward dispatches to prim.backward and
  /// checks the returned gradient shapes.
  Var apply(const CustomPrimitive& prim, std::vector<Var> inputs);

  /// Reverse sweep from a scalar root. Afterwards every leaf's grad() holds
  /// d root / d leaf. Temporary nodes created during the sweep are discarded.
  void backward(const Var& root);

  /// Gradients of a scalar root with respect to `wrt`. With create_graph the
  /// sweep is recorded, so the returned Vars can be differentiated again.
  std::vector<Var> grad(const Var& root, std::span<const Var> wrt, bool create_graph);

  std::size_t size() const { return nodes_.size(); }
  std::string_view op_name(std::size_t id) const { return nodes_.at(id).op; }

 private:
  friend class Var;

  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    std::string_view op;
    bool requires_grad = false;
  };

  std::vector<Var> sweep(const Var& root, std::span<const Var> wrt, bool create_graph, bool all_leaves);
  Var push(Node node);

  // deque: references to node values stay valid while the tape grows
  std::deque<Node> nodes_;
  bool recording_ = true;
};

// ---- arithmetic -----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator+(const Var& a, double s);
Var operator+(double s, const Var& a);
Var operator-(const Var& a, double s);
Var operator-(double s, const Var& a);
Var operator*(const Var& a, double s);
Var operator*(double s, const Var& a);
Var operator/(const Var& a, double s);
Var operator/(double s, const Var& a);

// ---- linear algebra -------------------------------------------------------
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

// ---- reductions -----------------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
Var row_sum(const Var& a);  // R x C -> R x 1
Var col_sum(const Var& a);  // R x C -> 1 x C

// ---- elementwise ----------------------------------------------------------
Var square(const Var& a);
Var sqrt(const Var& a);  // gradient taken as 0 where the value is 0
Var exp(const Var& a);
Var log(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var elu(const Var& a);
Var sin(const Var& a);
Var cos(const Var& a);
/// Clamps to [lo, hi]; zero gradient wherever the bound is active.
Var clamp(const Var& a, double lo, double hi);

// ---- structure ------------------------------------------------------------
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var select_rows(const Var& a, std::span<const std::size_t> index);
Var select_cols(const Var& a, std::span<const std::size_t> index);
/// Adjoint of select_rows: out has `rows` rows, out[index[i]] += a[i].
Var scatter_rows(const Var& a, std::span<const std::size_t> index, std::size_t rows);
Var scatter_cols(const Var& a, std::span<const std::size_t> index, std::size_t cols);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var reshape(const Var& a, std::size_t rows, std::size_t cols);
Var broadcast_rows(const Var& a, std::size_t rows);  // 1 x C -> rows x C
Var broadcast_cols(const Var& a, std::size_t cols);  // R x 1 -> R x cols
Var expand(const Var& a, std::size_t rows, std::size_t cols);  // 1 x 1 -> rows x cols
/// Each row repeated `times` times consecutively: R x C -> (R * times) x C.
Var repeat_rows(const Var& a, std::size_t times);
/// Sums consecutive blocks of rows: (G * m) x C -> G x C.
Var segment_sum(const Var& a, std::size_t groups);
/// Constant copy of a's value on the same tape.
Var detach(const Var& a);

}  // namespace dcem::ad
