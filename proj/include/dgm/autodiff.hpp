#pragma once

// Tape-based reverse-mode automatic differentiation.
//
// A Tape owns an append-only list of nodes. Every operation on Var computes
// its value eagerly and appends a node holding the value, its parents (all
// with smaller ids) and a closure that maps the output cotangent to parent
// cotangents. backward() walks the nodes once in decreasing id order.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dgm/ops.hpp"
#include "dgm/param_store.hpp"
#include "dgm/tensor.hpp"

namespace dgm {

enum class OpKind : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  AddRow,
  Scale,
  AddScalar,
  Neg,
  MatMul,
  MatMulNT,
  Sum,
  Mean,
  RowSum,
  Exp,
  Log,
  Square,
  Sqrt,
  Abs,
  Maximum,
  Minimum,
  Clamp,
  Tanh,
  Sigmoid,
  LeakyRelu,
  ConcatCols,
  SliceCols,
  Transpose,
  Masked,
};

const char* op_name(OpKind kind);

class Tape;

/// Handle to a node of a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t numel() const { return value().numel(); }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Gradients produced by one backward pass.
class Gradients {
 public:
  /// Gradient with respect to a node; zeros if the node was not reached.
  Tensor wrt(const Var& v) const;
  /// Gradient of a named parameter leaf bound on the tape.
  const Tensor& operator[](std::string_view name) const;
  /// Every trainable leaf's gradient, keyed by name.
  const GradMap& named() const { return named_; }

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<Tensor> node_grads_;
  GradMap named_;
};

class Tape {
 public:
  /// Everything a node's backward closure sees. A null grad_in slot means
  /// that parent does not need a gradient.
  struct BackwardCtx {
    const Tensor& grad_out;
    const Tensor& out;
    std::array<const Tensor*, 2> in;
    std::array<Tensor*, 2> grad_in;
  };
  /// Accumulates parent cotangents from the output cotangent.
  using BackwardFn = std::function<void(const BackwardCtx&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Input leaf that gradients can be requested for (through Gradients::wrt).
  Var variable(Tensor value);
  /// Input leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Binds every entry of a store as a named leaf. Trainable entries appear
  /// in Gradients::named().
  Bound<Var> bind(const ParamStore& store);

  Var record(OpKind kind, Tensor value, std::initializer_list<Var> parents, BackwardFn backward);

  /// Reverse sweep from a single-element output node.
  Gradients backward(const Var& output) const;

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  OpKind kind(std::uint32_t id) const { return nodes_[id].kind; }
  const std::vector<std::uint32_t>& parents(std::uint32_t id) const { return nodes_[id].parents; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<std::uint32_t> parents;
    Tensor value;
    BackwardFn backward;
    bool requires_grad = false;
    bool trainable = false;
    std::string name;
  };

  Var push_leaf(Tensor value, bool requires_grad, bool trainable, std::string name);

  std::vector<Node> nodes_;
};

// Recording versions of the kernels in ops.hpp. Mixed Var/Tensor overloads
// lift the Tensor to a constant leaf on the Var's tape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add(const Var& a, const Tensor& b);
Var add(const Tensor& a, const Var& b);
Var sub(const Var& a, const Tensor& b);
Var sub(const Tensor& a, const Var& b);
Var mul(const Var& a, const Tensor& b);
Var mul(const Tensor& a, const Var& b);
Var div(const Var& a, const Tensor& b);
Var add_row(const Var& x, const Var& b);
Var add_row(const Var& x, const Tensor& b);
Var add_row(const Tensor& x, const Var& b);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);
Var neg(const Var& x);
Var matmul(const Var& a, const Var& b);
Var matmul(const Var& a, const Tensor& b);
Var matmul(const Tensor& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Tensor& b);
Var matmul_nt(const Tensor& a, const Var& b);
Var sum(const Var& x);
Var mean(const Var& x);
Var row_sum(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var square(const Var& x);
Var sqrt(const Var& x);
Var abs(const Var& x);
Var maximum(const Var& x, double c);
Var minimum(const Var& x, double c);
Var clamp(const Var& x, double lo, double hi);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var relu(const Var& x);
Var concat_cols(const Var& a, const Var& b);
Var concat_cols(const Var& a, const Tensor& b);
Var concat_cols(const Tensor& a, const Var& b);
Var slice_cols(const Var& x, std::size_t begin, std::size_t end);
Var transpose(const Var& x);
Var masked(const Var& x, const Tensor& mask);
Var repeat_rows(const Var& v, std::size_t rows);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator+(const Var& a, const Tensor& b);
Var operator+(const Tensor& a, const Var& b);
Var operator-(const Var& a, const Tensor& b);
Var operator-(const Tensor& a, const Var& b);
Var operator*(const Var& a, const Tensor& b);
Var operator*(const Tensor& a, const Var& b);
Var operator-(const Var& x);
Var operator*(double c, const Var& x);
Var operator*(const Var& x, double c);
Var operator+(const Var& x, double c);
Var operator+(double c, const Var& x);
Var operator-(const Var& x, double c);
Var operator-(double c, const Var& x);

/// Value of either a Tensor or a Var, for code templated on the value type.
inline const Tensor& value_of(const Tensor& t) { return t; }
inline const Tensor& value_of(const Var& v) { return v.value(); }

/// Wraps a Tensor as a constant in the value domain of `like`.
inline Tensor lift(const Tensor& /*like*/, Tensor t) { return t; }
inline Var lift(const Var& like, Tensor t) { return like.tape().constant(std::move(t)); }

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Scalar loss recorded on a tape from bound parameters.
using ScalarLoss = std::function<Var(Tape&, const Bound<Var>&)>;

/// Compares the tape gradient of `loss` against central differences with
/// step h over every scalar of every trainable entry. The relative error of
/// one scalar is |analytic - numeric| / max(1, |numeric|).
GradCheckResult grad_check(const ScalarLoss& loss, const ParamStore& params, double h = 1e-5);

}  // namespace dgm
