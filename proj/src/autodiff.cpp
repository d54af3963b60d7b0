#include "dgm/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "dgm/error.hpp"

namespace dgm {
namespace {

void accumulate(Tensor* g, const Tensor& d) {
  if (g == nullptr) return;
  double* pg = g->data();
  const double* pd = d.data();
  for (std::size_t i = 0; i < g->numel(); ++i) pg[i] += pd[i];
}

template <class F>
void accumulate_each(Tensor* g, std::size_t n, F f) {
  if (g == nullptr) return;
  double* pg = g->data();
  for (std::size_t i = 0; i < n; ++i) pg[i] += f(i);
}

using Ctx = Tape::BackwardCtx;

Tape& common_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw Error("operands recorded on different tapes");
  return a.tape();
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::AddRow: return "add_row";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Neg: return "neg";
    case OpKind::MatMul: return "matmul";
    case OpKind::MatMulNT: return "matmul_nt";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::RowSum: return "row_sum";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Square: return "square";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Abs: return "abs";
    case OpKind::Maximum: return "maximum";
    case OpKind::Minimum: return "minimum";
    case OpKind::Clamp: return "clamp";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::Transpose: return "transpose";
    case OpKind::Masked: return "masked";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape_->value(id_); }

Tensor Gradients::wrt(const Var& v) const {
  if (&v.tape() != tape_) throw Error("Gradients::wrt: variable from another tape");
  const Tensor& g = node_grads_[v.id()];
  if (g.shape() == v.shape()) return g;
  return Tensor(v.shape());
}

const Tensor& Gradients::operator[](std::string_view name) const {
  auto it = named_.find(name);
  if (it == named_.end()) throw Error("no gradient for parameter '" + std::string(name) + "'");
  return it->second;
}

Var Tape::push_leaf(Tensor value, bool requires_grad, bool trainable, std::string name) {
  Node n;
  n.kind = OpKind::Leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.trainable = trainable;
  n.name = std::move(name);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::variable(Tensor value) { return push_leaf(std::move(value), true, false, {}); }

Var Tape::constant(Tensor value) { return push_leaf(std::move(value), false, false, {}); }

Bound<Var> Tape::bind(const ParamStore& store) {
  std::vector<Var> vars;
  vars.reserve(store.size());
  for (const auto& e : store) {
    vars.push_back(push_leaf(e.value, e.trainable, e.trainable, e.name));
  }
  return Bound<Var>(store, std::move(vars));
}

Var Tape::record(OpKind kind, Tensor value, std::initializer_list<Var> parents,
                 BackwardFn backward) {
  Node n;
  n.kind = kind;
  n.value = std::move(value);
  n.backward = std::move(backward);
  for (const Var& p : parents) {
    if (&p.tape() != this) throw Error(std::string(op_name(kind)) + ": operand from another tape");
    n.parents.push_back(p.id());
    n.requires_grad = n.requires_grad || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Gradients Tape::backward(const Var& output) const {
  if (&output.tape() != this) throw Error("backward: output from another tape");
  if (output.numel() != 1) {
    throw ShapeError("backward: output must be a scalar, got shape " +
                     shape_str(output.shape()));
  }
  Gradients result;
  result.tape_ = this;
  result.node_grads_.resize(nodes_.size());
  auto& grads = result.node_grads_;
  grads[output.id()] = Tensor(output.shape(), 1.0);

  for (std::size_t i = output.id() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (node.kind == OpKind::Leaf || grads[i].empty() || !node.requires_grad) continue;
    std::array<const Tensor*, 2> in{nullptr, nullptr};
    std::array<Tensor*, 2> grad_in{nullptr, nullptr};
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      const std::uint32_t p = node.parents[k];
      in[k] = &nodes_[p].value;
      if (nodes_[p].requires_grad) {
        if (grads[p].empty()) grads[p] = Tensor(nodes_[p].value.shape());
        grad_in[k] = &grads[p];
      }
    }
    node.backward(Ctx{grads[i], node.value, in, grad_in});
  }

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    if (node.kind != OpKind::Leaf || !node.trainable) continue;
    Tensor g = grads[i].empty() ? Tensor(node.value.shape()) : grads[i];
    result.named_.insert_or_assign(node.name, std::move(g));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Elementwise binary operations

Var add(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  return t.record(OpKind::Add, add(a.value(), b.value()), {a, b}, [](const Ctx& c) {
    accumulate(c.grad_in[0], c.grad_out);
    accumulate(c.grad_in[1], c.grad_out);
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  return t.record(OpKind::Sub, sub(a.value(), b.value()), {a, b}, [](const Ctx& c) {
    accumulate(c.grad_in[0], c.grad_out);
    accumulate_each(c.grad_in[1], c.grad_out.numel(), [&](std::size_t i) { return -c.grad_out[i]; });
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  return t.record(OpKind::Mul, mul(a.value(), b.value()), {a, b}, [](const Ctx& c) {
    const Tensor& g = c.grad_out;
    accumulate_each(c.grad_in[0], g.numel(), [&](std::size_t i) { return g[i] * (*c.in[1])[i]; });
    accumulate_each(c.grad_in[1], g.numel(), [&](std::size_t i) { return g[i] * (*c.in[0])[i]; });
  });
}

Var div(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  return t.record(OpKind::Div, div(a.value(), b.value()), {a, b}, [](const Ctx& c) {
    const Tensor& g = c.grad_out;
    const Tensor& bv = *c.in[1];
    accumulate_each(c.grad_in[0], g.numel(), [&](std::size_t i) { return g[i] / bv[i]; });
    accumulate_each(c.grad_in[1], g.numel(),
                    [&](std::size_t i) { return -g[i] * c.out[i] / bv[i]; });
  });
}

Var add(const Var& a, const Tensor& b) { return add(a, a.tape().constant(b)); }
Var add(const Tensor& a, const Var& b) { return add(b.tape().constant(a), b); }
Var sub(const Var& a, const Tensor& b) { return sub(a, a.tape().constant(b)); }
Var sub(const Tensor& a, const Var& b) { return sub(b.tape().constant(a), b); }
Var mul(const Var& a, const Tensor& b) { return mul(a, a.tape().constant(b)); }
Var mul(const Tensor& a, const Var& b) { return mul(b.tape().constant(a), b); }
Var div(const Var& a, const Tensor& b) { return div(a, a.tape().constant(b)); }

Var add_row(const Var& x, const Var& b) {
  Tape& t = common_tape(x, b);
  return t.record(OpKind::AddRow, add_row(x.value(), b.value()), {x, b}, [](const Ctx& c) {
    accumulate(c.grad_in[0], c.grad_out);
    if (c.grad_in[1] != nullptr) {
      const std::size_t cols = c.grad_out.cols();
      double* gb = c.grad_in[1]->data();
      for (std::size_t r = 0; r < c.grad_out.rows(); ++r) {
        for (std::size_t j = 0; j < cols; ++j) gb[j] += c.grad_out[r * cols + j];
      }
    }
  });
}

Var add_row(const Var& x, const Tensor& b) { return add_row(x, x.tape().constant(b)); }
Var add_row(const Tensor& x, const Var& b) { return add_row(b.tape().constant(x), b); }

Var repeat_rows(const Var& v, std::size_t rows) {
  return add_row(Tensor(Shape{rows, v.numel()}), v);
}

// ---------------------------------------------------------------------------
// Scalar-parameterized and unary operations

Var scale(const Var& x, double s) {
  return x.tape().record(OpKind::Scale, scale(x.value(), s), {x}, [s](const Ctx& c) {
    accumulate_each(c.grad_in[0], c.grad_out.numel(), [&](std::size_t i) { return s * c.grad_out[i]; });
  });
}

Var add_scalar(const Var& x, double s) {
  return x.tape().record(OpKind::AddScalar, add_scalar(x.value(), s), {x},
                         [](const Ctx& c) { accumulate(c.grad_in[0], c.grad_out); });
}

Var neg(const Var& x) {
  return x.tape().record(OpKind::Neg, neg(x.value()), {x}, [](const Ctx& c) {
    accumulate_each(c.grad_in[0], c.grad_out.numel(), [&](std::size_t i) { return -c.grad_out[i]; });
  });
}

Var exp(const Var& x) {
  return x.tape().record(OpKind::Exp, exp(x.value()), {x}, [](const Ctx& c) {
    accumulate_each(c.grad_in[0], c.grad_out.numel(),
                    [&](std::size_t i) { return c.grad_out[i] * c.out[i]; });
  });
}

Var log(const Var& x) {
  return x.tape().record(OpKind::Log, log(x.value()), {x}, [](const Ctx& c) {
    accumulate_each(c.grad_in[0], c.grad_out.numel(),
                    [&](std::size_t i) { return c.grad_out[i] / (*c.in[0])[i]; });
  });
}

Var square(const Var& x) {
  return x.tape().record(OpKind::Square, square(x.value()), {x}, [](const Ctx& c) {
    accumulate_each(c.grad_in[0], c.grad_out.numel(),
                    [&](std::size_t i) { return 2.0 * (*c.in[0])[i] * c.grad_out[i]; });
  });
}

Var sqrt(const Var& x) {
  // The derivative at exactly zero is taken as zero.
  return x.tape().record(OpKind::Sqrt, sqrt(x.value()), {x}, [](const Ctx& c) {
    accumulate_each(c.grad_in[0], c.grad_out.numel(), [&](std::size_t i) {
      return c.out[i] > 0.0 ? c.grad_out[i] / (2.0 * c.out[i]) : 0.0;
    });
  });
}

Var abs(const Var& x) {
  return x.tape().record(OpKind::Abs, abs(x.value()), {x}, [](const Ctx& c) {
    accumulate_each(c.grad_in[0], c.grad_out.numel(), [&](std::size_t i) {
      const double v = (*c.in[0])[i];
      return v > 0.0 ? c.grad_out[i] : (v < 0.0 ? -c.grad_out[i] : 0.0);
    });
  });
}

Var maximum(const Var& x, double m) {
  return x.tape().record(OpKind::Maximum, maximum(x.value(), m), {x}, [m](const Ctx& c) {
    accumulate_each(c.grad_in[0], c.grad_out.numel(),
                    [&](std::size_t i) { return (*c.in[0])[i] > m ? c.grad_out[i] : 0.0; });
  });
}

Var minimum(const Var& x, double m) {
  return x.tape().record(OpKind::Minimum, minimum(x.value(), m), {x}, [m](const Ctx& c) {
    accumulate_each(c.grad_in[0], c.grad_out.numel(),
                    [&](std::size_t i) { return (*c.in[0])[i] < m ? c.grad_out[i] : 0.0; });
  });
}

Var clamp(const Var& x, double lo, double hi) {
  return x.tape().record(OpKind::Clamp, clamp(x.value(), lo, hi), {x}, [lo, hi](const Ctx& c) {
    accumulate_each(c.grad_in[0], c.grad_out.numel(), [&](std::size_t i) {
      const double v = (*c.in[0])[i];
      return (v > lo && v < hi) ? c.grad_out[i] : 0.0;
    });
  });
}

Var tanh(const Var& x) {
  return x.tape().record(OpKind::Tanh, tanh(x.value()), {x}, [](const Ctx& c) {
    accumulate_each(c.grad_in[0], c.grad_out.numel(), [&](std::size_t i) {
      return c.grad_out[i] * (1.0 - c.out[i] * c.out[i]);
    });
  });
}

Var sigmoid(const Var& x) {
  return x.tape().record(OpKind::Sigmoid, sigmoid(x.value()), {x}, [](const Ctx& c) {
    accumulate_each(c.grad_in[0], c.grad_out.numel(), [&](std::size_t i) {
      return c.grad_out[i] * c.out[i] * (1.0 - c.out[i]);
    });
  });
}

Var leaky_relu(const Var& x, double slope) {
  return x.tape().record(OpKind::LeakyRelu, leaky_relu(x.value(), slope), {x},
                         [slope](const Ctx& c) {
                           accumulate_each(c.grad_in[0], c.grad_out.numel(), [&](std::size_t i) {
                             return (*c.in[0])[i] >= 0.0 ? c.grad_out[i] : slope * c.grad_out[i];
                           });
                         });
}

Var relu(const Var& x) { return leaky_relu(x, 0.0); }

// ---------------------------------------------------------------------------
// Linear algebra and reductions

Var matmul(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  return t.record(OpKind::MatMul, matmul(a.value(), b.value()), {a, b}, [](const Ctx& c) {
    if (c.grad_in[0] != nullptr) accumulate(c.grad_in[0], matmul_nt(c.grad_out, *c.in[1]));
    if (c.grad_in[1] != nullptr) accumulate(c.grad_in[1], matmul_tn(*c.in[0], c.grad_out));
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  return t.record(OpKind::MatMulNT, matmul_nt(a.value(), b.value()), {a, b}, [](const Ctx& c) {
    if (c.grad_in[0] != nullptr) accumulate(c.grad_in[0], matmul(c.grad_out, *c.in[1]));
    if (c.grad_in[1] != nullptr) accumulate(c.grad_in[1], matmul_tn(c.grad_out, *c.in[0]));
  });
}

Var matmul(const Var& a, const Tensor& b) { return matmul(a, a.tape().constant(b)); }
Var matmul(const Tensor& a, const Var& b) { return matmul(b.tape().constant(a), b); }
Var matmul_nt(const Var& a, const Tensor& b) { return matmul_nt(a, a.tape().constant(b)); }
Var matmul_nt(const Tensor& a, const Var& b) { return matmul_nt(b.tape().constant(a), b); }

Var sum(const Var& x) {
  return x.tape().record(OpKind::Sum, sum(x.value()), {x}, [](const Ctx& c) {
    const double g = c.grad_out[0];
    accumulate_each(c.grad_in[0], c.in[0]->numel(), [g](std::size_t) { return g; });
  });
}

Var mean(const Var& x) {
  return x.tape().record(OpKind::Mean, mean(x.value()), {x}, [](const Ctx& c) {
    const double g = c.grad_out[0] / static_cast<double>(c.in[0]->numel());
    accumulate_each(c.grad_in[0], c.in[0]->numel(), [g](std::size_t) { return g; });
  });
}

Var row_sum(const Var& x) {
  return x.tape().record(OpKind::RowSum, row_sum(x.value()), {x}, [](const Ctx& c) {
    const std::size_t cols = c.in[0]->cols();
    accumulate_each(c.grad_in[0], c.in[0]->numel(),
                    [&](std::size_t i) { return c.grad_out[i / cols]; });
  });
}

Var concat_cols(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  return t.record(OpKind::ConcatCols, concat_cols(a.value(), b.value()), {a, b},
                  [](const Ctx& c) {
                    const std::size_t ca = c.in[0]->cols(), cb = c.in[1]->cols();
                    const std::size_t w = ca + cb;
                    for (std::size_t r = 0; r < c.grad_out.rows(); ++r) {
                      if (c.grad_in[0] != nullptr) {
                        for (std::size_t j = 0; j < ca; ++j) (*c.grad_in[0])[r * ca + j] += c.grad_out[r * w + j];
                      }
                      if (c.grad_in[1] != nullptr) {
                        for (std::size_t j = 0; j < cb; ++j) (*c.grad_in[1])[r * cb + j] += c.grad_out[r * w + ca + j];
                      }
                    }
                  });
}

Var concat_cols(const Var& a, const Tensor& b) { return concat_cols(a, a.tape().constant(b)); }
Var concat_cols(const Tensor& a, const Var& b) { return concat_cols(b.tape().constant(a), b); }

Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  return x.tape().record(OpKind::SliceCols, slice_cols(x.value(), begin, end), {x},
                         [begin](const Ctx& c) {
                           if (c.grad_in[0] == nullptr) return;
                           const std::size_t cols = c.in[0]->cols(), w = c.grad_out.cols();
                           for (std::size_t r = 0; r < c.grad_out.rows(); ++r) {
                             for (std::size_t j = 0; j < w; ++j) {
                               (*c.grad_in[0])[r * cols + begin + j] += c.grad_out[r * w + j];
                             }
                           }
                         });
}

Var transpose(const Var& x) {
  return x.tape().record(OpKind::Transpose, transpose(x.value()), {x}, [](const Ctx& c) {
    if (c.grad_in[0] == nullptr) return;
    const std::size_t rows = c.grad_out.rows(), cols = c.grad_out.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < cols; ++j) (*c.grad_in[0])[j * rows + r] += c.grad_out[r * cols + j];
    }
  });
}

Var masked(const Var& x, const Tensor& mask) {
  Var m = x.tape().constant(mask);
  return x.tape().record(OpKind::Masked, masked(x.value(), m.value()), {x, m}, [](const Ctx& c) {
    accumulate_each(c.grad_in[0], c.grad_out.numel(),
                    [&](std::size_t i) { return (*c.in[1])[i] != 0.0 ? c.grad_out[i] : 0.0; });
  });
}

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }
Var operator/(const Var& a, const Var& b) { return div(a, b); }
Var operator+(const Var& a, const Tensor& b) { return add(a, b); }
Var operator+(const Tensor& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Tensor& b) { return sub(a, b); }
Var operator-(const Tensor& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Tensor& b) { return mul(a, b); }
Var operator*(const Tensor& a, const Var& b) { return mul(a, b); }
Var operator-(const Var& x) { return neg(x); }
Var operator*(double c, const Var& x) { return scale(x, c); }
Var operator*(const Var& x, double c) { return scale(x, c); }
Var operator+(const Var& x, double c) { return add_scalar(x, c); }
Var operator+(double c, const Var& x) { return add_scalar(x, c); }
Var operator-(const Var& x, double c) { return add_scalar(x, -c); }
Var operator-(double c, const Var& x) { return add_scalar(neg(x), c); }

// ---------------------------------------------------------------------------

GradCheckResult grad_check(const ScalarLoss& loss, const ParamStore& params, double h) {
  if (!(h > 0.0)) throw DomainError("grad_check: step must be positive");

  GradMap analytic;
  {
    Tape tape;
    const auto bound = tape.bind(params);
    const Var out = loss(tape, bound);
    analytic = tape.backward(out).named();
  }

  ParamStore probe = params;
  auto evaluate = [&](const std::string& name, std::size_t index) {
    Tape tape;
    double v = 0.0;
    try {
      v = loss(tape, tape.bind(probe)).value().item();
    } catch (const DomainError& err) {
      throw NonFiniteError("grad_check: loss undefined when perturbing '" + name + "' at index " +
                           std::to_string(index) + ": " + err.what());
    }
    if (!std::isfinite(v)) {
      throw NonFiniteError("grad_check: non-finite loss when perturbing '" + name +
                           "' at index " + std::to_string(index));
    }
    return v;
  };

  GradCheckResult result;
  for (std::size_t e = 0; e < probe.size(); ++e) {
    auto& entry = probe.entry(e);
    if (!entry.trainable) continue;
    const Tensor& g = analytic.at(entry.name);
    for (std::size_t i = 0; i < entry.value.numel(); ++i) {
      const double saved = entry.value[i];
      entry.value[i] = saved + h;
      const double up = evaluate(entry.name, i);
      entry.value[i] = saved - h;
      const double down = evaluate(entry.name, i);
      entry.value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double rel = std::abs(g[i] - numeric) / std::max(1.0, std::abs(numeric));
      if (rel > result.max_rel_error || result.worst_param.empty()) {
        result = {rel, entry.name, i, g[i], numeric};
      }
    }
  }
  return result;
}

}  // namespace dgm
