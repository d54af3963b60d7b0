#include "dgm/nn.hpp"

#include <cmath>

#include "dgm/data.hpp"
#include "dgm/error.hpp"

namespace dgm::nn {

void validate(const MlpSpec& spec) {
  if (spec.widths.size() < 2) throw DomainError("MlpSpec needs at least two widths");
  for (std::size_t w : spec.widths) {
    if (w == 0) throw DomainError("MlpSpec widths must be positive");
  }
  if (spec.output != Activation::Identity && spec.output != Activation::Sigmoid) {
    throw DomainError("MlpSpec output activation must be identity or sigmoid");
  }
  if (spec.hidden == Activation::Sigmoid || spec.hidden == Activation::Identity) {
    throw DomainError("MlpSpec hidden activation must be relu, leaky_relu or tanh");
  }
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "identity";
}

Activation activation_from_name(std::string_view name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "leaky_relu") return Activation::LeakyRelu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw DomainError("unknown activation '" + std::string(name) + "'");
}

std::size_t param_count(const MlpSpec& spec) {
  validate(spec);
  std::size_t n = 0;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    n += spec.widths[l] * spec.widths[l + 1] + spec.widths[l + 1];
  }
  return n;
}

std::string weight_name(std::string_view prefix, std::size_t layer) {
  return std::string(prefix) + "l" + std::to_string(layer) + ".weight";
}

std::string bias_name(std::string_view prefix, std::size_t layer) {
  return std::string(prefix) + "l" + std::to_string(layer) + ".bias";
}

Tensor glorot_uniform(std::size_t out, std::size_t in, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w(Shape{out, in});
  for (double& v : w.values()) v = a * (2.0 * rng.uniform() - 1.0);
  return w;
}

void append_mlp(ParamStore& store, std::string_view prefix, const MlpSpec& spec, Rng& rng) {
  validate(spec);
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t in = spec.widths[l], out = spec.widths[l + 1];
    store.add(weight_name(prefix, l), glorot_uniform(out, in, rng));
    store.add(bias_name(prefix, l), Tensor(Shape{out}));
  }
}

ParamStore init(const MlpSpec& spec, std::uint64_t seed, std::string_view prefix) {
  ParamStore store;
  Rng rng(seed);
  append_mlp(store, prefix, spec, rng);
  return store;
}

template <class T>
T mlp_forward(const Bound<T>& params, std::string_view prefix, const MlpSpec& spec, const T& input) {
  if (value_of(input).rank() != 2 || value_of(input).cols() != spec.input_dim()) {
    throw ShapeError("mlp_forward: input shape " + shape_str(value_of(input).shape()) +
                     " does not match input width " + std::to_string(spec.input_dim()));
  }
  T h = input;
  const std::size_t layers = spec.layer_count();
  for (std::size_t l = 0; l < layers; ++l) {
    h = dense(h, params[weight_name(prefix, l)], params[bias_name(prefix, l)]);
    h = activate(h, l + 1 < layers ? spec.hidden : spec.output, spec.slope);
  }
  return h;
}

template Tensor mlp_forward<Tensor>(const Bound<Tensor>&, std::string_view, const MlpSpec&, const Tensor&);
template Var mlp_forward<Var>(const Bound<Var>&, std::string_view, const MlpSpec&, const Var&);

Tensor mlp_forward(const ParamStore& params, const MlpSpec& spec, const Tensor& input,
                   std::string_view prefix) {
  return mlp_forward(eager(params), prefix, spec, input);
}

}  // namespace dgm::nn
