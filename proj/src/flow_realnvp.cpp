#include "dgm/flow_realnvp.hpp"

#include <cmath>
#include <numbers>

#include "dgm/data.hpp"
#include "dgm/error.hpp"

namespace dgm::flow {

nn::MlpSpec RealNvpSpec::net_spec() const {
  nn::MlpSpec s;
  s.widths.push_back(dim);
  for (std::size_t i = 0; i < depth; ++i) s.widths.push_back(hidden);
  s.widths.push_back(dim);
  s.hidden = nn::Activation::LeakyRelu;
  s.slope = slope;
  return s;
}

Parity RealNvpSpec::parity(std::size_t layer) const {
  return layer % 2 == 0 ? Parity::KeepFirst : Parity::KeepSecond;
}

void RealNvpSpec::validate() const {
  if (dim < 2) throw DomainError("real NVP needs dimension >= 2");
  if (hidden == 0) throw DomainError("real NVP hidden width must be positive");
  if (!(s_bound > 0.0)) throw DomainError("real NVP s_bound must be positive");
}

std::string net_prefix(std::size_t layer, char which) {
  return "c" + std::to_string(layer) + "." + which + ".";
}

ParamStore init(const RealNvpSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamStore store;
  Rng rng(seed);
  const auto net = spec.net_spec();
  for (std::size_t j = 0; j < spec.layers; ++j) {
    nn::append_mlp(store, net_prefix(j, 's'), net, rng);
    nn::append_mlp(store, net_prefix(j, 't'), net, rng);
  }
  return store;
}

std::size_t param_count(const RealNvpSpec& spec) {
  return 2 * spec.layers * nn::param_count(spec.net_spec());
}

Tensor kept_mask(std::size_t dim, Parity parity) {
  Tensor m(Shape{dim});
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < dim; ++i) {
    const bool first = i < half;
    m[i] = (first == (parity == Parity::KeepFirst)) ? 1.0 : 0.0;
  }
  return m;
}

namespace {

Tensor row_mask(const Tensor& mask, std::size_t rows) { return repeat_rows(mask, rows); }

template <class T>
void check_cols(const T& y, const RealNvpSpec& spec, const char* where) {
  const Tensor& v = value_of(y);
  if (v.rank() != 2 || v.cols() != spec.dim) {
    throw ShapeError(std::string(where) + ": expected batch with " + std::to_string(spec.dim) +
                     " columns, got " + shape_str(v.shape()));
  }
}

// s and t of a layer at the changed coordinates (zero on the kept ones).
template <class T>
std::pair<T, T> scale_shift(const Bound<T>& params, const RealNvpSpec& spec, std::size_t layer,
                            const T& y) {
  const std::size_t rows = value_of(y).rows();
  const Tensor keep = row_mask(kept_mask(spec.dim, spec.parity(layer)), rows);
  const Tensor change = 1.0 - keep;
  const T input = masked(y, keep);
  const auto net = spec.net_spec();
  const T raw_s = nn::mlp_forward(params, net_prefix(layer, 's'), net, input);
  const T raw_t = nn::mlp_forward(params, net_prefix(layer, 't'), net, input);
  const double b = spec.s_bound;
  T s = masked(scale(tanh(scale(raw_s, 1.0 / b)), b), change);
  T t = masked(raw_t, change);
  return {s, t};
}

}  // namespace

template <class T>
Mapped<T> coupling_forward(const Bound<T>& params, const RealNvpSpec& spec, std::size_t layer,
                           const T& y) {
  check_cols(y, spec, "coupling_forward");
  auto [s, t] = scale_shift(params, spec, layer, y);
  return {y * exp(s) + t, row_sum(s)};
}

template <class T>
Mapped<T> coupling_inverse(const Bound<T>& params, const RealNvpSpec& spec, std::size_t layer,
                           const T& y) {
  check_cols(y, spec, "coupling_inverse");
  auto [s, t] = scale_shift(params, spec, layer, y);
  return {(y - t) * exp(neg(s)), neg(row_sum(s))};
}

template <class T>
Mapped<T> flow_forward(const Bound<T>& params, const RealNvpSpec& spec, const T& z) {
  check_cols(z, spec, "flow_forward");
  T y = z;
  T logdet = lift(z, Tensor(Shape{value_of(z).rows(), 1}));
  for (std::size_t j = 0; j < spec.layers; ++j) {
    auto m = coupling_forward(params, spec, j, y);
    y = m.y;
    logdet = logdet + m.logdet;
  }
  return {y, logdet};
}

template <class T>
Mapped<T> flow_inverse(const Bound<T>& params, const RealNvpSpec& spec, const T& x) {
  check_cols(x, spec, "flow_inverse");
  T y = x;
  T logdet = lift(x, Tensor(Shape{value_of(x).rows(), 1}));
  for (std::size_t j = spec.layers; j-- > 0;) {
    auto m = coupling_inverse(params, spec, j, y);
    y = m.y;
    logdet = logdet + m.logdet;
  }
  return {y, logdet};
}

template <class T>
T gaussian_nll(const T& z, const T& logdet) {
  const Tensor& zv = value_of(z);
  if (zv.rows() == 0) throw ShapeError("nll: empty batch");
  const double n = static_cast<double>(zv.cols());
  const double c = 0.5 * n * std::log(2.0 * std::numbers::pi);
  return mean(scale(row_sum(square(z)), 0.5) - logdet) + c;
}

template <class T>
T nll_loss(const Bound<T>& params, const RealNvpSpec& spec, const T& x) {
  if (value_of(x).rows() == 0) throw ShapeError("nll_loss: empty batch");
  auto m = flow_inverse(params, spec, x);
  return gaussian_nll(m.y, m.logdet);
}

Tensor log_density(const ParamStore& params, const RealNvpSpec& spec, const Tensor& x) {
  auto m = flow_inverse(eager(params), spec, x);
  const double c = 0.5 * static_cast<double>(spec.dim) * std::log(2.0 * std::numbers::pi);
  return m.logdet - scale(row_sum(square(m.y)), 0.5) - c;
}

Tensor sample(const ParamStore& params, const RealNvpSpec& spec, std::size_t count, Rng& rng) {
  const Tensor z = data::sample_latent(spec.dim, count, rng);
  if (count == 0) return Tensor(Shape{0, spec.dim});
  return flow_forward(eager(params), spec, z).y;
}

#define DGM_FLOW_INSTANTIATE(T)                                                                \
  template Mapped<T> coupling_forward<T>(const Bound<T>&, const RealNvpSpec&, std::size_t,     \
                                         const T&);                                            \
  template Mapped<T> coupling_inverse<T>(const Bound<T>&, const RealNvpSpec&, std::size_t,     \
                                         const T&);                                            \
  template Mapped<T> flow_forward<T>(const Bound<T>&, const RealNvpSpec&, const T&);           \
  template Mapped<T> flow_inverse<T>(const Bound<T>&, const RealNvpSpec&, const T&);           \
  template T nll_loss<T>(const Bound<T>&, const RealNvpSpec&, const T&);                       \
  template T gaussian_nll<T>(const T&, const T&);

DGM_FLOW_INSTANTIATE(Tensor)
DGM_FLOW_INSTANTIATE(Var)

}  // namespace dgm::flow
