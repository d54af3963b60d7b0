#include "dgm/vae.hpp"

#include <cmath>
#include <numbers>

#include "dgm/data.hpp"
#include "dgm/error.hpp"
#include "dgm/ops.hpp"

namespace dgm::vae {

void Likelihood::validate() const {
  if (kind == Kind::Gaussian && !(sigma > 0.0)) throw DomainError("Gaussian likelihood needs sigma > 0");
  if (kind == Kind::Bernoulli && !(eps > 0.0 && eps < 0.5)) throw DomainError("Bernoulli clamp must lie in (0, 0.5)");
}

std::string likelihood_name(Likelihood::Kind k) { return k == Likelihood::Kind::Gaussian ? "gaussian" : "bernoulli"; }

Likelihood::Kind likelihood_from_name(const std::string& name) {
  if (name == "gaussian") return Likelihood::Kind::Gaussian;
  if (name == "bernoulli") return Likelihood::Kind::Bernoulli;
  throw DomainError("unknown likelihood '" + name + "'");
}

nn::MlpSpec VaeSpec::generator_net() const {
  nn::MlpSpec s;
  s.widths.push_back(latent_dim);
  for (std::size_t i = 0; i < depth; ++i) s.widths.push_back(hidden);
  s.widths.push_back(data_dim);
  s.hidden = activation;
  s.slope = slope;
  s.output = likelihood.kind == Likelihood::Kind::Bernoulli ? nn::Activation::Sigmoid : nn::Activation::Identity;
  return s;
}

void VaeSpec::validate() const {
  if (data_dim == 0 || latent_dim == 0) throw DomainError("VAE dimensions must be positive");
  if (depth > 0 && hidden == 0) throw DomainError("VAE hidden width must be positive");
  likelihood.validate();
  nn::validate(generator_net());
}

namespace {

std::size_t trunk_width(const VaeSpec& spec) { return spec.depth == 0 ? spec.data_dim : spec.hidden; }

void append_dense(ParamStore& p, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  p.add(prefix + "weight", nn::glorot_uniform(out, in, rng));
  p.add(prefix + "bias", Tensor(Shape{out}));
}

}  // namespace

ParamStore init(const VaeSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamStore p;
  Rng rng(seed);
  std::size_t in = spec.data_dim;
  for (std::size_t l = 0; l < spec.depth; ++l) {
    append_dense(p, "e.l" + std::to_string(l) + ".", in, spec.hidden, rng);
    in = spec.hidden;
  }
  append_dense(p, "e.mu.", in, spec.latent_dim, rng);
  append_dense(p, "e.logvar.", in, spec.latent_dim, rng);
  nn::append_mlp(p, kGeneratorPrefix, spec.generator_net(), rng);
  return p;
}

std::size_t param_count(const VaeSpec& spec) {
  spec.validate();
  std::size_t n = 0, in = spec.data_dim;
  for (std::size_t l = 0; l < spec.depth; ++l) {
    n += in * spec.hidden + spec.hidden;
    in = spec.hidden;
  }
  n += 2 * (trunk_width(spec) * spec.latent_dim + spec.latent_dim);
  return n + nn::param_count(spec.generator_net());
}

template <class T>
Posterior<T> encode(const Bound<T>& p, const VaeSpec& spec, const T& x) {
  const Tensor& xv = value_of(x);
  if (xv.rank() != 2 || xv.cols() != spec.data_dim) {
    throw ShapeError("encode: input shape " + shape_str(xv.shape()) + " does not match data dimension " +
                     std::to_string(spec.data_dim));
  }
  T h = x;
  for (std::size_t l = 0; l < spec.depth; ++l) {
    h = nn::activate(nn::dense(h, p[nn::weight_name("e.", l)], p[nn::bias_name("e.", l)]), spec.activation,
                     spec.slope);
  }
  return {nn::dense(h, p["e.mu.weight"], p["e.mu.bias"]), nn::dense(h, p["e.logvar.weight"], p["e.logvar.bias"])};
}

template <class T>
T decode(const Bound<T>& p, const VaeSpec& spec, const T& z) {
  return nn::mlp_forward(p, kGeneratorPrefix, spec.generator_net(), z);
}

template <class T>
T reparam_sample(const T& mu, const T& logvar, const Tensor& eps) {
  if (value_of(mu).shape() != eps.shape() || value_of(logvar).shape() != eps.shape()) {
    throw ShapeError("reparam_sample: mu " + shape_str(value_of(mu).shape()) + ", logvar " +
                     shape_str(value_of(logvar).shape()) + ", eps " + shape_str(eps.shape()));
  }
  return mu + exp(scale(logvar, 0.5)) * eps;
}

template <class T>
T kl_gaussian(const T& mu, const T& logvar) {
  return scale(row_sum(square(mu) + exp(logvar) - logvar - 1.0), 0.5);
}

template <class T>
T recon_loss(const Likelihood& lik, const Tensor& x, const T& x_hat) {
  lik.validate();
  if (x.shape() != value_of(x_hat).shape()) {
    throw ShapeError("recon_loss: x " + shape_str(x.shape()) + " vs x_hat " + shape_str(value_of(x_hat).shape()));
  }
  const double n = static_cast<double>(x.cols());
  if (lik.kind == Likelihood::Kind::Gaussian) {
    return add_scalar(scale(row_sum(square(x_hat - x)), 0.5 / lik.sigma),
                      0.5 * n * std::log(2.0 * std::numbers::pi * lik.sigma));
  }
  for (double v : x.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("Bernoulli likelihood needs data in [0, 1], got " + std::to_string(v));
  }
  const T p = clamp(x_hat, lik.eps, 1.0 - lik.eps);
  return neg(row_sum(x * log(p) + (1.0 - x) * log(1.0 - p)));
}

template <class T>
Elbo<T> elbo_loss(const Bound<T>& params, const VaeSpec& spec, const Tensor& x, const Tensor& eps) {
  if (x.rows() == 0) throw ShapeError("elbo_loss: empty batch");
  const T xin = lift(params.at(0), x);
  const auto post = encode(params, spec, xin);
  const T z = reparam_sample(post.mu, post.logvar, eps);
  const T recon = mean(recon_loss(spec.likelihood, x, decode(params, spec, z)));
  const T kl = mean(kl_gaussian(post.mu, post.logvar));
  return {recon + kl, recon, kl};
}

template <class T>
Elbo<T> elbo_loss(const Bound<T>& params, const VaeSpec& spec, const Tensor& x, Rng& rng) {
  return elbo_loss(params, spec, x, data::sample_latent(spec.latent_dim, x.rows(), rng));
}

PosteriorGrid posterior_grid(const ParamStore& params, const VaeSpec& spec, const Tensor& x, const Grid& grid) {
  if (spec.latent_dim != 2) throw DomainError("posterior_grid needs a two-dimensional latent space");
  if (x.rank() != 2 || x.rows() != 1 || x.cols() != spec.data_dim) {
    throw ShapeError("posterior_grid: expected one observation of width " + std::to_string(spec.data_dim) + ", got " +
                     shape_str(x.shape()));
  }
  grid.validate();
  const Tensor z = grid.points();
  const Tensor xr = gather_rows(x, std::vector<std::size_t>(z.rows(), 0));
  const Tensor lik = recon_loss(spec.likelihood, xr, decode(eager(params), spec, z));
  PosteriorGrid out{grid, Tensor(Shape{z.rows(), 1})};
  const double c = std::log(2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const double v = -lik[i] - 0.5 * (z.at(i, 0) * z.at(i, 0) + z.at(i, 1) * z.at(i, 1)) - c;
    out.log_posterior[i] = v;
    if (v > out.log_posterior[out.argmax]) out.argmax = i;
  }
  out.map_z0 = z.at(out.argmax, 0);
  out.map_z1 = z.at(out.argmax, 1);
  return out;
}

Tensor sample(const ParamStore& params, const VaeSpec& spec, std::size_t count, Rng& rng) {
  return decode(eager(params), spec, data::sample_latent(spec.latent_dim, count, rng));
}

#define DGM_VAE_INSTANTIATE(T)                                                                      \
  template Posterior<T> encode<T>(const Bound<T>&, const VaeSpec&, const T&);                       \
  template T decode<T>(const Bound<T>&, const VaeSpec&, const T&);                                  \
  template T reparam_sample<T>(const T&, const T&, const Tensor&);                                  \
  template T kl_gaussian<T>(const T&, const T&);                                                    \
  template T recon_loss<T>(const Likelihood&, const Tensor&, const T&);                             \
  template Elbo<T> elbo_loss<T>(const Bound<T>&, const VaeSpec&, const Tensor&, const Tensor&);     \
  template Elbo<T> elbo_loss<T>(const Bound<T>&, const VaeSpec&, const Tensor&, Rng&);

DGM_VAE_INSTANTIATE(Tensor)
DGM_VAE_INSTANTIATE(Var)

}  // namespace dgm::vae
