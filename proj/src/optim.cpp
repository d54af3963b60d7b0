#include "dgm/optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dgm/error.hpp"

namespace dgm::optim {

namespace {

// Gradient for a trainable entry, validated for presence, shape and finiteness.
const Tensor& grad_for(const ParamEntry& e, const GradMap& grads) {
  auto it = grads.find(e.name);
  if (it == grads.end()) throw DomainError("missing gradient for parameter '" + e.name + "'");
  if (it->second.shape() != e.value.shape()) {
    throw ShapeError("gradient for '" + e.name + "' has shape " + shape_str(it->second.shape()) +
                     ", parameter has " + shape_str(e.value.shape()));
  }
  if (!it->second.all_finite()) {
    throw NonFiniteError("non-finite gradient for parameter '" + e.name + "'");
  }
  return it->second;
}

void check_no_strays(const ParamStore& params, const GradMap& grads) {
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw DomainError("gradient for unknown parameter '" + name + "'");
  }
}

Tensor& zeros_like(GradMap& map, const ParamEntry& e) {
  auto it = map.find(e.name);
  if (it == map.end()) it = map.emplace(e.name, Tensor(e.value.shape())).first;
  return it->second;
}

}  // namespace

GradMap restrict_to(const GradMap& grads, const ParamStore& params) {
  GradMap out;
  for (const auto& [name, g] : grads) {
    if (params.contains(name)) out.emplace(name, g);
  }
  return out;
}

void sgd_step(ParamStore& params, const GradMap& grads, double lr, bool ascent) {
  check_no_strays(params, grads);
  const double sign = ascent ? 1.0 : -1.0;
  for (auto& e : params) {
    if (!e.trainable) continue;
    const Tensor& g = grad_for(e, grads);
    for (std::size_t i = 0; i < g.numel(); ++i) e.value[i] += sign * lr * g[i];
  }
}

void adam_step(AdamState& s, ParamStore& params, const GradMap& grads, bool ascent) {
  check_no_strays(params, grads);
  for (auto& e : params) {
    if (e.trainable) grad_for(e, grads);
  }
  ++s.t;
  const double t = static_cast<double>(s.t);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  const double sign = ascent ? -1.0 : 1.0;
  for (auto& e : params) {
    if (!e.trainable) continue;
    const Tensor& g = grads.find(e.name)->second;
    Tensor& m = zeros_like(s.m, e);
    Tensor& v = zeros_like(s.v, e);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      double& th = e.value[i];
      if (s.weight_decay > 0.0) th -= s.lr * s.weight_decay * th;
      const double gi = sign * g[i];
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * gi;
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * gi * gi;
      th -= s.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + s.eps);
    }
  }
}

void rmsprop_step(RmsPropState& s, ParamStore& params, const GradMap& grads, bool ascent) {
  check_no_strays(params, grads);
  for (auto& e : params) {
    if (e.trainable) grad_for(e, grads);
  }
  const double sign = ascent ? -1.0 : 1.0;
  for (auto& e : params) {
    if (!e.trainable) continue;
    const Tensor& g = grads.find(e.name)->second;
    Tensor& acc = zeros_like(s.s, e);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double gi = sign * g[i];
      acc[i] = s.rho * acc[i] + (1.0 - s.rho) * gi * gi;
      e.value[i] -= s.lr * gi / (std::sqrt(acc[i]) + s.eps);
    }
  }
}

void clip_weights(ParamStore& params, double c) {
  if (!(c > 0.0)) throw DomainError("clip_weights: c must be positive");
  for (auto& e : params) {
    if (!e.trainable) continue;
    for (double& x : e.value.values()) x = std::min(std::max(x, -c), c);
  }
}

namespace {

void export_map(const GradMap& map, ParamStore& out, const std::string& prefix) {
  for (const auto& [name, t] : map) out.add(prefix + name, t, false);
}

GradMap import_map(const ParamStore& in, const std::string& prefix) {
  GradMap map;
  for (const auto& e : in) {
    if (e.name.starts_with(prefix)) map.emplace(e.name.substr(prefix.size()), e.value);
  }
  return map;
}

}  // namespace

void export_state(const AdamState& s, ParamStore& out, std::string_view prefix) {
  const std::string p(prefix);
  out.add(p + "t", Tensor::scalar(static_cast<double>(s.t)), false);
  export_map(s.m, out, p + "m.");
  export_map(s.v, out, p + "v.");
}

void import_state(AdamState& s, const ParamStore& in, std::string_view prefix) {
  const std::string p(prefix);
  s.t = in.contains(p + "t") ? static_cast<std::size_t>(in[p + "t"].item()) : 0;
  s.m = import_map(in, p + "m.");
  s.v = import_map(in, p + "v.");
}

void export_state(const RmsPropState& s, ParamStore& out, std::string_view prefix) {
  export_map(s.s, out, std::string(prefix) + "s.");
}

void import_state(RmsPropState& s, const ParamStore& in, std::string_view prefix) {
  s.s = import_map(in, std::string(prefix) + "s.");
}

}  // namespace dgm::optim
