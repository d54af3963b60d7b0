#include "dgm/gan.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "dgm/csv.hpp"
#include "dgm/data.hpp"
#include "dgm/error.hpp"
#include "dgm/eval.hpp"
#include "dgm/ops.hpp"

namespace dgm::gan {

namespace {

constexpr double kProbClamp = 1e-7;
const char* const kG = "g.";
const char* const kD = "d.";

// Parameters as tape constants: the graph flows through them but no
// gradient is accumulated for them.
Bound<Var> bind_constant(Tape& tape, const ParamStore& store) {
  std::vector<Var> vars;
  vars.reserve(store.size());
  for (const auto& e : store) vars.push_back(tape.constant(e.value));
  return Bound<Var>(store, std::move(vars));
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NonFiniteError(std::string(what) + " is not finite");
}

template <class T>
T probability(const Bound<T>& d, const GanSpec& spec, const T& x) {
  return clamp(discriminate(d, spec, x), kProbClamp, 1.0 - kProbClamp);
}

}  // namespace

nn::MlpSpec GanSpec::generator_net() const {
  nn::MlpSpec s;
  s.widths.push_back(latent_dim);
  for (std::size_t i = 0; i < g_depth; ++i) s.widths.push_back(g_hidden);
  s.widths.push_back(data_dim);
  s.hidden = g_activation;
  s.slope = g_slope;
  s.output = g_output;
  return s;
}

nn::MlpSpec GanSpec::discriminator_net() const {
  nn::MlpSpec s;
  s.widths.push_back(data_dim);
  for (std::size_t i = 0; i < d_depth; ++i) s.widths.push_back(d_hidden);
  s.widths.push_back(1);
  s.hidden = nn::Activation::LeakyRelu;
  s.slope = d_slope;
  s.output = variant == Variant::Bce ? nn::Activation::Sigmoid : nn::Activation::Identity;
  return s;
}

void GanSpec::validate() const {
  if (data_dim == 0 || latent_dim == 0) throw DomainError("GAN dimensions must be positive");
  nn::validate(generator_net());
  nn::validate(discriminator_net());
}

void GanConfig::validate(Variant v) const {
  if (n_critic == 0) throw DomainError("n_critic must be at least 1");
  if (v == Variant::Wgan && !(clip > 0.0)) throw DomainError("wgan clip must be positive");
  if (!(lr_g > 0.0) || !(lr_d > 0.0)) throw DomainError("GAN learning rates must be positive");
  if (batch == 0) throw DomainError("GAN batch size must be at least 1");
}

GanModel init(const GanSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  GanModel m;
  nn::append_mlp(m.g, kG, spec.generator_net(), rng);
  nn::append_mlp(m.d, kD, spec.discriminator_net(), rng);
  return m;
}

ParamStore merged(const GanModel& m) {
  ParamStore all;
  for (const auto* s : {&m.g, &m.d}) {
    for (const auto& e : *s) all.add(e.name, e.value, e.trainable);
  }
  return all;
}

GanModel split(const ParamStore& all) {
  GanModel m;
  for (const auto& e : all) {
    if (e.name.starts_with(kG)) {
      m.g.add(e.name, e.value, e.trainable);
    } else if (e.name.starts_with(kD)) {
      m.d.add(e.name, e.value, e.trainable);
    }
  }
  return m;
}

void warm_start(GanModel& model, const ParamStore& source) {
  for (auto& e : model.g) {
    if (!source.contains(e.name)) throw ShapeError("warm start: source has no entry '" + e.name + "'");
    const Tensor& v = source[e.name];
    if (v.shape() != e.value.shape()) {
      throw ShapeError("warm start: '" + e.name + "' has shape " + shape_str(v.shape()) + " in the source but " +
                       shape_str(e.value.shape()) + " in the generator");
    }
    e.value = v;
  }
}

template <class T>
T generate(const Bound<T>& g, const GanSpec& spec, const T& z) {
  return nn::mlp_forward(g, kG, spec.generator_net(), z);
}

template <class T>
T discriminate(const Bound<T>& d, const GanSpec& spec, const T& x) {
  return nn::mlp_forward(d, kD, spec.discriminator_net(), x);
}

template <class T>
T gan_objective(const Bound<T>& d, const Bound<T>& g, const GanSpec& spec, const Tensor& x, const Tensor& z) {
  if (spec.variant != Variant::Bce) throw DomainError("gan_objective needs a probability-mode discriminator");
  if (x.rows() == 0 || z.rows() == 0) throw ShapeError("gan_objective: empty batch");
  const T& any = d.at(0);
  const T fake = generate(g, spec, lift(any, z));
  return mean(log(probability(d, spec, lift(any, x)))) + mean(log(1.0 - probability(d, spec, fake)));
}

template <class T>
T critic_objective(const Bound<T>& d, const Bound<T>& g, const GanSpec& spec, const Tensor& x, const Tensor& z) {
  if (spec.variant != Variant::Wgan) throw DomainError("critic_objective needs a critic-mode discriminator");
  if (x.rows() == 0 || z.rows() == 0) throw ShapeError("critic_objective: empty batch");
  const T& any = d.at(0);
  return mean(discriminate(d, spec, generate(g, spec, lift(any, z)))) - mean(discriminate(d, spec, lift(any, x)));
}

template <class T>
T generator_loss(const Bound<T>& d, const Bound<T>& g, const GanSpec& spec, const Tensor& z, bool saturating) {
  const T fake = generate(g, spec, lift(d.at(0), z));
  if (spec.variant == Variant::Wgan) return mean(discriminate(d, spec, fake));
  const T p = probability(d, spec, fake);
  return saturating ? mean(log(1.0 - p)) : neg(mean(log(p)));
}

GanOptimizers make_optimizers(const GanConfig& cfg) {
  GanOptimizers o;
  o.adam_d.lr = cfg.lr_d;
  o.adam_g.lr = cfg.lr_g;
  for (auto* a : {&o.adam_d, &o.adam_g}) {
    a->beta1 = cfg.beta1;
    a->beta2 = cfg.beta2;
  }
  o.rms_d.lr = cfg.lr_d;
  o.rms_g.lr = cfg.lr_g;
  o.rms_d.rho = o.rms_g.rho = cfg.rms_rho;
  return o;
}

StepLog bce_step(GanModel& model, const GanSpec& spec, const GanConfig& cfg, GanOptimizers& opt,
                 data::BatchSource& source, Rng& rng) {
  if (spec.variant != Variant::Bce) throw DomainError("bce_step needs the bce variant");
  cfg.validate(spec.variant);
  StepLog log;
  for (std::size_t k = 0; k < cfg.n_critic; ++k) {
    const Tensor x = source.next(cfg.batch, rng);
    const Tensor z = data::sample_latent(spec.latent_dim, cfg.batch, rng);
    Tape tape;
    const auto d = tape.bind(model.d);
    const auto g = bind_constant(tape, model.g);
    const Var obj = gan_objective(d, g, spec, x, z);
    log.loss_d = obj.value().item();
    require_finite(log.loss_d, "discriminator objective");
    optim::adam_step(opt.adam_d, model.d, tape.backward(obj).named(), true);
  }
  const Tensor z = data::sample_latent(spec.latent_dim, cfg.batch, rng);
  Tape tape;
  const auto d = bind_constant(tape, model.d);
  const auto g = tape.bind(model.g);
  const Var loss = generator_loss(d, g, spec, z, cfg.saturating);
  log.loss_g = loss.value().item();
  require_finite(log.loss_g, "generator loss");
  optim::adam_step(opt.adam_g, model.g, tape.backward(loss).named());
  return log;
}

StepLog wgan_step(GanModel& model, const GanSpec& spec, const GanConfig& cfg, GanOptimizers& opt,
                  data::BatchSource& source, Rng& rng) {
  if (spec.variant != Variant::Wgan) throw DomainError("wgan_step needs a critic-mode discriminator");
  cfg.validate(spec.variant);
  StepLog log;
  for (std::size_t k = 0; k < cfg.n_critic; ++k) {
    const Tensor x = source.next(cfg.batch, rng);
    const Tensor z = data::sample_latent(spec.latent_dim, cfg.batch, rng);
    Tape tape;
    const auto d = tape.bind(model.d);
    const auto g = bind_constant(tape, model.g);
    const Var obj = critic_objective(d, g, spec, x, z);
    log.loss_d = obj.value().item();
    require_finite(log.loss_d, "critic objective");
    optim::rmsprop_step(opt.rms_d, model.d, tape.backward(obj).named(), true);
    optim::clip_weights(model.d, cfg.clip);
  }
  const Tensor z = data::sample_latent(spec.latent_dim, cfg.batch, rng);
  Tape tape;
  const auto d = bind_constant(tape, model.d);
  const auto g = tape.bind(model.g);
  const Var loss = generator_loss(d, g, spec, z, cfg.saturating);
  log.loss_g = loss.value().item();
  require_finite(log.loss_g, "generator loss");
  optim::rmsprop_step(opt.rms_g, model.g, tape.backward(loss).named());
  return log;
}

double mean_pairwise_distance(const Tensor& x) {
  const std::size_t n = x.rows();
  if (n < 2) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) d2 += std::pow(x.at(i, k) - x.at(j, k), 2);
      s += std::sqrt(d2);
    }
  }
  return s / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

double diameter(const Tensor& x) {
  double best = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = i + 1; j < x.rows(); ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) d2 += std::pow(x.at(i, k) - x.at(j, k), 2);
      best = std::max(best, d2);
    }
  }
  return std::sqrt(best);
}

Tensor sample(const GanModel& model, const GanSpec& spec, std::size_t count, Rng& rng) {
  return generate(eager(model.g), spec, data::sample_latent(spec.latent_dim, count, rng));
}

std::vector<LogRow> train(GanModel& model, const GanSpec& spec, const GanConfig& cfg, GanOptimizers& opt,
                          data::BatchSource& source, Rng& rng, Rng& eval_rng, const TrainOptions& opts) {
  cfg.validate(spec.variant);
  std::unique_ptr<csv::Writer> out;
  if (!opts.log_path.empty()) {
    out = opts.start_step > 0
              ? std::make_unique<csv::Writer>(opts.log_path, csv::Writer::Append{})
              : std::make_unique<csv::Writer>(opts.log_path, std::vector<std::string>{"step", "loss_d", "loss_g",
                                                                                      "energy_stat", "collapse_flag"});
  }
  const double threshold = opts.collapse_threshold
                               ? *opts.collapse_threshold
                               : 1e-3 * diameter(source.draw(opts.collapse_samples, eval_rng));
  std::vector<LogRow> rows;
  auto diagnose = [&](LogRow& row) {
    const Tensor fake = sample(model, spec, opts.energy_samples, eval_rng);
    row.energy_stat = eval::energy_statistic(fake, source.draw(opts.energy_samples, eval_rng));
    row.collapse = mean_pairwise_distance(sample(model, spec, opts.collapse_samples, eval_rng)) < threshold;
  };
  auto emit = [&](const LogRow& row) {
    rows.push_back(row);
    if (!out) return;
    auto cell = [](const std::optional<double>& v) { return v ? csv::format(*v) : std::string(); };
    out->cells({std::to_string(row.step), cell(row.loss_d), cell(row.loss_g), cell(row.energy_stat),
                row.collapse ? (*row.collapse ? "1" : "0") : ""});
  };
  for (std::size_t step = opts.start_step; step < opts.steps; ++step) {
    LogRow row;
    row.step = step;
    if (opts.energy_every > 0 && step % opts.energy_every == 0) diagnose(row);
    StepLog s;
    try {
      s = spec.variant == Variant::Bce ? bce_step(model, spec, cfg, opt, source, rng)
                                       : wgan_step(model, spec, cfg, opt, source, rng);
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("GAN training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    row.loss_d = s.loss_d;
    row.loss_g = s.loss_g;
    emit(row);
    if (opts.on_step) {
      if (out) out->flush();
      opts.on_step(step + 1);
    }
  }
  LogRow last;
  last.step = opts.steps;
  diagnose(last);
  emit(last);
  if (out) out->flush();
  return rows;
}

#define DGM_GAN_INSTANTIATE(T)                                                                                \
  template T generate<T>(const Bound<T>&, const GanSpec&, const T&);                                          \
  template T discriminate<T>(const Bound<T>&, const GanSpec&, const T&);                                      \
  template T gan_objective<T>(const Bound<T>&, const Bound<T>&, const GanSpec&, const Tensor&, const Tensor&); \
  template T critic_objective<T>(const Bound<T>&, const Bound<T>&, const GanSpec&, const Tensor&,             \
                                 const Tensor&);                                                              \
  template T generator_loss<T>(const Bound<T>&, const Bound<T>&, const GanSpec&, const Tensor&, bool);

DGM_GAN_INSTANTIATE(Tensor)
DGM_GAN_INSTANTIATE(Var)

}  // namespace dgm::gan
