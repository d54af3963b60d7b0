#include "dgm/experiment.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "dgm/cnf.hpp"
#include "dgm/csv.hpp"
#include "dgm/flow_realnvp.hpp"
#include "dgm/gan.hpp"
#include "dgm/ops.hpp"
#include "dgm/optim.hpp"
#include "dgm/vae.hpp"

namespace dgm::app {

namespace fs = std::filesystem;

namespace {

// Stream ids derived from the config seed.
constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kEvalStream = 2;
constexpr std::uint64_t kTrainSetStream = 3;
constexpr std::uint64_t kCollapseStream = 4;

constexpr std::size_t kCollapseSamples = 256;
constexpr std::size_t kChunk = 4096;

bool is_gan(ModelKind k) { return k == ModelKind::GanBce || k == ModelKind::GanWgan; }

Tensor sample_params(const ExperimentConfig& cfg, std::size_t dim, const ParamStore& params, std::size_t count,
                     Rng& rng) {
  switch (cfg.kind()) {
    case ModelKind::RealNvp:
      return flow::sample(params, cfg.realnvp_spec(dim), count, rng);
    case ModelKind::CnfFree:
    case ModelKind::CnfPotential: {
      const Tensor z = data::sample_latent(dim, count, rng);
      if (count == 0) return Tensor(Shape{0, dim});
      return cnf::cnf_forward(params, cfg.cnf_spec(dim), z, cfg.nt_eval);
    }
    case ModelKind::Vae:
      return vae::sample(params, cfg.vae_spec(dim), count, rng);
    case ModelKind::GanBce:
    case ModelKind::GanWgan:
      return gan::sample(gan::split(params), cfg.gan_spec(dim), count, rng);
  }
  throw DomainError("unknown model kind");
}

// Keeps the header and the rows of steps before `start`, so appending the
// resumed run reproduces the uninterrupted log.
void truncate_log(const std::string& path, std::size_t start) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot resume: training log '" + path + "' is missing");
  std::string line, kept;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      kept += line + "\n";
      header = false;
      continue;
    }
    const std::size_t comma = line.find(',');
    if (std::stoull(line.substr(0, comma)) < start) kept += line + "\n";
  }
  in.close();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << kept;
}

std::unique_ptr<csv::Writer> open_log(const std::string& path, const std::vector<std::string>& header,
                                      std::size_t start) {
  if (start == 0) return std::make_unique<csv::Writer>(path, header);
  truncate_log(path, start);
  return std::make_unique<csv::Writer>(path, csv::Writer::Append{});
}

void export_source(const data::BatchSource& source, ParamStore& out) {
  if (!source.finite()) return;
  const auto st = source.epoch_state();
  Tensor order(Shape{st.order.size()});
  for (std::size_t i = 0; i < st.order.size(); ++i) order[i] = static_cast<double>(st.order[i]);
  out.add("data.order", order, false);
  out.add("data.cursor", Tensor::scalar(static_cast<double>(st.cursor)), false);
}

void import_source(data::BatchSource& source, const ParamStore& in) {
  if (!source.finite() || !in.contains("data.order")) return;
  data::BatchSource::EpochState st;
  for (double v : in["data.order"].values()) st.order.push_back(static_cast<std::size_t>(v));
  st.cursor = static_cast<std::size_t>(in["data.cursor"].item());
  source.restore(std::move(st));
}

optim::AdamState make_adam(const ExperimentConfig& cfg) {
  optim::AdamState a;
  a.lr = cfg.lr;
  a.beta1 = cfg.beta1;
  a.beta2 = cfg.beta2;
  a.weight_decay = cfg.weight_decay;
  return a;
}

std::string cell(const std::optional<double>& v) { return v ? csv::format(*v) : std::string(); }

// Shared bookkeeping of one training invocation.
struct Run {
  Checkpoint& c;
  std::string dir;
  const RunOptions& opts;
  data::BatchSource source;
  Rng rng;
  Rng eval_rng;
  std::size_t last_saved = 0;

  Run(Checkpoint& ck, const RunOptions& o)
      : c(ck), dir(o.out_dir.empty() ? ck.config.out_dir : o.out_dir), opts(o), source(make_source(ck.config)) {
    rng.set_state(c.rng_state);
    eval_rng.set_state(c.eval_rng_state);
    import_source(source, c.state);
    fs::create_directories(dir);
  }

  std::string path(const std::string& name) const { return (fs::path(dir) / name).string(); }

  void note(const std::string& s) const {
    if (opts.progress) opts.progress(s);
  }

  double energy(const ParamStore& params) {
    const Tensor fake = sample_params(c.config, c.data_dim, params, c.config.energy_samples, eval_rng);
    return eval::energy_statistic(fake, source.draw(c.config.energy_samples, eval_rng));
  }

  bool energy_due(std::size_t step) const {
    return c.config.energy_every > 0 && step % c.config.energy_every == 0;
  }

  // Stores everything but the parameters, which the caller sets.
  void save(std::size_t step, ParamStore state, bool snapshot) {
    export_source(source, state);
    c.state = std::move(state);
    c.rng_state = rng.state();
    c.eval_rng_state = eval_rng.state();
    c.step = step;
    if (snapshot) save_checkpoint(path("snapshot_" + std::to_string(step) + ".dgm"), c);
    save_checkpoint(path("checkpoint.dgm"), c);
    last_saved = step;
  }

  [[noreturn]] void diverged(std::size_t step, const std::string& what) const {
    throw NonFiniteError("training diverged at step " + std::to_string(step) + ": " + what +
                         "; checkpoint.dgm holds step " + std::to_string(last_saved));
  }
};

void check_step(Run& run, std::size_t step, const Var& loss, const GradMap& grads) {
  if (!std::isfinite(loss.value().item())) run.diverged(step, "non-finite loss");
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) run.diverged(step, "non-finite gradient of '" + name + "'");
  }
}

void train_flow_family(Checkpoint& c, const RunOptions& opts) {
  const ExperimentConfig& cfg = c.config;
  const ModelKind kind = cfg.kind();
  Run run(c, opts);
  optim::AdamState adam = make_adam(cfg);
  optim::import_state(adam, c.state, "optim.");
  const std::vector<std::string> header =
      kind == ModelKind::RealNvp ? std::vector<std::string>{"step", "nll", "energy_stat"}
                                 : std::vector<std::string>{"step", "total", "nll", "transport", "hjb", "energy_stat"};
  auto log = open_log(run.path("training_log.csv"), header, c.step);
  auto checkpoint = [&](std::size_t step, bool snapshot) {
    ParamStore state;
    optim::export_state(adam, state, "optim.");
    run.save(step, std::move(state), snapshot);
  };
  checkpoint(c.step, false);

  const auto nvp = cfg.realnvp_spec(c.data_dim);
  const auto cspec = cfg.cnf_spec(c.data_dim);
  for (std::size_t step = c.step; step < cfg.steps; ++step) {
    std::optional<double> e;
    if (run.energy_due(step)) e = run.energy(c.params);
    const Tensor x = run.source.next(cfg.batch, run.rng);
    Tape tape;
    auto p = tape.bind(c.params);
    std::vector<std::string> cells{std::to_string(step)};
    Var loss;
    try {
      if (kind == ModelKind::RealNvp) {
        loss = flow::nll_loss(p, nvp, tape.constant(x));
        cells.push_back(csv::format(loss.value().item()));
      } else {
        auto o = cnf::ot_objective(p, cspec, tape.constant(x), cfg.alpha, cfg.lambda_hjb, cfg.nt_train);
        loss = o.total;
        for (const Var* v : {&o.total, &o.nll, &o.transport, &o.hjb}) cells.push_back(csv::format(v->value().item()));
      }
    } catch (const NonFiniteError& err) {
      run.diverged(step, err.what());
    }
    const GradMap grads = tape.backward(loss).named();
    check_step(run, step, loss, grads);
    optim::adam_step(adam, c.params, grads);
    cells.push_back(cell(e));
    log->cells(cells);
    if (cfg.snapshot_every > 0 && (step + 1) % cfg.snapshot_every == 0) {
      log->flush();
      checkpoint(step + 1, true);
      run.note("step " + std::to_string(step + 1) + " loss " + csv::format(loss.value().item()));
    }
  }
  std::vector<std::string> last{std::to_string(cfg.steps)};
  last.resize(header.size() - 1);
  last.push_back(csv::format(run.energy(c.params)));
  log->cells(last);
  log->flush();
  checkpoint(cfg.steps, false);
}

void train_vae(Checkpoint& c, const RunOptions& opts) {
  const ExperimentConfig& cfg = c.config;
  Run run(c, opts);
  if (!run.source.finite()) throw DomainError("the vae family needs a fixed training set");
  const auto spec = cfg.vae_spec(c.data_dim);
  optim::AdamState adam = make_adam(cfg);
  optim::import_state(adam, c.state, "optim.");
  auto log = open_log(run.path("training_log.csv"), {"step", "epoch", "loss", "recon", "kl", "energy_stat"}, c.step);
  auto checkpoint = [&](std::size_t step, bool snapshot) {
    ParamStore state;
    optim::export_state(adam, state, "optim.");
    run.save(step, std::move(state), snapshot);
  };
  checkpoint(c.step, false);

  std::size_t step = c.step;
  for (std::size_t epoch = c.epoch; epoch < cfg.epochs; ++epoch) {
    double sum = 0.0;
    std::size_t batches = 0;
    do {
      std::optional<double> e;
      if (run.energy_due(step)) e = run.energy(c.params);
      const Tensor x = run.source.next(cfg.batch, run.rng);
      Tape tape;
      auto p = tape.bind(c.params);
      auto elbo = vae::elbo_loss(p, spec, x, run.rng);
      const GradMap grads = tape.backward(elbo.total).named();
      check_step(run, step, elbo.total, grads);
      optim::adam_step(adam, c.params, grads);
      log->cells({std::to_string(step), std::to_string(epoch), csv::format(elbo.total.value().item()),
                  csv::format(elbo.recon.value().item()), csv::format(elbo.kl.value().item()), cell(e)});
      sum += elbo.total.value().item();
      ++batches;
      ++step;
    } while (!run.source.epoch_finished());
    c.epoch = epoch + 1;
    const bool snap = cfg.snapshot_every > 0 && c.epoch % cfg.snapshot_every == 0;
    if (snap) {
      log->flush();
      checkpoint(step, true);
    }
    run.note("epoch " + std::to_string(c.epoch) + " mean loss " + csv::format(sum / static_cast<double>(batches)));
  }
  log->cells({std::to_string(step), std::to_string(cfg.epochs), "", "", "", csv::format(run.energy(c.params))});
  log->flush();
  checkpoint(step, false);
}

void train_gan(Checkpoint& c, const RunOptions& opts) {
  const ExperimentConfig& cfg = c.config;
  Run run(c, opts);
  const auto spec = cfg.gan_spec(c.data_dim);
  const auto gcfg = cfg.gan_config();
  gan::GanModel model = gan::split(c.params);
  gan::GanOptimizers opt = gan::make_optimizers(gcfg);
  optim::import_state(opt.adam_d, c.state, "optim.adam_d.");
  optim::import_state(opt.adam_g, c.state, "optim.adam_g.");
  optim::import_state(opt.rms_d, c.state, "optim.rms_d.");
  optim::import_state(opt.rms_g, c.state, "optim.rms_g.");
  auto checkpoint = [&](std::size_t step, bool snapshot) {
    c.params = gan::merged(model);
    ParamStore state;
    if (spec.variant == gan::Variant::Bce) {
      optim::export_state(opt.adam_d, state, "optim.adam_d.");
      optim::export_state(opt.adam_g, state, "optim.adam_g.");
    } else {
      optim::export_state(opt.rms_d, state, "optim.rms_d.");
      optim::export_state(opt.rms_g, state, "optim.rms_g.");
    }
    run.save(step, std::move(state), snapshot);
  };
  checkpoint(c.step, false);

  gan::TrainOptions to;
  to.steps = cfg.steps;
  to.energy_every = cfg.energy_every;
  to.energy_samples = cfg.energy_samples;
  to.collapse_samples = kCollapseSamples;
  to.log_path = run.path("training_log.csv");
  to.start_step = c.step;
  if (c.step > 0) truncate_log(to.log_path, c.step);
  Rng collapse_rng = Rng(cfg.seed).split(kCollapseStream);
  to.collapse_threshold = 1e-3 * gan::diameter(run.source.draw(kCollapseSamples, collapse_rng));
  to.on_step = [&](std::size_t done) {
    if (cfg.snapshot_every > 0 && done % cfg.snapshot_every == 0) {
      checkpoint(done, true);
      run.note("step " + std::to_string(done));
    }
  };
  try {
    gan::train(model, spec, gcfg, opt, run.source, run.rng, run.eval_rng, to);
  } catch (const NonFiniteError& e) {
    throw NonFiniteError(std::string(e.what()) + "; checkpoint.dgm holds step " + std::to_string(run.last_saved));
  }
  checkpoint(cfg.steps, false);
}

Tensor chunked(const Tensor& x, const std::function<Tensor(const Tensor&)>& fn) {
  std::vector<double> out;
  out.reserve(x.rows());
  for (std::size_t begin = 0; begin < x.rows(); begin += kChunk) {
    const std::size_t end = std::min(x.rows(), begin + kChunk);
    std::vector<std::size_t> idx(end - begin);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
    const Tensor part = fn(gather_rows(x, idx));
    out.insert(out.end(), part.data(), part.data() + part.numel());
  }
  return Tensor(Shape{x.rows(), 1}, std::move(out));
}

void require_invertible(const Checkpoint& c, const std::string& what) {
  if (!invertible(c.config.kind())) {
    throw DomainError(what + ": model '" + c.config.model + "' has no tractable density or inverse");
  }
}

}  // namespace

data::BatchSource make_source(const ExperimentConfig& cfg) {
  const auto spec = cfg.dataset_spec();
  if (!spec.synthetic()) {
    auto idx = data::load_idx(spec.idx_images);
    Tensor x = std::move(idx.images);
    if (spec.binarize_threshold) x = data::binarize(x, *spec.binarize_threshold);
    if (cfg.train_size > 0 && cfg.train_size < x.rows()) {
      std::vector<std::size_t> rows(cfg.train_size);
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
      x = gather_rows(x, rows);
    }
    return data::BatchSource(std::move(x));
  }
  if (cfg.train_size > 0) {
    Rng rng = Rng(cfg.seed).split(kTrainSetStream);
    return data::BatchSource(data::sample_dataset(spec, cfg.train_size, rng));
  }
  return data::BatchSource(spec);
}

Checkpoint initialize(const ExperimentConfig& cfg) {
  cfg.validate();
  Checkpoint c;
  c.config = cfg;
  c.data_dim = cfg.dataset_spec().synthetic() ? 2 : make_source(cfg).dim();
  switch (cfg.kind()) {
    case ModelKind::RealNvp:
      c.params = flow::init(cfg.realnvp_spec(c.data_dim), cfg.seed);
      break;
    case ModelKind::CnfFree:
    case ModelKind::CnfPotential:
      c.params = cnf::init(cfg.cnf_spec(c.data_dim), cfg.seed);
      break;
    case ModelKind::Vae:
      c.params = vae::init(cfg.vae_spec(c.data_dim), cfg.seed);
      break;
    case ModelKind::GanBce:
    case ModelKind::GanWgan: {
      gan::GanModel m = gan::init(cfg.gan_spec(c.data_dim), cfg.seed);
      if (!cfg.warm_start.empty()) {
        const Checkpoint src = load_checkpoint(cfg.warm_start);
        if (src.config.kind() != ModelKind::Vae) {
          throw DomainError("warm_start: '" + cfg.warm_start + "' holds a " + src.config.model + " model, not a vae");
        }
        gan::warm_start(m, src.params);
      }
      c.params = gan::merged(m);
      break;
    }
  }
  const Rng base(cfg.seed);
  c.rng_state = base.split(kTrainStream).state();
  c.eval_rng_state = base.split(kEvalStream).state();
  return c;
}

Checkpoint train(Checkpoint start, const RunOptions& opts) {
  start.config.validate();
  const ModelKind kind = start.config.kind();
  if (kind == ModelKind::Vae) {
    train_vae(start, opts);
  } else if (is_gan(kind)) {
    train_gan(start, opts);
  } else {
    train_flow_family(start, opts);
  }
  return start;
}

Checkpoint train(const ExperimentConfig& cfg, const RunOptions& opts) { return train(initialize(cfg), opts); }

Tensor sample(const Checkpoint& c, std::size_t count, Rng& rng) {
  return sample_params(c.config, c.data_dim, c.params, count, rng);
}

Tensor log_density(const Checkpoint& c, const Tensor& x) {
  require_invertible(c, "log_density");
  if (x.cols() != c.data_dim) {
    throw ShapeError("log_density: points have " + std::to_string(x.cols()) + " columns, the model " +
                     std::to_string(c.data_dim));
  }
  return chunked(x, [&](const Tensor& part) {
    if (c.config.kind() == ModelKind::RealNvp) return flow::log_density(c.params, c.config.realnvp_spec(c.data_dim), part);
    return cnf::log_density(c.params, c.config.cnf_spec(c.data_dim), part, c.config.nt_eval);
  });
}

DensityGrid density_grid(const Checkpoint& c, const Grid& grid) {
  require_invertible(c, "density");
  if (c.data_dim != 2) throw DomainError("density: grids need two-dimensional data");
  grid.validate();
  DensityGrid d;
  d.grid = grid;
  d.log_density = log_density(c, grid.points());
  d.mass = riemann_mass(d.log_density, grid);
  return d;
}

void write_density_csv(const std::string& path, const DensityGrid& d) {
  csv::Writer w(path, {"x", "y", "log_density"});
  const Tensor pts = d.grid.points();
  for (std::size_t r = 0; r < pts.rows(); ++r) w.row({pts.at(r, 0), pts.at(r, 1), d.log_density[r]});
  w.comment("riemann_mass " + csv::format(d.mass));
  w.flush();
}

eval::EvalReport evaluate(const Checkpoint& c, const EvalOptions& opts) {
  const ExperimentConfig& cfg = c.config;
  const Rng base(opts.seed);
  Rng model_rng = base.split(1);
  Rng data_rng = base.split(2);
  const auto spec = cfg.dataset_spec();
  std::optional<data::BatchSource> source;
  if (!spec.synthetic()) source.emplace(make_source(cfg));
  auto reference = [&](std::size_t n) {
    return source ? source->draw(n, data_rng) : data::sample_dataset(spec, n, data_rng);
  };

  eval::EvalReport r;
  r.model = cfg.model;
  r.energy_samples = opts.energy_samples;
  const Tensor fake = sample(c, opts.energy_samples, model_rng);
  r.energy_stat = eval::energy_statistic(fake, reference(opts.energy_samples));
  if (opts.w1_samples > 0) {
    const Tensor a = sample(c, opts.w1_samples, model_rng);
    r.exact_w1 = eval::exact_w1(a, reference(opts.w1_samples));
  }
  if (invertible(cfg.kind())) {
    const Tensor lp = log_density(c, reference(opts.nll_samples));
    r.nll = -mean(lp).item();
    eval::Map fwd, inv;
    if (cfg.kind() == ModelKind::RealNvp) {
      const auto s = cfg.realnvp_spec(c.data_dim);
      fwd = [&, s](const Tensor& z) { return flow::flow_forward(eager(c.params), s, z).y; };
      inv = [&, s](const Tensor& x) { return flow::flow_inverse(eager(c.params), s, x).y; };
    } else {
      const auto s = cfg.cnf_spec(c.data_dim);
      fwd = [&, s](const Tensor& z) { return cnf::cnf_forward(c.params, s, z, cfg.nt_eval); };
      inv = [&, s](const Tensor& x) { return cnf::cnf_inverse(c.params, s, x, cfg.nt_eval).z; };
    }
    const Tensor z = data::sample_latent(c.data_dim, opts.inverse_samples, model_rng);
    r.inverse = eval::inverse_consistency(fwd, inv, z, reference(opts.inverse_samples));
  }
  if (spec.kind == data::DatasetKind::Moons && opts.energy_samples > 0) {
    r.moments = eval::moment_diagnostics(fake, eval::MomentTarget::Moons, cfg.noise);
  }
  return r;
}

std::size_t parameter_count(const Checkpoint& c) { return c.params.scalar_count(true); }

std::string info(const Checkpoint& c) {
  std::ostringstream os;
  os << "model: " << c.config.model << "\n";
  os << "parameters: " << parameter_count(c) << "\n";
  if (is_gan(c.config.kind())) {
    const auto m = gan::split(c.params);
    os << "generator parameters: " << m.g.scalar_count(true) << "\n";
    os << "discriminator parameters: " << m.d.scalar_count(true) << "\n";
  }
  os << "data_dim: " << c.data_dim << "\n";
  os << "step: " << c.step << "\n";
  if (c.config.kind() == ModelKind::Vae) os << "epoch: " << c.epoch << "\n";
  os << "config:\n" << to_json(c.config) << "\n";
  return os.str();
}

}  // namespace dgm::app
