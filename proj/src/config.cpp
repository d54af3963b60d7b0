#include "dgm/config.hpp"

#include <fstream>
#include <sstream>
#include <type_traits>

#include <json.hpp>

namespace dgm::app {

using nlohmann::json;

std::string model_name(ModelKind k) {
  switch (k) {
    case ModelKind::RealNvp: return "realnvp";
    case ModelKind::CnfFree: return "cnf_free";
    case ModelKind::CnfPotential: return "cnf_potential";
    case ModelKind::Vae: return "vae";
    case ModelKind::GanBce: return "gan_bce";
    case ModelKind::GanWgan: return "gan_wgan";
  }
  return "realnvp";
}

ModelKind model_from_name(const std::string& name) {
  for (auto k : {ModelKind::RealNvp, ModelKind::CnfFree, ModelKind::CnfPotential, ModelKind::Vae, ModelKind::GanBce,
                 ModelKind::GanWgan}) {
    if (model_name(k) == name) return k;
  }
  throw ConfigError("config key 'model': unknown model '" + name + "'");
}

bool invertible(ModelKind k) {
  return k == ModelKind::RealNvp || k == ModelKind::CnfFree || k == ModelKind::CnfPotential;
}

namespace {

// Calls f(key, member) for every field in a fixed order.
template <class C, class F>
void visit_fields(C& c, F&& f) {
  f("model", c.model);
  f("dataset", c.dataset);
  f("noise", c.noise);
  f("mixture_k", c.mixture_k);
  f("mixture_radius", c.mixture_radius);
  f("mixture_std", c.mixture_std);
  f("idx_images", c.idx_images);
  f("idx_labels", c.idx_labels);
  f("binarize_threshold", c.binarize_threshold);
  f("train_size", c.train_size);
  f("seed", c.seed);
  f("steps", c.steps);
  f("epochs", c.epochs);
  f("batch", c.batch);
  f("lr", c.lr);
  f("beta1", c.beta1);
  f("beta2", c.beta2);
  f("weight_decay", c.weight_decay);
  f("energy_every", c.energy_every);
  f("energy_samples", c.energy_samples);
  f("snapshot_every", c.snapshot_every);
  f("hidden", c.hidden);
  f("depth", c.depth);
  f("activation", c.activation);
  f("slope", c.slope);
  f("layers", c.layers);
  f("s_bound", c.s_bound);
  f("width", c.width);
  f("rank", c.rank);
  f("latent_dim", c.latent_dim);
  f("d_hidden", c.d_hidden);
  f("d_depth", c.d_depth);
  f("gan_output", c.gan_output);
  f("T", c.T);
  f("nt_train", c.nt_train);
  f("nt_eval", c.nt_eval);
  f("alpha", c.alpha);
  f("lambda_hjb", c.lambda_hjb);
  f("likelihood", c.likelihood);
  f("sigma", c.sigma);
  f("n_critic", c.n_critic);
  f("clip", c.clip);
  f("saturating", c.saturating);
  f("rms_rho", c.rms_rho);
  f("warm_start", c.warm_start);
  f("out_dir", c.out_dir);
}

template <class V>
void assign(const std::string& key, const json& j, V& out) {
  auto bad = [&](const char* want) {
    return ConfigError("config key '" + key + "': expected " + want + ", got " + j.dump());
  };
  if constexpr (std::is_same_v<V, std::string>) {
    if (!j.is_string()) throw bad("a string");
    out = j.get<std::string>();
  } else if constexpr (std::is_same_v<V, bool>) {
    if (!j.is_boolean()) throw bad("true or false");
    out = j.get<bool>();
  } else if constexpr (std::is_same_v<V, double>) {
    if (!j.is_number()) throw bad("a number");
    out = j.get<double>();
  } else if constexpr (std::is_same_v<V, std::optional<double>>) {
    if (j.is_null()) {
      out.reset();
    } else if (j.is_number()) {
      out = j.get<double>();
    } else {
      throw bad("a number or null");
    }
  } else {
    if (!j.is_number_unsigned()) throw bad("a non-negative integer");
    out = j.get<V>();
  }
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("config key '" + key + "': " + what);
}

template <class F>
void check_name(const std::string& key, F&& parse) {
  try {
    parse();
  } catch (const Error& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

}  // namespace

ExperimentConfig defaults_for(ModelKind kind) {
  ExperimentConfig c;
  c.model = model_name(kind);
  switch (kind) {
    case ModelKind::RealNvp:
      break;
    case ModelKind::CnfFree:
    case ModelKind::CnfPotential:
      c.lr = 1e-2;
      c.hidden = 32;
      c.activation = "tanh";
      if (kind == ModelKind::CnfFree) c.lambda_hjb = 0.0;
      break;
    case ModelKind::Vae:
      c.train_size = 10000;
      c.batch = 64;
      c.weight_decay = 1e-5;
      c.slope = 0.2;
      c.energy_every = 0;
      break;
    case ModelKind::GanBce:
    case ModelKind::GanWgan:
      c.steps = 5000;
      c.batch = 64;
      c.lr = 2e-4;
      c.beta1 = 0.5;
      c.slope = 0.2;
      c.energy_every = 100;
      if (kind == ModelKind::GanWgan) c.n_critic = 5;
      break;
  }
  return c;
}

void ExperimentConfig::validate() const {
  const ModelKind k = kind();
  check_name("dataset", [&] { data::kind_from_name(dataset); });
  require(batch > 0, "batch", "must be at least 1");
  require(lr > 0.0, "lr", "must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0, "beta1", "must lie in [0, 1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "beta2", "must lie in [0, 1)");
  require(weight_decay >= 0.0, "weight_decay", "must be non-negative");
  require(energy_samples > 0, "energy_samples", "must be at least 1");
  require(noise >= 0.0, "noise", "must be non-negative");
  require(T > 0.0, "T", "must be positive");
  require(nt_train > 0 && nt_eval > 0, "nt_train", "integration steps must be positive");
  require(alpha > 0.0, "alpha", "must be positive");
  require(lambda_hjb >= 0.0, "lambda_hjb", "must be non-negative");
  require(sigma > 0.0, "sigma", "must be positive");
  require(n_critic > 0, "n_critic", "must be at least 1");
  require(clip > 0.0, "clip", "must be positive");
  require(gan_output == "identity" || gan_output == "sigmoid", "gan_output", "must be identity or sigmoid");
  check_name("likelihood", [&] { vae::likelihood_from_name(likelihood); });
  check_name("activation", [&] { nn::activation_from_name(activation); });
  if (dataset == "idx_images") require(!idx_images.empty(), "idx_images", "path required for idx_images");
  if (k == ModelKind::Vae) {
    require(train_size > 0 || dataset == "idx_images", "train_size", "the vae family trains in epochs over a fixed set");
    require(epochs > 0 || steps == 0, "epochs", "must be at least 1");
  }
  if (!warm_start.empty()) {
    require(k == ModelKind::GanBce || k == ModelKind::GanWgan, "warm_start", "only GAN models can be warm-started");
  }
}

data::DatasetSpec ExperimentConfig::dataset_spec() const {
  data::DatasetSpec s;
  s.kind = data::kind_from_name(dataset);
  s.noise = noise;
  s.mixture_k = mixture_k;
  s.mixture_radius = mixture_radius;
  s.mixture_std = mixture_std;
  s.idx_images = idx_images;
  s.idx_labels = idx_labels;
  s.binarize_threshold = binarize_threshold;
  return s;
}

flow::RealNvpSpec ExperimentConfig::realnvp_spec(std::size_t data_dim) const {
  flow::RealNvpSpec s;
  s.dim = data_dim;
  s.layers = layers;
  s.hidden = hidden;
  s.depth = depth;
  s.slope = slope;
  s.s_bound = s_bound;
  return s;
}

cnf::CnfSpec ExperimentConfig::cnf_spec(std::size_t data_dim) const {
  cnf::CnfSpec s;
  s.dim = data_dim;
  s.mode = kind() == ModelKind::CnfFree ? cnf::Mode::FreeForm : cnf::Mode::Potential;
  s.width = width;
  s.rank = rank;
  s.hidden = hidden;
  s.depth = depth;
  s.activation = nn::activation_from_name(activation);
  s.T = T;
  return s;
}

vae::VaeSpec ExperimentConfig::vae_spec(std::size_t data_dim) const {
  vae::VaeSpec s;
  s.data_dim = data_dim;
  s.latent_dim = latent_dim;
  s.hidden = hidden;
  s.depth = depth;
  s.activation = nn::activation_from_name(activation);
  s.slope = slope;
  s.likelihood.kind = vae::likelihood_from_name(likelihood);
  s.likelihood.sigma = sigma;
  return s;
}

gan::GanSpec ExperimentConfig::gan_spec(std::size_t data_dim) const {
  gan::GanSpec s;
  s.variant = kind() == ModelKind::GanWgan ? gan::Variant::Wgan : gan::Variant::Bce;
  s.data_dim = data_dim;
  s.latent_dim = latent_dim;
  s.g_hidden = hidden;
  s.g_depth = depth;
  s.g_activation = nn::activation_from_name(activation);
  s.g_slope = slope;
  s.g_output = nn::activation_from_name(gan_output);
  s.d_hidden = d_hidden;
  s.d_depth = d_depth;
  s.d_slope = slope;
  return s;
}

gan::GanConfig ExperimentConfig::gan_config() const {
  gan::GanConfig g;
  g.lr_g = g.lr_d = lr;
  g.beta1 = beta1;
  g.beta2 = beta2;
  g.n_critic = n_critic;
  g.clip = clip;
  g.batch = batch;
  g.saturating = saturating;
  g.rms_rho = rms_rho;
  return g;
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::string model = "realnvp";
  if (j.contains("model")) assign("model", j["model"], model);
  ExperimentConfig c = defaults_for(model_from_name(model));
  for (const auto& [key, value] : j.items()) {
    bool found = false;
    visit_fields(c, [&](const char* name, auto& member) {
      if (key == name) {
        assign(key, value, member);
        found = true;
      }
    });
    if (!found) throw ConfigError("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_json(const ExperimentConfig& c) {
  json j = json::object();
  visit_fields(c, [&](const char* name, const auto& member) {
    using V = std::decay_t<decltype(member)>;
    if constexpr (std::is_same_v<V, std::optional<double>>) {
      j[name] = member ? json(*member) : json(nullptr);
    } else {
      j[name] = member;
    }
  });
  return j.dump(2);
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return to_json(a) == to_json(b); }

}  // namespace dgm::app
