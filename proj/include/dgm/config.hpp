#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include "dgm/cnf.hpp"
#include "dgm/data.hpp"
#include "dgm/error.hpp"
#include "dgm/flow_realnvp.hpp"
#include "dgm/gan.hpp"
#include "dgm/vae.hpp"

namespace dgm::app {

enum class ModelKind { RealNvp, CnfFree, CnfPotential, Vae, GanBce, GanWgan };

std::string model_name(ModelKind k);
ModelKind model_from_name(const std::string& name);
bool invertible(ModelKind k);

class ConfigError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Flat experiment description. Keys that depend on the model family take
/// the family's default unless set; see defaults_for().
struct ExperimentConfig {
  std::string model = "realnvp";

  // data
  std::string dataset = "moons";
  double noise = 0.1;
  std::size_t mixture_k = 8;
  double mixture_radius = 2.0;
  double mixture_std = 0.05;
  std::string idx_images;
  std::string idx_labels;
  std::optional<double> binarize_threshold;
  /// 0 draws fresh synthetic samples every step; otherwise a fixed
  /// training set of this many rows (IDX data always uses the file).
  std::size_t train_size = 0;

  // schedule
  std::uint64_t seed = 0;
  std::size_t steps = 20000;
  /// Epoch count for the vae family (steps is ignored there).
  std::size_t epochs = 50;
  std::size_t batch = 256;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  /// Energy statistic cadence in steps (0 = only the final row).
  std::size_t energy_every = 1000;
  std::size_t energy_samples = 1000;
  /// Periodic checkpoint cadence in steps, or epochs for the vae family
  /// (0 = none).
  std::size_t snapshot_every = 0;

  // architecture
  std::size_t hidden = 128;
  std::size_t depth = 2;
  std::string activation = "leaky_relu";
  double slope = 0.01;
  std::size_t layers = 6;
  double s_bound = 5.0;
  std::size_t width = 32;
  std::size_t rank = 0;
  std::size_t latent_dim = 2;
  std::size_t d_hidden = 256;
  std::size_t d_depth = 2;
  std::string gan_output = "identity";

  // regularization and integration
  double T = 1.0;
  std::size_t nt_train = 8;
  std::size_t nt_eval = 32;
  double alpha = 1.0;
  double lambda_hjb = 0.05;
  std::string likelihood = "gaussian";
  double sigma = 0.05;
  std::size_t n_critic = 1;
  double clip = 0.01;
  bool saturating = true;
  double rms_rho = 0.99;
  /// VAE checkpoint whose generator seeds a GAN ("" for random init).
  std::string warm_start;

  /// Directory for the log, checkpoint and snapshots (--out overrides).
  std::string out_dir = "run";

  ModelKind kind() const { return model_from_name(model); }
  /// Rejects inconsistent values with a message naming the key.
  void validate() const;

  data::DatasetSpec dataset_spec() const;
  flow::RealNvpSpec realnvp_spec(std::size_t data_dim) const;
  cnf::CnfSpec cnf_spec(std::size_t data_dim) const;
  vae::VaeSpec vae_spec(std::size_t data_dim) const;
  gan::GanSpec gan_spec(std::size_t data_dim) const;
  gan::GanConfig gan_config() const;
};

/// Defaults of one model family.
ExperimentConfig defaults_for(ModelKind kind);

/// Parses a JSON object: "model" selects the defaults, every other key
/// overrides one field, unknown keys and wrong types are rejected.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);

/// Every field, pretty-printed; parse_config(to_json(c)) == c.
std::string to_json(const ExperimentConfig& c);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace dgm::app
