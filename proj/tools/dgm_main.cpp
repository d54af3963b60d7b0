#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dgm/csv.hpp"
#include "dgm/error.hpp"
#include "dgm/experiment.hpp"

namespace fs = std::filesystem;
using namespace dgm;

namespace {

Grid parse_bounds(const std::string& text, std::size_t resolution) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw DomainError("--bounds: '" + part + "' is not a number");
    }
  }
  if (v.size() != 4) throw DomainError("--bounds expects xmin,xmax,ymin,ymax");
  Grid g{v[0], v[1], v[2], v[3], resolution, resolution};
  g.validate();
  return g;
}

std::string out_file(const std::string& dir, const std::string& name) {
  fs::create_directories(dir);
  return (fs::path(dir) / name).string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep generative models on small data: train, sample, density, eval, info"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, out_dir, bounds = "-4,4,-4,4";
  std::optional<std::uint64_t> seed;
  std::size_t count = 1000, resolution = 200, energy_samples = 5000, w1_samples = 256;
  bool quiet = false;

  auto* train = app.add_subcommand("train", "Train a model from a JSON config");
  train->add_option("--config", config_path, "Experiment config (JSON)")->required();
  train->add_option("--checkpoint", checkpoint_path, "Resume from this checkpoint");
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--out", out_dir, "Output directory (default: config out_dir)");
  train->add_flag("--quiet", quiet, "No progress lines");

  auto* sample = app.add_subcommand("sample", "Draw samples to samples.csv");
  sample->add_option("--checkpoint", checkpoint_path)->required();
  sample->add_option("--count", count, "Number of samples")->capture_default_str();
  sample->add_option("--seed", seed, "Latent seed (default 0)");
  sample->add_option("--out", out_dir, "Output directory")->default_str(".");

  auto* density = app.add_subcommand("density", "Log-density on a grid to density_grid.csv");
  density->add_option("--checkpoint", checkpoint_path)->required();
  density->add_option("--bounds", bounds, "xmin,xmax,ymin,ymax")->capture_default_str();
  density->add_option("--resolution", resolution, "Cells per axis")->capture_default_str();
  density->add_option("--out", out_dir, "Output directory");

  auto* evaluate = app.add_subcommand("eval", "Evaluation report to report.json");
  evaluate->add_option("--checkpoint", checkpoint_path)->required();
  evaluate->add_option("--seed", seed, "Evaluation seed (default 0)");
  evaluate->add_option("--count", energy_samples, "Samples per side of the energy statistic")
      ->capture_default_str();
  evaluate->add_option("--w1-count", w1_samples, "Samples per side of exact W1 (0 skips)")->capture_default_str();
  evaluate->add_option("--out", out_dir, "Output directory");

  auto* info = app.add_subcommand("info", "Print model kind, parameter count and config");
  info->add_option("--checkpoint", checkpoint_path)->required();

  CLI11_PARSE(app, argc, argv);
  if (out_dir.empty()) out_dir = ".";

  try {
    if (train->parsed()) {
      app::ExperimentConfig cfg = app::load_config(config_path);
      if (seed) cfg.seed = *seed;
      app::RunOptions opts;
      opts.out_dir = train->count("--out") ? out_dir : cfg.out_dir;
      if (!quiet) opts.progress = [](const std::string& s) { std::cerr << s << "\n"; };
      app::Checkpoint start;
      if (!checkpoint_path.empty()) {
        start = app::load_checkpoint(checkpoint_path);
        if (!(start.config == cfg)) throw app::ConfigError("--checkpoint was written with a different config");
      } else {
        start = app::initialize(cfg);
      }
      const auto done = app::train(std::move(start), opts);
      std::cout << "trained " << done.config.model << " to step " << done.step << "; wrote "
                << (fs::path(opts.out_dir) / "checkpoint.dgm").string() << "\n";
    } else if (sample->parsed()) {
      const auto c = app::load_checkpoint(checkpoint_path);
      Rng rng(seed.value_or(0));
      const Tensor x = app::sample(c, count, rng);
      std::vector<std::string> header;
      for (std::size_t j = 0; j < c.data_dim; ++j) header.push_back("x" + std::to_string(j));
      csv::write_matrix(out_file(out_dir, "samples.csv"), header, x);
    } else if (density->parsed()) {
      const auto c = app::load_checkpoint(checkpoint_path);
      const auto d = app::density_grid(c, parse_bounds(bounds, resolution));
      app::write_density_csv(out_file(out_dir, "density_grid.csv"), d);
      std::cout << "riemann mass " << csv::format(d.mass) << "\n";
    } else if (evaluate->parsed()) {
      const auto c = app::load_checkpoint(checkpoint_path);
      app::EvalOptions opts;
      opts.seed = seed.value_or(0);
      opts.energy_samples = energy_samples;
      opts.w1_samples = w1_samples;
      const std::string json = eval::to_json(app::evaluate(c, opts));
      std::ofstream(out_file(out_dir, "report.json"), std::ios::binary) << json;
      std::cout << json;
    } else if (info->parsed()) {
      std::cout << app::info(app::load_checkpoint(checkpoint_path));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
