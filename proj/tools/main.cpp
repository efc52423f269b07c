// Command-line front end.  Every subcommand builds an ExperimentConfig,
// hands it to run_experiment, and exits 0 on success, 2 on a config
// problem, 1 on a runtime failure.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "lsgp/experiment.hpp"

namespace {

using lsgp::ExperimentConfig;

void add_common(CLI::App* cmd, ExperimentConfig& c) {
  cmd->add_option("--out", c.out_dir, "output directory (created if absent)")->required();
  cmd->add_option("--seed", c.seed, "RNG seed");
}

void add_dataset(CLI::App* cmd, ExperimentConfig& c) {
  cmd->add_option("--coords", c.coords, "vertex coordinates CSV (id,x,y,...)");
  cmd->add_option("--signals", c.signals, "realizations CSV (one column per realization)");
  cmd->add_option("--knn", c.knn, "neighbours for the k-NN graph");
  cmd->add_option("--knn-width", c.knn_width, "Gaussian edge-weight width (0: auto)");
}

void add_learner(CLI::App* cmd, ExperimentConfig& c) {
  cmd->add_option("--order", c.order, "number of components K");
  cmd->add_option("--degree", c.degree, "polynomial kernel degree bound Q");
  cmd->add_option("--mu1", c.mu1, "membership smoothness weight");
  cmd->add_option("--mu2", c.mu2, "trace (rank) penalty on the coefficient block matrix");
  cmd->add_option("--mu3", c.mu3, "trace (rank) penalty on the membership block matrix");
  cmd->add_option("--outer-iters", c.outer_iters, "alternation rounds");
  cmd->add_option("--inner-iters", c.inner_iters, "projected-gradient iterations per step");
  cmd->add_option("--inner-tol", c.inner_tol, "inner stationarity tolerance");
  cmd->add_option("--outer-tol", c.outer_tol, "relative objective-change stop");
}

void add_missing(CLI::App* cmd, ExperimentConfig& c) {
  cmd->add_option("--ratio", c.ratio, "fraction of vertices hidden per realization");
  cmd->add_option("--pattern", c.pattern, "random | structured-clique");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"locally stationary graph process toolkit"};
  app.set_version_flag("--version", lsgp::version_string);
  app.require_subcommand(1);

  ExperimentConfig cfg;
  std::string config_path;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, cfg);
  synth->add_option("--kind", cfg.synth_kind, "blocks | planted");
  synth->add_option("--blocks", cfg.blocks, "number of blocks (and kernels)");
  synth->add_option("--block-size", cfg.block_size, "vertices per block");
  synth->add_option("--synth-knn", cfg.synth_knn, "intra-block k-NN neighbours");
  synth->add_option("--inside", cfg.inside, "membership value on the own block");
  synth->add_option("--outside", cfg.outside, "membership magnitude off the block");
  synth->add_option("--inter-edges", cfg.inter_edges, "cross-block edges (0: 3*blocks)");
  synth->add_option("--kernel-width-scale", cfg.kernel_width_scale,
                    "spectral bump width multiplier");
  synth->add_option("--kernel-smoothness", cfg.kernel_smoothness, "bump smoothness exponent");
  synth->add_option("--nmi-grid", cfg.nmi_grid,
                    "outside values; emits partition-recovery NMI per value");
  synth->add_option("--theta", cfg.theta, "covariance distance scale for the NMI grid");
  synth->add_option("--n", cfg.n_vertices, "vertex count (planted kind)");
  synth->add_option("--knn", cfg.knn, "graph neighbours (planted kind)");
  synth->add_option("--order", cfg.order, "components K (planted kind)");
  synth->add_option("--degree", cfg.degree, "kernel degree (planted kind)");
  synth->add_option("--realizations", cfg.realizations, "sample this many realizations");
  synth->add_option("--snr-db", cfg.snr_db, "additive noise level for sampled signals");
  add_missing(synth, cfg);

  CLI::App* learn = app.add_subcommand("learn", "fit a model to observed realizations");
  add_common(learn, cfg);
  add_dataset(learn, cfg);
  add_learner(learn, cfg);
  learn->add_option("--true-model", cfg.true_model_path,
                    "reference model JSON for covariance-discrepancy scoring");

  CLI::App* interp = app.add_subcommand("interpolate", "hide entries and reconstruct them");
  add_common(interp, cfg);
  add_dataset(interp, cfg);
  add_missing(interp, cfg);
  interp->add_option("--method", cfg.method, "covariance source: sc | lsgp | model");
  interp->add_option("--model", cfg.model_path, "model JSON (method=model)");
  add_learner(interp, cfg);

  CLI::App* part = app.add_subcommand("partition", "covariance-driven graph partition");
  add_common(part, cfg);
  add_dataset(part, cfg);
  part->add_option("--parts", cfg.parts, "number of parts K");
  part->add_option("--theta", cfg.theta, "covariance distance scale (0: median heuristic)");
  part->add_option("--model", cfg.model_path,
                   "model JSON; its covariance replaces the sample estimate");
  part->add_option("--labels", cfg.labels_path, "ground-truth partition CSV for NMI");

  CLI::App* local = app.add_subcommand("local-approx",
                                       "partition, then fit one stationary model per part");
  add_common(local, cfg);
  add_dataset(local, cfg);
  local->add_option("--parts", cfg.parts, "number of parts K");
  local->add_option("--theta", cfg.theta, "covariance distance scale (0: median heuristic)");
  local->add_option("--labels", cfg.labels_path, "ground-truth partition CSV for NMI");
  add_learner(local, cfg);
  add_missing(local, cfg);

  CLI::App* verify = app.add_subcommand("verify-bounds",
                                        "check the approximation bounds on a model");
  add_common(verify, cfg);
  verify->add_option("--instances", cfg.instances,
                     "run this many random localized models instead of file inputs");
  verify->add_option("--coords", cfg.coords, "vertex coordinates CSV");
  verify->add_option("--knn", cfg.knn, "neighbours for the k-NN graph");
  verify->add_option("--knn-width", cfg.knn_width, "Gaussian edge-weight width (0: auto)");
  verify->add_option("--model", cfg.model_path, "model JSON");
  verify->add_option("--partition", cfg.partition_path, "partition CSV");

  CLI::App* sweep = app.add_subcommand("sweep", "rerun a task over a parameter grid");
  add_common(sweep, cfg);
  sweep->add_option("--param", cfg.sweep_param, "config field to vary")->required();
  sweep->add_option("--values", cfg.sweep_values, "grid values")->required();
  sweep->add_option("--task", cfg.sweep_task, "task to run per grid point")->required();
  add_dataset(sweep, cfg);
  add_learner(sweep, cfg);
  add_missing(sweep, cfg);
  sweep->add_option("--method", cfg.method, "covariance source for interpolate");
  sweep->add_option("--parts", cfg.parts, "number of parts K");
  sweep->add_option("--theta", cfg.theta, "covariance distance scale");
  sweep->add_option("--labels", cfg.labels_path, "ground-truth partition CSV");
  sweep->add_option("--model", cfg.model_path, "model JSON");
  sweep->add_option("--snr-db", cfg.snr_db, "noise level for synth grids");

  CLI::App* run = app.add_subcommand("run", "run a task from a JSON config document");
  run->add_option("--config", config_path, "config JSON; keys mirror the flags")
      ->required()
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (run->parsed()) {
      cfg = lsgp::config_from_json(lsgp::detail::read_json_file(config_path));
    } else if (synth->parsed()) cfg.task = "synth";
    else if (learn->parsed()) cfg.task = "learn";
    else if (interp->parsed()) cfg.task = "interpolate";
    else if (part->parsed()) cfg.task = "partition";
    else if (local->parsed()) cfg.task = "local-approx";
    else if (verify->parsed()) cfg.task = "verify-bounds";
    else if (sweep->parsed()) cfg.task = "sweep";
    lsgp::run_experiment(cfg);
  } catch (const lsgp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
