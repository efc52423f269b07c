#pragma once

// Config-driven experiment pipelines behind the command-line tool.
//
// Every run reads one config (flags or a JSON document with the same keys),
// writes its outputs under out_dir, and echoes the effective config plus
// seed and version into manifest.json.  All outputs are deterministic
// functions of (config, seed): reruns produce byte-identical files.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsgp/bounds.hpp"
#include "lsgp/estimation.hpp"
#include "lsgp/graph.hpp"
#include "lsgp/learner.hpp"
#include "lsgp/metrics.hpp"
#include "lsgp/model.hpp"
#include "lsgp/partition.hpp"
#include "lsgp/synthetic.hpp"
#include "lsgp/version.hpp"

namespace lsgp {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
  std::string task;  // synth|learn|interpolate|partition|local-approx|verify-bounds|sweep
  std::string out_dir;
  std::uint64_t seed = 0;

  // dataset inputs
  std::string coords;
  std::string signals;
  std::string model_path;
  std::string true_model_path;
  std::string labels_path;     // ground-truth partition for NMI scoring
  std::string partition_path;  // partition input for verify-bounds
  int knn = 5;
  double knn_width = 0.0;  // 0: mean squared distance to the k-th neighbour

  // synth
  std::string synth_kind = "blocks";  // blocks | planted
  int blocks = 5;
  int block_size = 60;
  int synth_knn = 7;
  double inside = 1.0;
  double outside = 0.1;
  int inter_edges = 0;  // 0: defaults to 3 * blocks
  double kernel_width_scale = 1.0;
  int kernel_smoothness = 1;
  std::vector<double> nmi_grid;  // outside-value grid; emits one NMI row each
  int n_vertices = 36;           // planted kind
  int realizations = 0;          // when > 0, sample and write signals.csv
  std::optional<double> snr_db;

  // learner
  int order = 2;
  int degree = 3;
  double mu1 = 1e-6;
  double mu2 = 1e-5;
  double mu3 = 1e-6;
  int outer_iters = 20;
  int inner_iters = 200;
  double inner_tol = 1e-6;
  double outer_tol = 1e-5;

  // missing data
  std::string pattern = "random";  // random | structured-clique
  double ratio = 0.0;

  // interpolate
  std::string method = "sc";  // sc | lsgp | model

  // partition
  int parts = 2;
  double theta = 0.0;  // 0: median heuristic

  // verify-bounds
  int instances = 0;  // when > 0, run the randomized suite instead of file inputs

  // sweep
  std::string sweep_param;
  std::vector<double> sweep_values;
  std::string sweep_task;
};

inline LearnerConfig learner_config(const ExperimentConfig& c) {
  LearnerConfig cfg;
  cfg.order = c.order;
  cfg.degree = c.degree;
  cfg.mu1 = c.mu1;
  cfg.mu2 = c.mu2;
  cfg.mu3 = c.mu3;
  cfg.outer_iters = c.outer_iters;
  cfg.inner_iters = c.inner_iters;
  cfg.inner_tol = c.inner_tol;
  cfg.outer_tol = c.outer_tol;
  cfg.seed = c.seed;
  return cfg;
}

// --- config (de)serialization --------------------------------------------

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["task"] = c.task;
  j["out_dir"] = c.out_dir;
  j["seed"] = c.seed;
  j["coords"] = c.coords;
  j["signals"] = c.signals;
  j["model_path"] = c.model_path;
  j["true_model_path"] = c.true_model_path;
  j["labels_path"] = c.labels_path;
  j["partition_path"] = c.partition_path;
  j["knn"] = c.knn;
  j["knn_width"] = c.knn_width;
  j["synth_kind"] = c.synth_kind;
  j["blocks"] = c.blocks;
  j["block_size"] = c.block_size;
  j["synth_knn"] = c.synth_knn;
  j["inside"] = c.inside;
  j["outside"] = c.outside;
  j["inter_edges"] = c.inter_edges;
  j["kernel_width_scale"] = c.kernel_width_scale;
  j["kernel_smoothness"] = c.kernel_smoothness;
  j["nmi_grid"] = c.nmi_grid;
  j["n_vertices"] = c.n_vertices;
  j["realizations"] = c.realizations;
  if (c.snr_db) j["snr_db"] = *c.snr_db;
  j["order"] = c.order;
  j["degree"] = c.degree;
  j["mu1"] = c.mu1;
  j["mu2"] = c.mu2;
  j["mu3"] = c.mu3;
  j["outer_iters"] = c.outer_iters;
  j["inner_iters"] = c.inner_iters;
  j["inner_tol"] = c.inner_tol;
  j["outer_tol"] = c.outer_tol;
  j["pattern"] = c.pattern;
  j["ratio"] = c.ratio;
  j["method"] = c.method;
  j["parts"] = c.parts;
  j["theta"] = c.theta;
  j["instances"] = c.instances;
  j["sweep_param"] = c.sweep_param;
  j["sweep_values"] = c.sweep_values;
  j["sweep_task"] = c.sweep_task;
  return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  const nlohmann::json defaults = config_to_json(c);
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!defaults.contains(key) && key != "snr_db")
      throw ConfigError("unknown config key: " + key);
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("task", c.task);
  get("out_dir", c.out_dir);
  get("seed", c.seed);
  get("coords", c.coords);
  get("signals", c.signals);
  get("model_path", c.model_path);
  get("true_model_path", c.true_model_path);
  get("labels_path", c.labels_path);
  get("partition_path", c.partition_path);
  get("knn", c.knn);
  get("knn_width", c.knn_width);
  get("synth_kind", c.synth_kind);
  get("blocks", c.blocks);
  get("block_size", c.block_size);
  get("synth_knn", c.synth_knn);
  get("inside", c.inside);
  get("outside", c.outside);
  get("inter_edges", c.inter_edges);
  get("kernel_width_scale", c.kernel_width_scale);
  get("kernel_smoothness", c.kernel_smoothness);
  get("nmi_grid", c.nmi_grid);
  get("n_vertices", c.n_vertices);
  get("realizations", c.realizations);
  if (j.contains("snr_db")) c.snr_db = j.at("snr_db").get<double>();
  get("order", c.order);
  get("degree", c.degree);
  get("mu1", c.mu1);
  get("mu2", c.mu2);
  get("mu3", c.mu3);
  get("outer_iters", c.outer_iters);
  get("inner_iters", c.inner_iters);
  get("inner_tol", c.inner_tol);
  get("outer_tol", c.outer_tol);
  get("pattern", c.pattern);
  get("ratio", c.ratio);
  get("method", c.method);
  get("parts", c.parts);
  get("theta", c.theta);
  get("instances", c.instances);
  get("sweep_param", c.sweep_param);
  get("sweep_values", c.sweep_values);
  get("sweep_task", c.sweep_task);
  return c;
}

// --- dataset plumbing -----------------------------------------------------

struct GraphParams {
  int knn = 5;
  double width = 0.0;
};

inline std::pair<Graph, RealizationSet> load_dataset(const std::string& coords_csv,
                                                     const std::string& signals_csv,
                                                     const GraphParams& params) {
  const Eigen::MatrixXd points = read_coordinates(coords_csv);
  Graph g = build_knn_graph(points, params.knn, params.width);
  RealizationSet set = read_realizations(signals_csv);
  if (set.size() != g.size())
    throw std::runtime_error("signals have " + std::to_string(set.size()) +
                             " vertices but the graph has " + std::to_string(g.size()));
  return {std::move(g), std::move(set)};
}

// Removes entries per the requested pattern: "random" drops a uniform
// vertex sample per realization; "structured-clique" drops a BFS-grown
// connected neighbourhood around a random center per realization.
inline RealizationSet inject_missingness(const RealizationSet& r,
                                         const std::string& pattern, double ratio,
                                         std::uint64_t seed, const Graph& g) {
  if (ratio < 0.0 || ratio >= 1.0) throw ConfigError("ratio must be in [0,1)");
  if (pattern != "random" && pattern != "structured-clique")
    throw ConfigError("pattern must be 'random' or 'structured-clique'");
  const int n = r.size();
  const int count = static_cast<int>(std::ceil(ratio * n));
  if (count == 0) return r;
  if (count >= n) throw ConfigError("ratio leaves no observed vertices");

  RealizationSet out = r;
  Rng rng(seed);
  const auto adj = g.adjacency();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int l = 0; l < r.count(); ++l) {
    if (pattern == "random") {
      const std::vector<int> perm = rng.permutation(n);
      for (int i = 0; i < count; ++i) out.values(perm[i], l) = nan;
    } else {
      const int center = static_cast<int>(rng.index(n));
      std::vector<char> seen(n, 0);
      std::vector<int> ball;
      std::queue<int> q;
      q.push(center);
      seen[center] = 1;
      while (!q.empty() && static_cast<int>(ball.size()) < count) {
        const int v = q.front();
        q.pop();
        ball.push_back(v);
        for (int u : adj[v])
          if (!seen[u]) {
            seen[u] = 1;
            q.push(u);
          }
      }
      for (int v : ball) out.values(v, l) = nan;
    }
  }
  return out;
}

// --- partition files ------------------------------------------------------

inline void write_partition_csv(const std::string& path, const Partition& p) {
  std::string text = "vertex,label\n";
  for (std::size_t v = 0; v < p.labels.size(); ++v)
    text += std::to_string(v) + "," + std::to_string(p.labels[v]) + "\n";
  write_text(path, text);
}

inline Partition read_partition_csv(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty() ||
      split_csv_line(lines[0]) != std::vector<std::string>{"vertex", "label"})
    throw std::runtime_error("partition file must start with 'vertex,label': " + path);
  Partition p;
  p.labels.resize(lines.size() - 1);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto cells = split_csv_line(lines[r]);
    if (cells.size() != 2)
      throw std::runtime_error("partition row " + std::to_string(r) +
                               " has wrong arity in " + path);
    const int v = parse_int(cells[0], path);
    if (v != static_cast<int>(r) - 1)
      throw std::runtime_error("partition rows must list vertices 0..n-1 in order");
    const int label = parse_int(cells[1], path);
    if (label < 0) throw std::runtime_error("labels must be nonnegative");
    p.labels[v] = label;
    p.parts = std::max(p.parts, label + 1);
  }
  return p;
}

inline void write_interpolation_csv(const std::string& path,
                                    const SetInterpolation& interp) {
  std::string text = "realization,vertex,estimate\n";
  for (const auto& [l, v, e] : interp.estimates)
    text += std::to_string(l) + "," + std::to_string(v) + "," + format_double(e) + "\n";
  write_text(path, text);
}

inline std::vector<MetricReport> read_metrics(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty() ||
      split_csv_line(lines[0]) != std::vector<std::string>{"metric", "value", "details"})
    throw std::runtime_error("metrics file must start with 'metric,value,details': " + path);
  std::vector<MetricReport> rows;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto cells = split_csv_line(lines[r]);
    if (cells.size() != 3)
      throw std::runtime_error("metrics row " + std::to_string(r) + " has wrong arity");
    rows.push_back({cells[0], parse_double(cells[1], path), cells[2]});
  }
  return rows;
}

// --- task pipelines -------------------------------------------------------

namespace detail {

inline void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

inline void require_file(const std::string& path, const char* what) {
  require(!path.empty(), std::string(what) + " path is required for this task");
  require(std::filesystem::exists(path), std::string(what) + " not found: " + path);
}

inline std::string out_path(const ExperimentConfig& c, const std::string& name) {
  return (std::filesystem::path(c.out_dir) / name).string();
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::string all;
  for (const auto& l : read_lines(path)) all += l + "\n";
  return nlohmann::json::parse(all);
}

inline Eigen::MatrixXd covariance_for(const ExperimentConfig& c, const Graph& g,
                                      const RealizationSet& set,
                                      std::vector<MetricReport>& rows) {
  if (c.method == "sc") return sample_covariance(set).matrix;
  if (c.method == "lsgp") {
    const Eigen::MatrixXd chat = sample_covariance(set).matrix;
    const LearnedModel fit = learn_lsgp(g, chat, learner_config(c));
    rows.push_back({"learn_outer_iterations",
                    double(fit.diagnostics.outer_iterations), "method=lsgp"});
    rows.push_back({"learn_objective_final", fit.state.objective_trace.back(),
                    "method=lsgp"});
    return model_covariance(fit.model);
  }
  if (c.method == "model") {
    require_file(c.model_path, "model_path");
    return model_covariance(model_from_json(read_json_file(c.model_path), g));
  }
  throw ConfigError("method must be one of sc, lsgp, model");
}

inline void write_manifest(const ExperimentConfig& c) {
  nlohmann::json j;
  j["config"] = config_to_json(c);
  j["seed"] = c.seed;
  j["version"] = version_string;
  write_text(out_path(c, "manifest.json"), j.dump(2) + "\n");
}

inline void run_synth(const ExperimentConfig& c, std::vector<MetricReport>& rows) {
  if (c.synth_kind == "blocks") {
    const int inter = c.inter_edges > 0 ? c.inter_edges : 3 * c.blocks;
    const auto specs =
        evenly_spaced_bumps(c.blocks, c.kernel_width_scale, c.kernel_smoothness);
    SyntheticLsgp synth = synthetic_block_lsgp(c.blocks, c.block_size, c.synth_knn,
                                               c.inside, c.outside, specs, inter, c.seed);
    write_coordinates(out_path(c, "coords.csv"), synth.points);
    write_edge_list(out_path(c, "edges.csv"), synth.graph);
    write_text(out_path(c, "model.json"), model_to_json(synth.model).dump(2) + "\n");
    write_partition_csv(out_path(c, "partition.csv"), synth.blocks);
    rows.push_back({"n", double(synth.graph.size()), "blocks"});
    rows.push_back({"edges", double(synth.graph.edges().size()), ""});
    if (c.realizations > 0) {
      RealizationSet set = sample_realizations(synth.model, c.realizations,
                                               derive_seed(c.seed, 101), c.snr_db);
      if (c.ratio > 0.0)
        set = inject_missingness(set, c.pattern, c.ratio, derive_seed(c.seed, 102),
                                 synth.graph);
      write_realizations(out_path(c, "signals.csv"), set);
      rows.push_back({"realizations", double(set.count()), ""});
    }
    for (std::size_t i = 0; i < c.nmi_grid.size(); ++i) {
      const double outside = c.nmi_grid[i];
      SyntheticLsgp inst = synthetic_block_lsgp(c.blocks, c.block_size, c.synth_knn,
                                                c.inside, outside, specs, inter, c.seed);
      const Eigen::MatrixXd cov = model_covariance(inst.model);
      const double theta =
          c.theta > 0.0 ? c.theta : default_theta(cov, inst.graph);
      const Partition p = partition_graph(
          inst.graph, covariance_edge_distance(cov, inst.graph, theta), c.blocks,
          derive_seed(c.seed, 200 + i));
      rows.push_back({"nmi",
                      normalized_mutual_information(inst.blocks.labels, p.labels),
                      "delta_mu=" + format_double(outside / c.inside)});
    }
    return;
  }
  if (c.synth_kind == "planted") {
    PlantedLsgp synth = planted_knn_lsgp(c.n_vertices, c.knn, c.order, c.degree, c.seed);
    write_coordinates(out_path(c, "coords.csv"), synth.points);
    write_edge_list(out_path(c, "edges.csv"), synth.graph);
    write_text(out_path(c, "model.json"), model_to_json(synth.model).dump(2) + "\n");
    rows.push_back({"n", double(synth.graph.size()), "planted"});
    if (c.realizations > 0) {
      RealizationSet set = sample_realizations(synth.model, c.realizations,
                                               derive_seed(c.seed, 101), c.snr_db);
      if (c.ratio > 0.0)
        set = inject_missingness(set, c.pattern, c.ratio, derive_seed(c.seed, 102),
                                 synth.graph);
      write_realizations(out_path(c, "signals.csv"), set);
      rows.push_back({"realizations", double(set.count()), ""});
    }
    return;
  }
  throw ConfigError("synth_kind must be 'blocks' or 'planted'");
}

inline void run_learn(const ExperimentConfig& c, std::vector<MetricReport>& rows) {
  require_file(c.coords, "coords");
  require_file(c.signals, "signals");
  auto [graph, set] = load_dataset(c.coords, c.signals, {c.knn, c.knn_width});
  const CovarianceEstimate est = sample_covariance(set);
  const LearnedModel fit = learn_lsgp(graph, est.matrix, learner_config(c));
  write_text(out_path(c, "model.json"), model_to_json(fit.model).dump(2) + "\n");

  nlohmann::json report;
  report["objective_trace"] = fit.state.objective_trace;
  report["gamma_rank1_residual"] = fit.diagnostics.gamma_rank1_residual;
  report["b_rank1_residual"] = fit.diagnostics.b_rank1_residual;
  report["step_seconds"] = fit.diagnostics.step_seconds;
  report["outer_iterations"] = fit.diagnostics.outer_iterations;
  write_text(out_path(c, "report.json"), report.dump(2) + "\n");

  rows.push_back({"objective_final", fit.state.objective_trace.back(), ""});
  rows.push_back({"outer_iterations", double(fit.diagnostics.outer_iterations), ""});
  rows.push_back({"gamma_rank1_residual", fit.diagnostics.gamma_rank1_residual, ""});
  rows.push_back({"b_rank1_residual", fit.diagnostics.b_rank1_residual, ""});
  if (!c.true_model_path.empty()) {
    require_file(c.true_model_path, "true_model_path");
    const Model truth = model_from_json(read_json_file(c.true_model_path), graph);
    const Eigen::MatrixXd c_true = model_covariance(truth);
    rows.push_back({"cd_sample", covariance_discrepancy(c_true, est.matrix), "vs=sc"});
    rows.push_back({"cd_model",
                    covariance_discrepancy(c_true, model_covariance(fit.model)),
                    "vs=learned"});
  }
}

inline void run_interpolate(const ExperimentConfig& c, std::vector<MetricReport>& rows) {
  require_file(c.coords, "coords");
  require_file(c.signals, "signals");
  auto [graph, reference] = load_dataset(c.coords, c.signals, {c.knn, c.knn_width});
  const RealizationSet injected =
      inject_missingness(reference, c.pattern, c.ratio, derive_seed(c.seed, 1), graph);

  std::vector<std::pair<int, int>> targets;  // injected-missing with known truth
  for (int l = 0; l < reference.count(); ++l)
    for (int v = 0; v < reference.size(); ++v)
      if (reference.observed(v, l) && !injected.observed(v, l)) targets.emplace_back(l, v);

  const Eigen::MatrixXd cov = covariance_for(c, graph, injected, rows);
  const SetInterpolation interp = interpolate_missing(cov, injected);
  write_interpolation_csv(out_path(c, "interpolation.csv"), interp);

  rows.push_back({"targets", double(targets.size()),
                  targets.empty() ? "no targets" : "method=" + c.method});
  rows.push_back({"ridge_count", double(interp.ridge_count), ""});
  if (!targets.empty()) {
    Eigen::VectorXd z(static_cast<int>(targets.size())),
        zhat(static_cast<int>(targets.size()));
    for (std::size_t i = 0; i < targets.size(); ++i) {
      z(static_cast<int>(i)) = reference.values(targets[i].second, targets[i].first);
      zhat(static_cast<int>(i)) = interp.completed(targets[i].second, targets[i].first);
    }
    const ErrorMetrics m = error_metrics(z, zhat);
    const std::string d = "method=" + c.method;
    rows.push_back({"nme", m.nme, d});
    rows.push_back({"mae", m.mae, d});
    rows.push_back({"mape", m.mape, d + ";skipped=" + std::to_string(m.mape_skipped)});
  }
}

inline void run_partition(const ExperimentConfig& c, std::vector<MetricReport>& rows) {
  Graph graph;
  Eigen::MatrixXd cov;
  if (!c.model_path.empty() && c.signals.empty()) {
    require_file(c.coords, "coords");
    require_file(c.model_path, "model_path");
    graph = build_knn_graph(read_coordinates(c.coords), c.knn, c.knn_width);
    cov = model_covariance(model_from_json(read_json_file(c.model_path), graph));
  } else {
    require_file(c.coords, "coords");
    require_file(c.signals, "signals");
    auto [g, set] = load_dataset(c.coords, c.signals, {c.knn, c.knn_width});
    graph = std::move(g);
    cov = sample_covariance(set).matrix;
  }
  const double theta = c.theta > 0.0 ? c.theta : default_theta(cov, graph);
  const Partition p = partition_graph(
      graph, covariance_edge_distance(cov, graph, theta), c.parts, c.seed);
  write_partition_csv(out_path(c, "partition.csv"), p);
  rows.push_back({"theta", theta, ""});
  rows.push_back({"parts", double(p.parts), ""});
  if (!c.labels_path.empty()) {
    require_file(c.labels_path, "labels_path");
    const Partition truth = read_partition_csv(c.labels_path);
    rows.push_back({"nmi", normalized_mutual_information(truth.labels, p.labels), ""});
  }
}

inline void run_local_approx(const ExperimentConfig& c, std::vector<MetricReport>& rows) {
  require_file(c.coords, "coords");
  require_file(c.signals, "signals");
  auto [graph, reference] = load_dataset(c.coords, c.signals, {c.knn, c.knn_width});
  const RealizationSet working =
      c.ratio > 0.0
          ? inject_missingness(reference, c.pattern, c.ratio, derive_seed(c.seed, 1), graph)
          : reference;
  const CovarianceEstimate est = sample_covariance(working);
  const LocalApproximation local = local_approximation(
      graph, est.matrix, c.parts, c.theta, learner_config(c), c.seed);
  write_partition_csv(out_path(c, "partition.csv"), local.partition);
  const auto parts = local.partition.members();
  for (int k = 0; k < c.parts; ++k) {
    write_text(out_path(c, "model_" + std::to_string(k) + ".json"),
               model_to_json(local.models[k]).dump(2) + "\n");
    Eigen::MatrixXd chat_k(parts[k].size(), parts[k].size());
    for (std::size_t a = 0; a < parts[k].size(); ++a)
      for (std::size_t b = 0; b < parts[k].size(); ++b)
        chat_k(a, b) = est.matrix(parts[k][a], parts[k][b]);
    rows.push_back({"cd_local_fit",
                    covariance_discrepancy(chat_k, model_covariance(local.models[k])),
                    "part=" + std::to_string(k)});
  }
  if (!c.labels_path.empty()) {
    require_file(c.labels_path, "labels_path");
    const Partition truth = read_partition_csv(c.labels_path);
    rows.push_back({"nmi",
                    normalized_mutual_information(truth.labels, local.partition.labels),
                    ""});
  }
  if (c.ratio > 0.0) {
    const SetInterpolation interp =
        interpolate_missing(local.composite_covariance, working);
    write_interpolation_csv(out_path(c, "interpolation.csv"), interp);
    std::vector<std::pair<int, int>> targets;
    for (int l = 0; l < reference.count(); ++l)
      for (int v = 0; v < reference.size(); ++v)
        if (reference.observed(v, l) && !working.observed(v, l)) targets.emplace_back(l, v);
    if (!targets.empty()) {
      Eigen::VectorXd z(static_cast<int>(targets.size())),
          zhat(static_cast<int>(targets.size()));
      for (std::size_t i = 0; i < targets.size(); ++i) {
        z(static_cast<int>(i)) = reference.values(targets[i].second, targets[i].first);
        zhat(static_cast<int>(i)) = interp.completed(targets[i].second, targets[i].first);
      }
      const ErrorMetrics m = error_metrics(z, zhat);
      rows.push_back({"nme", m.nme, "method=local-approx"});
      rows.push_back({"mae", m.mae, "method=local-approx"});
      rows.push_back(
          {"mape", m.mape, "method=local-approx;skipped=" + std::to_string(m.mape_skipped)});
    }
  }
}

inline void append_check(std::vector<MetricReport>& rows, const std::string& name,
                         const CheckResult& r, const std::string& extra) {
  rows.push_back({name, r.slack,
                  "lhs=" + format_double(r.lhs) + ";rhs=" + format_double(r.rhs) +
                      ";holds=" + (r.holds ? "true" : "false") +
                      (extra.empty() ? "" : ";" + extra)});
}

inline void check_all_bounds(const Model& model, const Partition& p,
                             std::vector<MetricReport>& rows, const std::string& tag,
                             int& violations) {
  for (int k = 0; k < model.order(); ++k)
    for (int mm = 0; mm < model.order(); ++mm) {
      if (k == mm) continue;
      const CheckResult r = check_theorem2(model, p, k, mm);
      if (!r.holds) ++violations;
      append_check(rows, "theorem2", r,
                   tag + (tag.empty() ? "" : ";") + "k=" + std::to_string(k) +
                       ";m=" + std::to_string(mm));
    }
  const CheckResult r3 = check_theorem3(model, p);
  if (!r3.holds) ++violations;
  append_check(rows, "theorem3", r3, tag);
  const AssumptionParams a = extract_params(model, p);
  if (a.kappa_c < model.size()) {
    const CheckResult r4 = check_theorem4(model, p);
    if (!r4.holds) ++violations;
    append_check(rows, "theorem4", r4, tag);
  } else {
    rows.push_back({"theorem4", 0.0,
                    (tag.empty() ? "" : tag + ";") +
                        "skipped=kernels not band-limited"});
  }
}

inline void run_verify_bounds(const ExperimentConfig& c, std::vector<MetricReport>& rows) {
  int violations = 0;
  if (c.instances > 0) {
    for (int i = 0; i < c.instances; ++i) {
      const SyntheticLsgp inst = random_localized_model(derive_seed(c.seed, i));
      check_all_bounds(inst.model, inst.blocks, rows, "instance=" + std::to_string(i),
                       violations);
    }
  } else {
    require_file(c.coords, "coords");
    require_file(c.model_path, "model_path");
    require_file(c.partition_path, "partition_path");
    Graph graph = build_knn_graph(read_coordinates(c.coords), c.knn, c.knn_width);
    const Model model = model_from_json(read_json_file(c.model_path), graph);
    const Partition p = read_partition_csv(c.partition_path);
    check_all_bounds(model, p, rows, "", violations);
  }
  rows.push_back({"violations", double(violations), ""});
}

inline void run_experiment(const ExperimentConfig& c);  // forward (sweep recurses)

inline void run_sweep(const ExperimentConfig& c, std::vector<MetricReport>& rows) {
  require(!c.sweep_param.empty(), "sweep_param is required");
  require(!c.sweep_values.empty(), "sweep_values is required");
  require(!c.sweep_task.empty() && c.sweep_task != "sweep",
          "sweep_task must name a non-sweep task");
  for (std::size_t i = 0; i < c.sweep_values.size(); ++i) {
    const double v = c.sweep_values[i];
    ExperimentConfig sub = c;
    sub.task = c.sweep_task;
    sub.out_dir = out_path(c, "grid_" + std::to_string(i));
    sub.seed = derive_seed(c.seed, i);
    sub.sweep_param.clear();
    sub.sweep_values.clear();
    sub.sweep_task.clear();
    if (c.sweep_param == "mu1") sub.mu1 = v;
    else if (c.sweep_param == "mu2") sub.mu2 = v;
    else if (c.sweep_param == "mu3") sub.mu3 = v;
    else if (c.sweep_param == "ratio") sub.ratio = v;
    else if (c.sweep_param == "snr_db") sub.snr_db = v;
    else if (c.sweep_param == "theta") sub.theta = v;
    else if (c.sweep_param == "outside") sub.outside = v;
    else if (c.sweep_param == "inside") sub.inside = v;
    else if (c.sweep_param == "parts") sub.parts = static_cast<int>(v);
    else if (c.sweep_param == "order") sub.order = static_cast<int>(v);
    else if (c.sweep_param == "degree") sub.degree = static_cast<int>(v);
    else if (c.sweep_param == "knn") sub.knn = static_cast<int>(v);
    else throw ConfigError("unsupported sweep_param: " + c.sweep_param);
    run_experiment(sub);
    for (const auto& r : read_metrics((std::filesystem::path(sub.out_dir) /
                                       "metrics.csv").string()))
      rows.push_back({r.name, r.value,
                      c.sweep_param + "=" + format_double(v) +
                          (r.details.empty() ? "" : ";" + r.details)});
  }
}

inline void run_experiment(const ExperimentConfig& c) {
  require(!c.task.empty(), "task is required");
  require(!c.out_dir.empty(), "out_dir is required");
  std::filesystem::create_directories(c.out_dir);
  std::vector<MetricReport> rows;
  if (c.task == "synth") run_synth(c, rows);
  else if (c.task == "learn") run_learn(c, rows);
  else if (c.task == "interpolate") run_interpolate(c, rows);
  else if (c.task == "partition") run_partition(c, rows);
  else if (c.task == "local-approx") run_local_approx(c, rows);
  else if (c.task == "verify-bounds") run_verify_bounds(c, rows);
  else if (c.task == "sweep") run_sweep(c, rows);
  else throw ConfigError("unknown task: " + c.task);
  write_metrics(out_path(c, "metrics.csv"), rows);
  write_manifest(c);
}

}  // namespace detail

using detail::run_experiment;

}  // namespace lsgp
