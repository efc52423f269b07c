#pragma once

// Synthetic instances: compact bump kernels, block-structured LSGPs with
// localized memberships, and planted polynomial-kernel models on k-NN
// graphs.  Everything is deterministic under the given seed.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lsgp/graph.hpp"
#include "lsgp/model.hpp"
#include "lsgp/partition.hpp"
#include "lsgp/random.hpp"

namespace lsgp {

// Smooth compactly supported window: exp(1/(t^{2n} - 1)) for |t| < 1 with
// t = (lambda - center)/halfwidth, exactly zero outside.  Normalized to
// unit norm over the given frequencies.  The exact zeros keep the
// band-limit cutoff well-defined when the support excludes top frequencies.
inline Eigen::VectorXd bump_kernel(const Eigen::VectorXd& freqs, double center,
                                   double halfwidth, int smoothness = 1) {
  if (halfwidth <= 0.0) throw std::invalid_argument("halfwidth must be positive");
  if (smoothness < 1) throw std::invalid_argument("smoothness must be >= 1");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(freqs.size());
  for (int i = 0; i < freqs.size(); ++i) {
    const double t = (freqs(i) - center) / halfwidth;
    if (std::abs(t) >= 1.0) continue;
    const double t2n = std::pow(t * t, smoothness);
    v(i) = std::exp(1.0 / (t2n - 1.0));
  }
  const double norm = v.norm();
  if (norm == 0.0)
    throw std::invalid_argument(
        "bump support contains no graph frequency; widen it or move the center");
  return v / norm;
}

struct BumpSpec {
  double center = 1.0;
  double halfwidth = 0.5;
  int smoothness = 1;
};

// K touching bumps covering [0, span]: supports (k span/K, (k+1) span/K)
// are disjoint open intervals, so distinct kernels have zero spectral
// overlap.  A width_scale > 1 widens the supports into overlap for
// separation sweeps; pass the top graph frequency as span to spread the
// bumps over the whole spectrum.
inline std::vector<BumpSpec> evenly_spaced_bumps(int k, double width_scale = 1.0,
                                                 int smoothness = 1,
                                                 double span = 2.0) {
  if (k < 1) throw std::invalid_argument("need at least one bump");
  if (width_scale <= 0.0) throw std::invalid_argument("width scale must be positive");
  if (span <= 0.0) throw std::invalid_argument("span must be positive");
  std::vector<BumpSpec> specs(k);
  for (int i = 0; i < k; ++i) {
    specs[i].center = (2.0 * i + 1.0) * span / (2.0 * k);
    specs[i].halfwidth = width_scale * span / (2.0 * k);
    specs[i].smoothness = smoothness;
  }
  return specs;
}

struct BlockGraph {
  Graph graph;
  Eigen::MatrixXd points;
  Partition blocks;  // ground truth: one part per block
};

// K blocks of internally k-NN-connected random points, joined by
// inter_edges random cross-block edges (weight = median intra-block
// weight).  Extra rounds of cross edges are added if the union is still
// disconnected, up to a cap.
inline BlockGraph synthetic_block_graph(int blocks, int nodes_per_block, int knn,
                                        int inter_edges, std::uint64_t seed) {
  if (blocks < 1 || nodes_per_block < 2)
    throw std::invalid_argument("need at least 1 block of at least 2 nodes");
  if (blocks > 1 && inter_edges < 1)
    throw std::invalid_argument("joining multiple blocks needs inter_edges >= 1");
  Rng rng(seed);
  const int n = blocks * nodes_per_block;
  Eigen::MatrixXd points(n, 2);
  Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(n, n);

  for (int b = 0; b < blocks; ++b) {
    const int off = b * nodes_per_block;
    Graph local;
    bool built = false;
    for (int attempt = 0; attempt < 20 && !built; ++attempt) {
      Eigen::MatrixXd pts(nodes_per_block, 2);
      for (int i = 0; i < nodes_per_block; ++i) {
        pts(i, 0) = 1.5 * b + rng.uniform();  // blocks laid out along x
        pts(i, 1) = rng.uniform();
      }
      try {
        local = build_knn_graph(pts, knn);
        points.block(off, 0, nodes_per_block, 2) = pts;
        built = true;
      } catch (const std::runtime_error&) {
        // disconnected draw; redraw the block
      }
    }
    if (!built)
      throw std::runtime_error("could not draw a connected block after 20 attempts");
    weights.block(off, off, nodes_per_block, nodes_per_block) = local.weights();
  }

  std::vector<double> intra;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (weights(i, j) > 0.0) intra.push_back(weights(i, j));
  std::sort(intra.begin(), intra.end());
  const double cross_weight = intra[intra.size() / 2];

  auto add_cross_edges = [&](int count) {
    for (int e = 0; e < count; ++e) {
      for (int attempt = 0; attempt < 200; ++attempt) {
        const int ba = static_cast<int>(rng.index(blocks));
        const int bb = static_cast<int>(rng.index(blocks));
        if (ba == bb) continue;
        const int i = ba * nodes_per_block + static_cast<int>(rng.index(nodes_per_block));
        const int j = bb * nodes_per_block + static_cast<int>(rng.index(nodes_per_block));
        if (weights(i, j) > 0.0) continue;
        weights(i, j) = cross_weight;
        weights(j, i) = cross_weight;
        break;
      }
    }
  };
  if (blocks > 1) add_cross_edges(inter_edges);
  Graph g(weights);
  for (int round = 0; round < 5 && !is_connected(g); ++round) {
    add_cross_edges(inter_edges);
    g = Graph(weights);
  }
  if (!is_connected(g))
    throw std::runtime_error("block graph still disconnected; raise inter_edges");

  BlockGraph out;
  out.graph = std::move(g);
  out.points = std::move(points);
  out.blocks.parts = blocks;
  out.blocks.labels.resize(n);
  for (int v = 0; v < n; ++v) out.blocks.labels[v] = v / nodes_per_block;
  validate_partition(out.blocks, out.graph);
  return out;
}

struct SyntheticLsgp {
  Graph graph;
  Eigen::MatrixXd points;
  Partition blocks;
  Model model;
};

// Block LSGP with localized memberships: inside_value on the own block,
// outside_value elsewhere, kernels from the bump specs (one per block).
inline SyntheticLsgp synthetic_block_lsgp(int blocks, int nodes_per_block, int knn,
                                          double inside_value, double outside_value,
                                          std::vector<BumpSpec> kernel_specs,
                                          int inter_edges, std::uint64_t seed) {
  if (kernel_specs.empty()) kernel_specs = evenly_spaced_bumps(blocks);
  if (static_cast<int>(kernel_specs.size()) != blocks)
    throw std::invalid_argument("need one kernel spec per block");
  if (inside_value <= 0.0)
    throw std::invalid_argument("inside membership value must be positive");
  BlockGraph bg = synthetic_block_graph(blocks, nodes_per_block, knn, inter_edges, seed);
  const int n = bg.graph.size();
  const Spectrum& s = bg.graph.spectrum();
  Eigen::MatrixXd memberships(n, blocks);
  Eigen::MatrixXd kernels(n, blocks);
  for (int k = 0; k < blocks; ++k) {
    for (int v = 0; v < n; ++v)
      memberships(v, k) = (bg.blocks.labels[v] == k) ? inside_value : outside_value;
    kernels.col(k) = bump_kernel(s.frequencies, kernel_specs[k].center,
                                 kernel_specs[k].halfwidth, kernel_specs[k].smoothness);
  }
  SyntheticLsgp out;
  out.model = make_model(bg.graph, std::move(memberships), std::move(kernels));
  out.graph = std::move(bg.graph);
  out.points = std::move(bg.points);
  out.blocks = std::move(bg.blocks);
  return out;
}

// Random model satisfying the membership localization assumption: own-block
// memberships in [0.7, 1.4], off-block magnitudes at most delta_ceiling
// (signs random), kernels either band-limited random bumps (supports capped
// below the top frequencies, so the cutoff exists) or dense random spectra.
inline SyntheticLsgp random_localized_model(std::uint64_t seed, int blocks = 3,
                                            int nodes_per_block = 8, int knn = 3,
                                            double delta_ceiling = 0.3,
                                            bool band_limited = true) {
  BlockGraph bg = synthetic_block_graph(blocks, nodes_per_block, knn, 2 * blocks,
                                        derive_seed(seed, 0));
  Rng rng(derive_seed(seed, 1));
  const int n = bg.graph.size();
  const Spectrum& s = bg.graph.spectrum();
  Eigen::MatrixXd memberships(n, blocks);
  for (int k = 0; k < blocks; ++k)
    for (int v = 0; v < n; ++v)
      memberships(v, k) = (bg.blocks.labels[v] == k)
                              ? rng.uniform(0.7, 1.4)
                              : rng.uniform(-delta_ceiling, delta_ceiling);
  Eigen::MatrixXd kernels(n, blocks);
  if (band_limited) {
    if (n < 8) throw std::invalid_argument("band-limited draw needs at least 8 nodes");
    const double top = s.frequencies(n - 4);  // keep >= 3 top frequencies at zero
    for (int k = 0; k < blocks; ++k) {
      // redraw when the support falls into a spectral gap; after enough
      // tries anchor the bump on a frequency so it is never empty
      for (int attempt = 0;; ++attempt) {
        const double hw = rng.uniform(0.08, 0.22) * top;
        double center = rng.uniform(hw, top - hw);
        if (attempt >= 64) {
          double f = 0.0;
          for (int i = n - 4; i >= 0; --i)
            if (s.frequencies(i) <= top - hw) { f = s.frequencies(i); break; }
          center = f >= hw ? f : 0.5 * (f + hw);
        }
        bool hit = false;
        for (int i = 0; i < n && !hit; ++i)
          hit = std::abs(s.frequencies(i) - center) < hw;
        if (!hit) continue;
        kernels.col(k) = bump_kernel(s.frequencies, center, hw);
        break;
      }
    }
  } else {
    for (int k = 0; k < blocks; ++k) {
      Eigen::VectorXd v = rng.normal_vector(n);
      int arg = 0;
      for (int i = 1; i < n; ++i)
        if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
      // canonical sign up front so make_model keeps memberships positive
      if (v(arg) < 0.0) v = -v;
      kernels.col(k) = v / v.norm();
    }
  }
  SyntheticLsgp out;
  out.model = make_model(bg.graph, std::move(memberships), std::move(kernels));
  out.graph = std::move(bg.graph);
  out.points = std::move(bg.points);
  out.blocks = std::move(bg.blocks);
  return out;
}

struct PlantedLsgp {
  Graph graph;
  Eigen::MatrixXd points;
  Model model;
};

// Planted polynomial-kernel model on a block k-NN graph: `order` equal
// blocks of internally k-NN-connected points joined by a few cross edges,
// memberships 1 on the own block and 0.1 elsewhere, polynomial coefficients
// drawn uniformly from [0, 1).
inline PlantedLsgp planted_knn_lsgp(int n, int knn, int order, int degree,
                                    std::uint64_t seed) {
  if (order < 1 || n % order != 0)
    throw std::invalid_argument("n must be a positive multiple of order");
  BlockGraph bg =
      synthetic_block_graph(order, n / order, knn, order > 1 ? order : 0, seed);
  Rng rng(seed * 977 + 13);
  Eigen::MatrixXd memberships(n, order);
  for (int v = 0; v < n; ++v)
    for (int k = 0; k < order; ++k)
      memberships(v, k) = (bg.blocks.labels[v] == k) ? 1.0 : 0.1;
  Eigen::MatrixXd coeffs(degree, order);
  for (int q = 0; q < degree; ++q)
    for (int k = 0; k < order; ++k) coeffs(q, k) = rng.uniform();
  PlantedLsgp out;
  out.model = make_polynomial_model(bg.graph, std::move(memberships), std::move(coeffs));
  out.graph = std::move(bg.graph);
  out.points = std::move(bg.points);
  return out;
}

}  // namespace lsgp
