#pragma once

// Covariance-driven K-way partitioning into connected subgraphs, and the
// local WSS approximation built on top of it.
//
// Edge distances are rho(i,j) = exp(-Chat(i,j)^2 / theta): strongly
// covarying neighbours are close.  Partitioning converts distances to
// affinities a = 1 - rho, runs seeded spectral clustering on the affinity
// graph, then repairs connectivity by folding disconnected fragments into
// the neighbouring part with the largest total affinity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lsgp/estimation.hpp"
#include "lsgp/graph.hpp"
#include "lsgp/learner.hpp"
#include "lsgp/random.hpp"

namespace lsgp {

struct Partition {
  std::vector<int> labels;  // part index per vertex, 0..parts-1
  int parts = 0;

  std::vector<std::vector<int>> members() const {
    std::vector<std::vector<int>> out(parts);
    for (std::size_t v = 0; v < labels.size(); ++v) {
      if (labels[v] < 0 || labels[v] >= parts)
        throw std::invalid_argument("partition label out of range");
      out[labels[v]].push_back(static_cast<int>(v));
    }
    return out;
  }
};

// Every part nonempty and connected inside the parent graph.
inline void validate_partition(const Partition& p, const Graph& g) {
  if (static_cast<int>(p.labels.size()) != g.size())
    throw std::invalid_argument("partition does not cover the graph");
  if (p.parts < 1) throw std::invalid_argument("partition needs at least one part");
  const auto parts = p.members();
  const auto adj = g.adjacency();
  for (int k = 0; k < p.parts; ++k) {
    const auto& part = parts[k];
    if (part.empty())
      throw std::invalid_argument("part " + std::to_string(k) + " is empty");
    std::vector<char> in_part(g.size(), 0), seen(g.size(), 0);
    for (int v : part) in_part[v] = 1;
    std::queue<int> q;
    q.push(part[0]);
    seen[part[0]] = 1;
    int reached = 1;
    while (!q.empty()) {
      const int v = q.front();
      q.pop();
      for (int u : adj[v])
        if (in_part[u] && !seen[u]) {
          seen[u] = 1;
          ++reached;
          q.push(u);
        }
    }
    if (reached != static_cast<int>(part.size()))
      throw std::invalid_argument("part " + std::to_string(k) + " is disconnected");
  }
}

// Binary selection operator S_k as a dense matrix (|V_k| x n); rows follow
// the ascending vertex order of the part.
inline Eigen::MatrixXd selection_matrix(const Partition& p, int k) {
  if (k < 0 || k >= p.parts) throw std::invalid_argument("part index out of range");
  const auto part = p.members()[k];
  Eigen::MatrixXd s =
      Eigen::MatrixXd::Zero(static_cast<int>(part.size()), static_cast<int>(p.labels.size()));
  for (std::size_t r = 0; r < part.size(); ++r) s(static_cast<int>(r), part[r]) = 1.0;
  return s;
}

// rho on edges; non-edges carry 0 (no distance defined there).
inline Eigen::MatrixXd covariance_edge_distance(const Eigen::MatrixXd& chat,
                                                const Graph& g, double theta) {
  if (theta <= 0.0) throw std::invalid_argument("theta must be positive");
  if (chat.rows() != g.size() || chat.cols() != g.size())
    throw std::invalid_argument("covariance size must match the graph");
  Eigen::MatrixXd rho = Eigen::MatrixXd::Zero(g.size(), g.size());
  for (const auto& [i, j, w] : g.edges()) {
    (void)w;
    const double d = std::exp(-chat(i, j) * chat(i, j) / theta);
    rho(i, j) = d;
    rho(j, i) = d;
  }
  return rho;
}

// Median of Chat(i,j)^2 over edges (median heuristic for theta).
inline double default_theta(const Eigen::MatrixXd& chat, const Graph& g) {
  std::vector<double> sq;
  for (const auto& [i, j, w] : g.edges()) {
    (void)w;
    sq.push_back(chat(i, j) * chat(i, j));
  }
  if (sq.empty()) throw std::invalid_argument("graph has no edges");
  std::sort(sq.begin(), sq.end());
  const std::size_t h = sq.size() / 2;
  double med = (sq.size() % 2 == 1) ? sq[h] : 0.5 * (sq[h - 1] + sq[h]);
  if (med <= 0.0) med = 1.0;  // degenerate all-zero covariance: neutral scale
  return med;
}

namespace detail {

// Lloyd k-means with k-means++ seeding; all tie-breaks deterministic.
inline std::vector<int> kmeans(const Eigen::MatrixXd& rows, int k, Rng& rng) {
  const int n = static_cast<int>(rows.rows());
  Eigen::MatrixXd centers(k, rows.cols());
  std::vector<double> d2(n);
  centers.row(0) = rows.row(static_cast<int>(rng.index(n)));
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = (rows.row(i) - centers.row(0)).squaredNorm();
      for (int p = 1; p < c; ++p)
        best = std::min(best, (rows.row(i) - centers.row(p)).squaredNorm());
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {  // all points coincide with a center; spread arbitrarily
      centers.row(c) = rows.row(static_cast<int>(rng.index(n)));
      continue;
    }
    double target = rng.uniform() * total;
    int pick = n - 1;
    for (int i = 0; i < n; ++i) {
      target -= d2[i];
      if (target <= 0.0) {
        pick = i;
        break;
      }
    }
    centers.row(c) = rows.row(pick);
  }

  std::vector<int> label(n, 0);
  for (int round = 0; round < 100; ++round) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bestd = (rows.row(i) - centers.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double d = (rows.row(i) - centers.row(c)).squaredNorm();
        if (d < bestd) {
          bestd = d;
          best = c;
        }
      }
      if (label[i] != best) {
        label[i] = best;
        changed = true;
      }
    }
    std::vector<int> count(k, 0);
    for (int i = 0; i < n; ++i) ++count[label[i]];
    for (int c = 0; c < k; ++c) {
      if (count[c] > 0) continue;
      // Empty cluster: seize the point farthest from its current center.
      int far = -1;
      double fard = -1.0;
      for (int i = 0; i < n; ++i) {
        if (count[label[i]] <= 1) continue;
        const double d = (rows.row(i) - centers.row(label[i])).squaredNorm();
        if (d > fard) {
          fard = d;
          far = i;
        }
      }
      if (far < 0) throw std::runtime_error("cannot fill an empty cluster");
      --count[label[far]];
      label[far] = c;
      ++count[c];
      changed = true;
    }
    centers.setZero();
    for (int i = 0; i < n; ++i) centers.row(label[i]) += rows.row(i);
    for (int c = 0; c < k; ++c)
      if (count[c] > 0) centers.row(c) /= count[c];
    if (!changed) break;
  }
  return label;
}

}  // namespace detail

// Spectral clustering on the affinity a = 1 - rho with connectivity repair.
// Deterministic under fixed seed; exactly K nonempty connected parts.
inline Partition partition_graph(const Graph& g, const Eigen::MatrixXd& rho, int k,
                                 std::uint64_t seed = 0) {
  const int n = g.size();
  if (k < 1 || k > n)
    throw std::invalid_argument("part count must satisfy 1 <= K <= n");
  if (!is_connected(g))
    throw std::invalid_argument("partitioning requires a connected graph");

  Partition p;
  p.labels.assign(n, 0);
  p.parts = k;
  if (k == 1) return p;

  Eigen::MatrixXd affinity = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [i, j, w] : g.edges()) {
    (void)w;
    const double a = 1.0 - rho(i, j);
    affinity(i, j) = a;
    affinity(j, i) = a;
  }

  if (k == n) {
    for (int v = 0; v < n; ++v) p.labels[v] = v;
    return p;
  }

  Eigen::VectorXd deg = affinity.rowwise().sum().cwiseMax(1e-12);
  const Eigen::VectorXd dinv = deg.array().rsqrt();
  Eigen::MatrixXd lap = -(dinv.asDiagonal() * affinity * dinv.asDiagonal());
  lap.diagonal().array() += 1.0;
  lap = 0.5 * (lap + lap.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lap);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("affinity eigendecomposition failed");
  Eigen::MatrixXd embed = es.eigenvectors().leftCols(k);
  for (int i = 0; i < n; ++i) {
    const double norm = embed.row(i).norm();
    if (norm > 0.0) embed.row(i) /= norm;
  }

  Rng rng(seed);
  p.labels = detail::kmeans(embed, k, rng);

  // Connectivity repair: fold fragments (non-largest components of a part)
  // into the adjacent part with maximum total affinity, smallest fragment
  // first.  Each fold removes a fragment, so this terminates.
  const auto adj = g.adjacency();
  for (;;) {
    std::vector<int> comp(n, -1);
    std::vector<int> comp_part, comp_size;
    int ncomp = 0;
    for (int s = 0; s < n; ++s) {
      if (comp[s] != -1) continue;
      comp[s] = ncomp;
      comp_part.push_back(p.labels[s]);
      int size = 0;
      std::queue<int> q;
      q.push(s);
      ++size;
      while (!q.empty()) {
        const int v = q.front();
        q.pop();
        for (int u : adj[v])
          if (comp[u] == -1 && p.labels[u] == p.labels[s]) {
            comp[u] = ncomp;
            ++size;
            q.push(u);
          }
      }
      comp_size.push_back(size);
      ++ncomp;
    }
    std::vector<int> main_comp(k, -1);  // largest component per part
    for (int c = 0; c < ncomp; ++c) {
      const int part = comp_part[c];
      if (main_comp[part] == -1 || comp_size[c] > comp_size[main_comp[part]])
        main_comp[part] = c;
    }
    int frag = -1;
    for (int c = 0; c < ncomp; ++c) {
      if (c == main_comp[comp_part[c]]) continue;
      if (frag == -1 || comp_size[c] < comp_size[frag]) frag = c;
    }
    if (frag == -1) break;

    std::vector<double> gain(k, 0.0);
    std::vector<char> touches(k, 0);
    for (int v = 0; v < n; ++v) {
      if (comp[v] != frag) continue;
      for (int u : adj[v])
        if (comp[u] != frag) {
          gain[p.labels[u]] += affinity(v, u);
          touches[p.labels[u]] = 1;
        }
    }
    int best = -1;
    for (int c = 0; c < k; ++c) {
      if (!touches[c]) continue;
      if (best == -1 || gain[c] > gain[best]) best = c;
    }
    if (best == -1)
      throw std::runtime_error("fragment has no neighbours; graph disconnected");
    for (int v = 0; v < n; ++v)
      if (comp[v] == frag) p.labels[v] = best;
  }

  // Canonical labels: parts numbered by their lowest vertex.
  std::vector<int> remap(k, -1);
  int next = 0;
  for (int v = 0; v < n; ++v)
    if (remap[p.labels[v]] == -1) remap[p.labels[v]] = next++;
  if (next != k)
    throw std::runtime_error("could not achieve " + std::to_string(k) +
                             " nonempty parts; reduce K");
  for (int v = 0; v < n; ++v) p.labels[v] = remap[p.labels[v]];
  validate_partition(p, g);
  return p;
}

// --- local WSS approximation ---------------------------------------------

struct LocalApproximation {
  Partition partition;
  std::vector<Graph> subgraphs;                 // induced, one per part
  std::vector<Model> models;                    // K=1 fit per subgraph
  std::vector<LearnerDiagnostics> diagnostics;
  Eigen::MatrixXd composite_covariance;         // block-diagonal in parent order
};

inline Graph induced_subgraph(const Graph& g, const std::vector<int>& vertices) {
  const int m = static_cast<int>(vertices.size());
  Eigen::MatrixXd w(m, m);
  for (int a = 0; a < m; ++a)
    for (int b = 0; b < m; ++b) w(a, b) = g.weights()(vertices[a], vertices[b]);
  return Graph(std::move(w));
}

// Partitions, then fits an order-1 (WSS) model per subgraph on the
// restricted covariance S_k Chat S_k^T.  Cross-subgraph covariance entries
// are set to zero in the composite; that matches the weak-cross-covariance
// regime the partition aims for and is a modelling choice, not a theorem.
inline LocalApproximation local_approximation(const Graph& g,
                                              const Eigen::MatrixXd& chat, int k,
                                              double theta, LearnerConfig cfg,
                                              std::uint64_t seed = 0) {
  if (theta <= 0.0) theta = default_theta(chat, g);
  const Eigen::MatrixXd rho = covariance_edge_distance(chat, g, theta);
  LocalApproximation out;
  out.partition = partition_graph(g, rho, k, seed);
  out.composite_covariance = Eigen::MatrixXd::Zero(g.size(), g.size());
  cfg.order = 1;
  const auto parts = out.partition.members();
  for (int c = 0; c < k; ++c) {
    const auto& part = parts[c];
    if (part.size() < 2)
      throw std::runtime_error("part " + std::to_string(c) +
                               " has a single vertex; a WSS fit needs at least 2 "
                               "(reduce K or adjust theta)");
    Graph sub = induced_subgraph(g, part);
    const int m = static_cast<int>(part.size());
    Eigen::MatrixXd chat_sub(m, m);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b) chat_sub(a, b) = chat(part[a], part[b]);
    LearnedModel fit = learn_lsgp(sub, chat_sub, cfg);
    const Eigen::MatrixXd cov = model_covariance(fit.model);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b)
        out.composite_covariance(part[a], part[b]) = cov(a, b);
    out.subgraphs.push_back(std::move(sub));
    out.models.push_back(std::move(fit.model));
    out.diagnostics.push_back(std::move(fit.diagnostics));
  }
  return out;
}

}  // namespace lsgp
