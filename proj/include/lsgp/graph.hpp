#pragma once

// Weighted undirected graphs and their normalized-Laplacian spectra.
//
// Conventions fixed here and relied on everywhere else:
//  * L = D^{-1/2} (D - W) D^{-1/2}; eigenvalues ascending in [0, 2].
//  * Eigenvector sign: the largest-magnitude entry of each eigenvector is
//    positive (ties broken by lowest index), so spectra are reproducible.
//  * Graph frequency indices are 0-based; frequency 0 is the constant mode
//    with eigenvector proportional to D^{1/2} 1.

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <queue>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lsgp/io.hpp"

namespace lsgp {

struct Spectrum {
  Eigen::MatrixXd laplacian;     // normalized Laplacian, exactly symmetric
  Eigen::VectorXd frequencies;   // eigenvalues, ascending
  Eigen::MatrixXd eigenvectors;  // columns, sign-canonical
  int n = 0;
};

namespace detail {

// Flips eigenvector columns so the largest-magnitude entry is positive.
// Ties on magnitude resolve to the lowest index.
inline void canonicalize_sign(Eigen::MatrixXd& vectors) {
  for (int j = 0; j < vectors.cols(); ++j) {
    int arg = 0;
    double best = std::abs(vectors(0, j));
    for (int i = 1; i < vectors.rows(); ++i) {
      const double a = std::abs(vectors(i, j));
      if (a > best) {
        best = a;
        arg = i;
      }
    }
    if (vectors(arg, j) < 0.0) vectors.col(j) = -vectors.col(j);
  }
}

}  // namespace detail

inline Spectrum normalized_laplacian_spectrum(const Eigen::MatrixXd& weights) {
  const int n = static_cast<int>(weights.rows());
  if (weights.cols() != n || n < 1)
    throw std::invalid_argument("weight matrix must be square and nonempty");
  Eigen::VectorXd degree = weights.rowwise().sum();
  for (int i = 0; i < n; ++i)
    if (degree(i) <= 0.0)
      throw std::invalid_argument(
          "normalized laplacian needs positive degree at every vertex; vertex " +
          std::to_string(i) + " is isolated");
  Eigen::VectorXd dinv = degree.array().rsqrt();
  Eigen::MatrixXd lap = -(dinv.asDiagonal() * weights * dinv.asDiagonal());
  lap.diagonal().array() += 1.0;
  lap = 0.5 * (lap + lap.transpose()).eval();  // exact symmetry for the solver

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(lap);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("eigendecomposition failed");
  Spectrum s;
  s.laplacian = lap;
  s.frequencies = es.eigenvalues();
  s.eigenvectors = es.eigenvectors();
  s.n = n;
  detail::canonicalize_sign(s.eigenvectors);
  return s;
}

class Graph {
 public:
  Graph() = default;

  explicit Graph(Eigen::MatrixXd weights) {
    const int n = static_cast<int>(weights.rows());
    if (weights.cols() != n || n < 1)
      throw std::invalid_argument("weight matrix must be square and nonempty");
    for (int i = 0; i < n; ++i) {
      if (weights(i, i) != 0.0)
        throw std::invalid_argument("self-loops are not allowed");
      for (int j = 0; j < n; ++j) {
        if (weights(i, j) < 0.0)
          throw std::invalid_argument("edge weights must be nonnegative");
        if (std::abs(weights(i, j) - weights(j, i)) >
            1e-12 * std::max(1.0, std::abs(weights(i, j))))
          throw std::invalid_argument("weight matrix must be symmetric");
      }
    }
    weights = 0.5 * (weights + weights.transpose()).eval();
    impl_ = std::make_shared<Impl>();
    impl_->n = n;
    impl_->weights = std::move(weights);
  }

  int size() const { return impl_->n; }
  const Eigen::MatrixXd& weights() const { return impl_->weights; }

  // Eigendecomposition is computed on first use and shared by copies.
  const Spectrum& spectrum() const {
    std::call_once(impl_->once, [this] {
      impl_->spectrum = normalized_laplacian_spectrum(impl_->weights);
    });
    return impl_->spectrum;
  }

  // Unordered edge list (i < j, weight > 0) in deterministic index order.
  std::vector<std::tuple<int, int, double>> edges() const {
    std::vector<std::tuple<int, int, double>> out;
    for (int i = 0; i < size(); ++i)
      for (int j = i + 1; j < size(); ++j)
        if (impl_->weights(i, j) > 0.0) out.emplace_back(i, j, impl_->weights(i, j));
    return out;
  }

  std::vector<std::vector<int>> adjacency() const {
    std::vector<std::vector<int>> adj(size());
    for (int i = 0; i < size(); ++i)
      for (int j = 0; j < size(); ++j)
        if (i != j && impl_->weights(i, j) > 0.0) adj[i].push_back(j);
    return adj;
  }

 private:
  struct Impl {
    int n = 0;
    Eigen::MatrixXd weights;
    mutable std::once_flag once;
    Spectrum spectrum;
  };
  std::shared_ptr<Impl> impl_;
};

// Connected components over positive-weight edges; labels are assigned in
// order of the smallest vertex in each component.
inline std::vector<int> connected_components(const Graph& g) {
  const int n = g.size();
  const auto adj = g.adjacency();
  std::vector<int> label(n, -1);
  int next = 0;
  for (int s = 0; s < n; ++s) {
    if (label[s] != -1) continue;
    label[s] = next;
    std::queue<int> q;
    q.push(s);
    while (!q.empty()) {
      const int v = q.front();
      q.pop();
      for (int u : adj[v])
        if (label[u] == -1) {
          label[u] = next;
          q.push(u);
        }
    }
    ++next;
  }
  return label;
}

inline bool is_connected(const Graph& g) {
  const auto label = connected_components(g);
  return std::all_of(label.begin(), label.end(), [](int l) { return l == 0; });
}

// Hop-count distances by BFS from every vertex.  Unreachable pairs get -1;
// they only occur on disconnected input, which is allowed here so the
// function stays usable as a diagnostic.
inline Eigen::MatrixXi geodesic_distances(const Graph& g) {
  const int n = g.size();
  const auto adj = g.adjacency();
  Eigen::MatrixXi dist = Eigen::MatrixXi::Constant(n, n, -1);
  for (int s = 0; s < n; ++s) {
    dist(s, s) = 0;
    std::queue<int> q;
    q.push(s);
    while (!q.empty()) {
      const int v = q.front();
      q.pop();
      for (int u : adj[v])
        if (dist(s, u) == -1) {
          dist(s, u) = dist(s, v) + 1;
          q.push(u);
        }
    }
  }
  return dist;
}

// k-nearest-neighbour graph on point coordinates.  Neighbourhoods are
// symmetrized by union, so every vertex keeps degree >= k.  Weights are
// exp(-d^2 / width); when width <= 0 it defaults to the mean squared
// distance to the k-th neighbour.  The result must be connected.
inline Graph build_knn_graph(const Eigen::MatrixXd& points, int k,
                             double width = 0.0) {
  const int n = static_cast<int>(points.rows());
  if (n < 2) throw std::invalid_argument("need at least 2 points");
  if (k < 1 || k >= n)
    throw std::invalid_argument("neighbour count must satisfy 1 <= k < n");

  Eigen::MatrixXd d2(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      d2(i, j) = (points.row(i) - points.row(j)).squaredNorm();

  // Rank neighbours by (distance, index); ties resolve to the lower index.
  std::vector<std::vector<int>> nearest(n);
  double kth_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    std::vector<int> order;
    order.reserve(n - 1);
    for (int j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (d2(i, a) != d2(i, b)) return d2(i, a) < d2(i, b);
      return a < b;
    });
    order.resize(k);
    kth_sum += d2(i, order.back());
    nearest[i] = std::move(order);
  }
  if (width <= 0.0) width = kth_sum / n;
  if (width <= 0.0)
    throw std::invalid_argument("kernel width came out nonpositive; points coincide");

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j : nearest[i]) {
      const double wij = std::exp(-d2(i, j) / width);
      w(i, j) = wij;
      w(j, i) = wij;
    }
  Graph g(std::move(w));
  const auto label = connected_components(g);
  const int parts = *std::max_element(label.begin(), label.end()) + 1;
  if (parts > 1) {
    std::string msg = "knn graph is disconnected into " + std::to_string(parts) +
                      " components; sizes:";
    std::vector<int> sizes(parts, 0);
    for (int l : label) ++sizes[l];
    for (int c = 0; c < parts; ++c) msg += " " + std::to_string(sizes[c]);
    msg += " (increase k or adjust the point set)";
    throw std::runtime_error(msg);
  }
  return g;
}

// y = U h(Lambda) U^T x with pointwise kernel values over the frequencies.
inline Eigen::VectorXd apply_kernel_filter(const Spectrum& s,
                                           const Eigen::VectorXd& kernel,
                                           const Eigen::VectorXd& x) {
  if (kernel.size() != s.n || x.size() != s.n)
    throw std::invalid_argument("kernel/signal length must equal graph size");
  return s.eigenvectors * (kernel.array() * (s.eigenvectors.transpose() * x).array()).matrix();
}

// Sum over unordered edges of W(i,j) (v(i) - v(j))^2; each edge counted once.
inline double total_variation(const Graph& g, const Eigen::VectorXd& v) {
  if (v.size() != g.size())
    throw std::invalid_argument("signal length must equal graph size");
  double tv = 0.0;
  for (const auto& [i, j, w] : g.edges()) {
    const double diff = v(i) - v(j);
    tv += w * diff * diff;
  }
  return tv;
}

// Total variation of the eigenvector at 0-based frequency index.
inline double eigenvector_total_variation(const Graph& g, int freq_index) {
  const Spectrum& s = g.spectrum();
  if (freq_index < 0 || freq_index >= s.n)
    throw std::invalid_argument("frequency index out of range");
  return total_variation(g, s.eigenvectors.col(freq_index));
}

// --- coordinate and edge-list files ---------------------------------------

// Coordinates: header "id,x,y[,z...]", one row per vertex, ids 0..n-1.
inline void write_coordinates(const std::string& path, const Eigen::MatrixXd& points) {
  std::string text = "id";
  const char* axis_names[] = {"x", "y", "z"};
  for (int c = 0; c < points.cols(); ++c)
    text += "," + (c < 3 ? std::string(axis_names[c]) : "c" + std::to_string(c));
  text += "\n";
  for (int i = 0; i < points.rows(); ++i) {
    text += std::to_string(i);
    for (int c = 0; c < points.cols(); ++c) text += "," + format_double(points(i, c));
    text += "\n";
  }
  write_text(path, text);
}

inline Eigen::MatrixXd read_coordinates(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.size() < 2) throw std::runtime_error("coordinate file has no rows: " + path);
  const auto header = split_csv_line(lines[0]);
  if (header.size() < 2 || header[0] != "id")
    throw std::runtime_error("coordinate file must start with 'id,x,...': " + path);
  const int dims = static_cast<int>(header.size()) - 1;
  const int n = static_cast<int>(lines.size()) - 1;
  Eigen::MatrixXd points(n, dims);
  for (int i = 0; i < n; ++i) {
    const auto cells = split_csv_line(lines[i + 1]);
    if (static_cast<int>(cells.size()) != dims + 1)
      throw std::runtime_error("coordinate row has wrong arity: " + lines[i + 1]);
    if (parse_int(cells[0], path) != i)
      throw std::runtime_error("coordinate ids must run 0..n-1 in order: " + path);
    for (int c = 0; c < dims; ++c) points(i, c) = parse_double(cells[c + 1], path);
  }
  return points;
}

// Edge list: header "i,j,w", one row per unordered edge with i < j.
inline void write_edge_list(const std::string& path, const Graph& g) {
  std::string text = "i,j,w\n";
  for (const auto& [i, j, w] : g.edges())
    text += std::to_string(i) + "," + std::to_string(j) + "," + format_double(w) + "\n";
  write_text(path, text);
}

inline Graph read_edge_list(const std::string& path, int n) {
  const auto lines = read_lines(path);
  if (lines.empty() || split_csv_line(lines[0]) != std::vector<std::string>{"i", "j", "w"})
    throw std::runtime_error("edge list must start with 'i,j,w': " + path);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto cells = split_csv_line(lines[r]);
    if (cells.size() != 3) throw std::runtime_error("edge row has wrong arity: " + lines[r]);
    const int i = parse_int(cells[0], path);
    const int j = parse_int(cells[1], path);
    if (i < 0 || j < 0 || i >= n || j >= n)
      throw std::runtime_error("edge endpoint out of range in " + path);
    const double wij = parse_double(cells[2], path);
    w(i, j) = wij;
    w(j, i) = wij;
  }
  return Graph(std::move(w));
}

}  // namespace lsgp
