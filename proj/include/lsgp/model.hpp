#pragma once

// Locally stationary graph process (LSGP) models.
//
// A model of order K on an n-vertex graph is the pair (G, h): membership
// vectors g_1..g_K over vertices and unit-norm kernels h_1..h_K over graph
// frequencies.  The process is x = sum_k diag(g_k) U diag(h_k) U^T w with
// white unit-variance w, so the joint filter H = sum_k diag(g_k) U diag(h_k) U^T
// determines the covariance C = H H^T.
//
// Canonical form kept by every constructor: ||h_k|| = 1 with kernel scale
// absorbed into g_k, and the largest-magnitude entry of each h_k positive
// (g_k, and poly coefficients when present, flip in tandem so the process
// is unchanged).

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "lsgp/graph.hpp"
#include "lsgp/random.hpp"

namespace lsgp {

// Vandermonde evaluation of polynomial kernels: column k is
// h_k(i) = sum_q b(q, k) * lambda_i^q (not normalized here).
inline Eigen::MatrixXd polynomial_kernels(const Spectrum& s,
                                          const Eigen::MatrixXd& coeffs) {
  const int q = static_cast<int>(coeffs.rows());
  if (q < 1) throw std::invalid_argument("polynomial degree must be at least 0");
  Eigen::MatrixXd vander(s.n, q);
  vander.col(0).setOnes();
  for (int p = 1; p < q; ++p)
    vander.col(p) = vander.col(p - 1).array() * s.frequencies.array();
  return vander * coeffs;
}

struct Model {
  Graph graph;
  Eigen::MatrixXd memberships;                 // n x K, column k = g_k
  Eigen::MatrixXd kernels;                     // n x K, unit-norm columns
  std::optional<Eigen::MatrixXd> poly_coeffs;  // Q x K when polynomial

  int size() const { return static_cast<int>(memberships.rows()); }
  int order() const { return static_cast<int>(memberships.cols()); }
};

inline Model make_model(Graph graph, Eigen::MatrixXd memberships,
                        Eigen::MatrixXd kernels,
                        std::optional<Eigen::MatrixXd> poly_coeffs = std::nullopt) {
  const int n = graph.size();
  const int k = static_cast<int>(memberships.cols());
  if (memberships.rows() != n || kernels.rows() != n)
    throw std::invalid_argument("memberships and kernels must have n rows");
  if (kernels.cols() != k || k < 1)
    throw std::invalid_argument("memberships and kernels must share K >= 1 columns");
  if (poly_coeffs && poly_coeffs->cols() != k)
    throw std::invalid_argument("poly coefficients must have K columns");

  for (int c = 0; c < k; ++c) {
    const double s = kernels.col(c).norm();
    if (s <= 0.0)
      throw std::invalid_argument("kernel " + std::to_string(c) + " is zero");
    kernels.col(c) /= s;
    memberships.col(c) *= s;
    if (poly_coeffs) poly_coeffs->col(c) /= s;

    int arg = 0;
    double best = std::abs(kernels(0, c));
    for (int i = 1; i < n; ++i)
      if (std::abs(kernels(i, c)) > best) {
        best = std::abs(kernels(i, c));
        arg = i;
      }
    if (kernels(arg, c) < 0.0) {
      kernels.col(c) = -kernels.col(c);
      memberships.col(c) = -memberships.col(c);
      if (poly_coeffs) poly_coeffs->col(c) = -poly_coeffs->col(c);
    }
  }
  Model m;
  m.graph = std::move(graph);
  m.memberships = std::move(memberships);
  m.kernels = std::move(kernels);
  m.poly_coeffs = std::move(poly_coeffs);
  return m;
}

// Builds the kernels from polynomial coefficients over the graph frequencies.
inline Model make_polynomial_model(Graph graph, Eigen::MatrixXd memberships,
                                   Eigen::MatrixXd coeffs) {
  Eigen::MatrixXd kernels = polynomial_kernels(graph.spectrum(), coeffs);
  return make_model(std::move(graph), std::move(memberships), std::move(kernels),
                    std::move(coeffs));
}

// H = sum_k diag(g_k) U diag(h_k) U^T.
inline Eigen::MatrixXd filter_matrix(const Model& m) {
  const Spectrum& s = m.graph.spectrum();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(s.n, s.n);
  for (int k = 0; k < m.order(); ++k)
    h += m.memberships.col(k).asDiagonal() *
         (s.eigenvectors * m.kernels.col(k).asDiagonal() * s.eigenvectors.transpose());
  return h;
}

// M = sum_k g_k h_k^T; row i is the kernel active at vertex i, and
// H = (U o M) U^T reproduces filter_matrix exactly.
inline Eigen::MatrixXd vertex_frequency_spectrum(const Model& m) {
  Eigen::MatrixXd spec = Eigen::MatrixXd::Zero(m.size(), m.size());
  for (int k = 0; k < m.order(); ++k)
    spec += m.memberships.col(k) * m.kernels.col(k).transpose();
  return spec;
}

// Largest membership variation rate g_k^T L g_k across components.
inline double variation_rate(const Model& m) {
  const Spectrum& s = m.graph.spectrum();
  double c = 0.0;
  for (int k = 0; k < m.order(); ++k)
    c = std::max(c, double(m.memberships.col(k).transpose() * s.laplacian *
                           m.memberships.col(k)));
  return c;
}

struct VariationBoundReport {
  double spectrum_variation = 0.0;  // tr(M^T L M)
  double bound = 0.0;               // K^2 * max_k g_k^T L g_k
  bool holds = false;
};

// tr(M^T L M) <= K^2 * C where C bounds the membership variation rates.
inline VariationBoundReport spectrum_variation_bound_check(const Model& m) {
  const Spectrum& s = m.graph.spectrum();
  const Eigen::MatrixXd spec = vertex_frequency_spectrum(m);
  VariationBoundReport r;
  r.spectrum_variation = (spec.transpose() * s.laplacian * spec).trace();
  r.bound = double(m.order()) * double(m.order()) * variation_rate(m);
  r.holds = r.spectrum_variation <= r.bound + 1e-9;
  return r;
}

inline Eigen::MatrixXd model_covariance(const Model& m) {
  const Eigen::MatrixXd h = filter_matrix(m);
  return h * h.transpose();
}

// Cross-covariance of latent components k and m: U diag(h_k o h_m) U^T.
inline Eigen::MatrixXd component_cross_covariance(const Model& m, int k, int l) {
  if (k < 0 || l < 0 || k >= m.order() || l >= m.order())
    throw std::invalid_argument("component index out of range");
  const Spectrum& s = m.graph.spectrum();
  const Eigen::VectorXd prod =
      (m.kernels.col(k).array() * m.kernels.col(l).array()).matrix();
  return s.eigenvectors * prod.asDiagonal() * s.eigenvectors.transpose();
}

// --- realizations ---------------------------------------------------------

// A batch of process realizations; NaN marks an unobserved entry.
struct RealizationSet {
  Eigen::MatrixXd values;  // n x count

  int size() const { return static_cast<int>(values.rows()); }
  int count() const { return static_cast<int>(values.cols()); }
  bool observed(int vertex, int realization) const {
    return !std::isnan(values(vertex, realization));
  }
  std::vector<int> observed_indices(int realization) const {
    std::vector<int> idx;
    for (int v = 0; v < size(); ++v)
      if (observed(v, realization)) idx.push_back(v);
    return idx;
  }
  std::vector<int> missing_indices(int realization) const {
    std::vector<int> idx;
    for (int v = 0; v < size(); ++v)
      if (!observed(v, realization)) idx.push_back(v);
    return idx;
  }
};

// Draws realizations x = H w, w ~ N(0, I).  When snr_db is given, white
// noise is added with power set from the mean per-realization signal energy:
// sigma^2 = (mean_l ||x_l||^2 / n) / 10^(snr_db / 10).
inline RealizationSet sample_realizations(const Model& m, int count,
                                          std::uint64_t seed,
                                          std::optional<double> snr_db = std::nullopt) {
  if (count < 1) throw std::invalid_argument("realization count must be positive");
  const Eigen::MatrixXd h = filter_matrix(m);
  Rng rng(seed);
  RealizationSet set;
  set.values = h * rng.normal_matrix(m.size(), count);
  if (snr_db) {
    const double signal_power = set.values.squaredNorm() / double(count) / m.size();
    const double sigma = std::sqrt(signal_power / std::pow(10.0, *snr_db / 10.0));
    set.values += sigma * rng.normal_matrix(m.size(), count);
  }
  return set;
}

// --- extension and restriction -------------------------------------------

namespace detail {

inline void check_injection(const std::vector<int>& map, int domain, int range,
                            const char* what) {
  if (static_cast<int>(map.size()) != domain)
    throw std::invalid_argument(std::string(what) + " map must cover the subgraph");
  std::vector<char> seen(range, 0);
  for (int v : map) {
    if (v < 0 || v >= range)
      throw std::invalid_argument(std::string(what) + " map entry out of range");
    if (seen[v]) throw std::invalid_argument(std::string(what) + " map must be injective");
    seen[v] = 1;
  }
}

inline std::vector<int> identity_map(int n) {
  std::vector<int> m(n);
  for (int i = 0; i < n; ++i) m[i] = i;
  return m;
}

}  // namespace detail

// Lifts a subgraph model onto a larger graph.  Memberships and kernel values
// scatter through the vertex and frequency injections; unmapped vertices get
// zero membership, so the extended process vanishes there.  Polynomial
// coefficients do not survive the change of spectrum and are dropped.
inline Model extend_model(const Model& sub, Graph target,
                          std::vector<int> vertex_map = {},
                          std::vector<int> freq_map = {}) {
  const int ns = sub.size();
  const int nt = target.size();
  if (nt < ns) throw std::invalid_argument("target graph is smaller than the model");
  if (vertex_map.empty()) vertex_map = detail::identity_map(ns);
  if (freq_map.empty()) freq_map = detail::identity_map(ns);
  detail::check_injection(vertex_map, ns, nt, "vertex");
  detail::check_injection(freq_map, ns, nt, "frequency");

  Eigen::MatrixXd memberships = Eigen::MatrixXd::Zero(nt, sub.order());
  Eigen::MatrixXd kernels = Eigen::MatrixXd::Zero(nt, sub.order());
  for (int i = 0; i < ns; ++i) {
    memberships.row(vertex_map[i]) = sub.memberships.row(i);
    kernels.row(freq_map[i]) = sub.kernels.row(i);
  }
  return make_model(std::move(target), std::move(memberships), std::move(kernels));
}

// Projects a model onto a subgraph: memberships and kernel values gather
// through the injections, kernels renormalize with the lost scale absorbed
// into the memberships.  Components whose kernel restricts to zero are
// dropped, so the result has at most K components.
inline Model restrict_model(const Model& m, Graph sub,
                            std::vector<int> vertex_map = {},
                            std::vector<int> freq_map = {}) {
  const int ns = sub.size();
  const int nt = m.size();
  if (ns > nt) throw std::invalid_argument("subgraph is larger than the model");
  if (vertex_map.empty()) vertex_map = detail::identity_map(ns);
  if (freq_map.empty()) freq_map = detail::identity_map(ns);
  detail::check_injection(vertex_map, ns, nt, "vertex");
  detail::check_injection(freq_map, ns, nt, "frequency");

  std::vector<int> keep;
  Eigen::MatrixXd memberships(ns, m.order());
  Eigen::MatrixXd kernels(ns, m.order());
  for (int k = 0; k < m.order(); ++k) {
    for (int i = 0; i < ns; ++i) {
      memberships(i, k) = m.memberships(vertex_map[i], k);
      kernels(i, k) = m.kernels(freq_map[i], k);
    }
    if (kernels.col(k).norm() > 0.0) keep.push_back(k);
  }
  if (keep.empty())
    throw std::invalid_argument("restriction produced no usable component");
  Eigen::MatrixXd g(ns, static_cast<int>(keep.size()));
  Eigen::MatrixXd h(ns, static_cast<int>(keep.size()));
  for (std::size_t c = 0; c < keep.size(); ++c) {
    g.col(static_cast<int>(c)) = memberships.col(keep[c]);
    h.col(static_cast<int>(c)) = kernels.col(keep[c]);
  }
  return make_model(std::move(sub), std::move(g), std::move(h));
}

// --- serialization --------------------------------------------------------

inline nlohmann::json model_to_json(const Model& m) {
  nlohmann::json j;
  j["n"] = m.size();
  j["K"] = m.order();
  std::vector<double> g, h;
  for (int i = 0; i < m.size(); ++i)
    for (int k = 0; k < m.order(); ++k) {
      g.push_back(m.memberships(i, k));
      h.push_back(m.kernels(i, k));
    }
  j["G"] = g;
  j["h"] = h;
  if (m.poly_coeffs) {
    j["Q"] = static_cast<int>(m.poly_coeffs->rows());
    std::vector<double> b;
    for (int q = 0; q < m.poly_coeffs->rows(); ++q)
      for (int k = 0; k < m.order(); ++k) b.push_back((*m.poly_coeffs)(q, k));
    j["b"] = b;
  }
  return j;
}

inline Model model_from_json(const nlohmann::json& j, Graph graph) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (key != "n" && key != "K" && key != "Q" && key != "G" && key != "h" && key != "b")
      throw std::runtime_error("unknown model field: " + key);
  }
  const int n = j.at("n").get<int>();
  const int k = j.at("K").get<int>();
  if (n != graph.size())
    throw std::runtime_error("model size does not match the graph");
  if (k < 1) throw std::runtime_error("model order must be positive");
  const auto g_flat = j.at("G").get<std::vector<double>>();
  const auto h_flat = j.at("h").get<std::vector<double>>();
  if (static_cast<int>(g_flat.size()) != n * k || static_cast<int>(h_flat.size()) != n * k)
    throw std::runtime_error("model arrays have wrong length");
  Eigen::MatrixXd memberships(n, k), kernels(n, k);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) {
      memberships(i, c) = g_flat[i * k + c];
      kernels(i, c) = h_flat[i * k + c];
    }
  for (int c = 0; c < k; ++c)
    if (std::abs(kernels.col(c).norm() - 1.0) > 1e-9)
      throw std::runtime_error("stored kernels must be unit norm");

  std::optional<Eigen::MatrixXd> coeffs;
  if (j.contains("b")) {
    if (!j.contains("Q")) throw std::runtime_error("coefficients need a Q field");
    const int q = j.at("Q").get<int>();
    const auto b_flat = j.at("b").get<std::vector<double>>();
    if (static_cast<int>(b_flat.size()) != q * k)
      throw std::runtime_error("coefficient array has wrong length");
    coeffs.emplace(q, k);
    for (int r = 0; r < q; ++r)
      for (int c = 0; c < k; ++c) (*coeffs)(r, c) = b_flat[r * k + c];
    Eigen::MatrixXd rebuilt = polynomial_kernels(graph.spectrum(), *coeffs);
    for (int c = 0; c < k; ++c) {
      const double s = rebuilt.col(c).norm();
      if (s <= 0.0 || (rebuilt.col(c) / s - kernels.col(c)).norm() > 1e-9)
        throw std::runtime_error("stored kernels disagree with the coefficients");
    }
  }
  return make_model(std::move(graph), std::move(memberships), std::move(kernels),
                    std::move(coeffs));
}

// --- realization files ----------------------------------------------------

// One row per realization, one column per vertex, empty cells for missing
// entries.
inline void write_realizations(const std::string& path, const RealizationSet& set) {
  std::string text;
  for (int v = 0; v < set.size(); ++v)
    text += (v ? ",v" : "v") + std::to_string(v);
  text += "\n";
  for (int l = 0; l < set.count(); ++l) {
    for (int v = 0; v < set.size(); ++v) {
      if (v) text += ",";
      if (set.observed(v, l)) text += format_double(set.values(v, l));
    }
    text += "\n";
  }
  write_text(path, text);
}

inline RealizationSet read_realizations(const std::string& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw std::runtime_error("realization file is empty: " + path);
  std::size_t first = 0;
  const auto head = split_csv_line(lines[0]);
  bool has_header = false;
  for (const auto& cell : head)
    if (!cell.empty() && !looks_numeric(cell)) has_header = true;
  if (has_header) first = 1;
  const int n = static_cast<int>(head.size());
  const int count = static_cast<int>(lines.size() - first);
  if (count < 1) throw std::runtime_error("realization file has no rows: " + path);
  RealizationSet set;
  set.values.resize(n, count);
  for (int l = 0; l < count; ++l) {
    const auto cells = split_csv_line(lines[first + l]);
    if (static_cast<int>(cells.size()) != n)
      throw std::runtime_error("realization row has wrong arity: " + lines[first + l]);
    for (int v = 0; v < n; ++v)
      set.values(v, l) = cells[v].empty()
                             ? std::numeric_limits<double>::quiet_NaN()
                             : parse_double(cells[v], path);
  }
  return set;
}

}  // namespace lsgp
