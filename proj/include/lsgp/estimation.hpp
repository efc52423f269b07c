#pragma once

// Covariance estimation from partially observed realizations and LMMSE
// interpolation of missing entries.
//
// The covariance estimator is pairwise available-case: entry (i,j) averages
// x(i)x(j) over the realizations observing both vertices, after removing
// each vertex's available-case mean.  The result is symmetric but need not
// be PSD; that indefiniteness is a real property of the estimator and is
// preserved (interpolation quality downstream reflects it).

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "lsgp/model.hpp"

namespace lsgp {

struct CovarianceEstimate {
  Eigen::MatrixXd matrix;       // n x n symmetric, possibly indefinite
  Eigen::MatrixXi pair_counts;  // co-observation counts; diagonal = per-vertex counts
};

// A vertex observed in no realization gets zero rows and a zero diagonal
// count; callers can detect that from pair_counts.
inline CovarianceEstimate sample_covariance(const RealizationSet& r) {
  const int n = r.size();
  const int count = r.count();
  if (count < 2) throw std::invalid_argument("need at least 2 realizations");

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
  Eigen::VectorXi seen = Eigen::VectorXi::Zero(n);
  for (int l = 0; l < count; ++l)
    for (int v = 0; v < n; ++v)
      if (r.observed(v, l)) {
        mean(v) += r.values(v, l);
        ++seen(v);
      }
  for (int v = 0; v < n; ++v)
    if (seen(v) > 0) mean(v) /= seen(v);

  CovarianceEstimate est;
  est.matrix = Eigen::MatrixXd::Zero(n, n);
  est.pair_counts = Eigen::MatrixXi::Zero(n, n);
  for (int l = 0; l < count; ++l) {
    const auto obs = r.observed_indices(l);
    for (std::size_t a = 0; a < obs.size(); ++a) {
      const double xa = r.values(obs[a], l) - mean(obs[a]);
      for (std::size_t b = a; b < obs.size(); ++b) {
        const double xb = r.values(obs[b], l) - mean(obs[b]);
        est.matrix(obs[a], obs[b]) += xa * xb;
        est.pair_counts(obs[a], obs[b]) += 1;
      }
    }
  }
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      if (est.pair_counts(i, j) > 0) est.matrix(i, j) /= est.pair_counts(i, j);
      est.matrix(j, i) = est.matrix(i, j);
      est.pair_counts(j, i) = est.pair_counts(i, j);
    }
  return est;
}

struct InterpolationResult {
  std::vector<int> vertices;   // missing vertex indices, ascending
  Eigen::VectorXd estimates;   // aligned with vertices
  bool ridge_applied = false;
};

// LMMSE fill: z_hat = C_zy C_y^{-1} y with blocks cut from cov by the mask.
// A ridge eps * I with eps = 1e-8 tr(C_y)/|y| is added only when the
// condition number of C_y exceeds 1e12 (covers singular and indefinite
// near-degenerate blocks); the flag records that it happened.
inline InterpolationResult lmmse_interpolate(const Eigen::MatrixXd& cov,
                                             const Eigen::VectorXd& observed_values,
                                             std::vector<int> observed_indices) {
  const int n = static_cast<int>(cov.rows());
  if (cov.cols() != n) throw std::invalid_argument("covariance must be square");
  if (observed_indices.empty())
    throw std::invalid_argument("LMMSE needs at least one observed vertex");
  if (static_cast<int>(observed_indices.size()) != observed_values.size())
    throw std::invalid_argument("observed values and indices must align");

  // Canonicalize the mask so estimates do not depend on its ordering.
  std::vector<int> order(observed_indices.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return observed_indices[a] < observed_indices[b];
  });
  std::vector<int> obs(order.size());
  Eigen::VectorXd y(static_cast<int>(order.size()));
  for (std::size_t i = 0; i < order.size(); ++i) {
    obs[i] = observed_indices[order[i]];
    y(static_cast<int>(i)) = observed_values(order[i]);
    if (obs[i] < 0 || obs[i] >= n)
      throw std::invalid_argument("observed index out of range");
    if (i > 0 && obs[i] == obs[i - 1])
      throw std::invalid_argument("duplicate observed index");
  }

  std::vector<char> is_obs(n, 0);
  for (int v : obs) is_obs[v] = 1;
  InterpolationResult res;
  for (int v = 0; v < n; ++v)
    if (!is_obs[v]) res.vertices.push_back(v);
  const int nz = static_cast<int>(res.vertices.size());
  res.estimates.resize(nz);
  if (nz == 0) return res;  // fully observed: nothing to estimate

  const int no = static_cast<int>(obs.size());
  Eigen::MatrixXd cy(no, no);
  Eigen::MatrixXd czy(nz, no);
  for (int a = 0; a < no; ++a) {
    for (int b = 0; b < no; ++b) cy(a, b) = cov(obs[a], obs[b]);
    for (int zi = 0; zi < nz; ++zi) czy(zi, a) = cov(res.vertices[zi], obs[a]);
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cy);
  const Eigen::VectorXd absev = es.eigenvalues().cwiseAbs();
  const double emax = absev.maxCoeff();
  const double emin = absev.minCoeff();
  if (emax <= 0.0 || emin <= emax / 1e12) {
    double eps = 1e-8 * cy.trace() / no;
    if (eps <= 0.0) eps = 1e-8;
    cy.diagonal().array() += eps;
    res.ridge_applied = true;
  }
  res.estimates = czy * cy.ldlt().solve(y);
  return res;
}

// Convenience form on a NaN-masked signal.
inline InterpolationResult lmmse_interpolate(const Eigen::MatrixXd& cov,
                                             const Eigen::VectorXd& signal_with_nan) {
  std::vector<int> obs;
  std::vector<double> vals;
  for (int v = 0; v < signal_with_nan.size(); ++v)
    if (!std::isnan(signal_with_nan(v))) {
      obs.push_back(v);
      vals.push_back(signal_with_nan(v));
    }
  return lmmse_interpolate(cov, Eigen::Map<Eigen::VectorXd>(vals.data(), vals.size()),
                           std::move(obs));
}

struct SetInterpolation {
  Eigen::MatrixXd completed;                           // values with gaps filled
  std::vector<std::tuple<int, int, double>> estimates; // (realization, vertex, value)
  int ridge_count = 0;                                 // realizations that needed a ridge
};

inline SetInterpolation interpolate_missing(const Eigen::MatrixXd& cov,
                                            const RealizationSet& set) {
  SetInterpolation out;
  out.completed = set.values;
  for (int l = 0; l < set.count(); ++l) {
    if (set.missing_indices(l).empty()) continue;
    const InterpolationResult r = lmmse_interpolate(cov, set.values.col(l));
    if (r.ridge_applied) ++out.ridge_count;
    for (std::size_t i = 0; i < r.vertices.size(); ++i) {
      out.completed(r.vertices[i], l) = r.estimates(static_cast<int>(i));
      out.estimates.emplace_back(l, r.vertices[i], r.estimates(static_cast<int>(i)));
    }
  }
  return out;
}

}  // namespace lsgp
