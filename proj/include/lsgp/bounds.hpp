#pragma once

// Machine-checkable forms of the covariance localization guarantees.
//
// Given a model and a partition with one component per part, the membership
// localization parameters are extracted as the tightest feasible values:
//   delta = max_{k != m} max_{i in V_k} |g_m(i)|   (off-part ceiling)
//   mu    = min_k  min_{i in V_k} g_k(i)           (on-part floor, must be > 0)
//   gamma = max_k  max_{i in V_k} g_k(i)           (global ceiling)
//   eps   = max_{k != m} sum_i |h_k(i) h_m(i)|     (spectral overlap)
//   kappa = number of leading frequencies outside which every kernel is
//           exactly zero (band-limit cutoff)
// All three checks report lhs, rhs and a holds flag with a 1e-9 additive
// slack for float noise.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lsgp/graph.hpp"
#include "lsgp/model.hpp"
#include "lsgp/partition.hpp"

namespace lsgp {

struct AssumptionParams {
  double delta = 0.0;
  double mu = 0.0;
  double gamma = 0.0;
  double epsilon = 0.0;
  int kappa_c = 0;   // 1-based cutoff: h_k(i) = 0 for all 0-based i >= kappa_c
  double w_min = 0.0;
  std::vector<double> sigma_sq;  // per part: sum_{i in V_k} C_{x_k}(i,i)
};

inline AssumptionParams extract_params(const Model& m, const Partition& p) {
  const int n = m.size();
  const int k = m.order();
  if (static_cast<int>(p.labels.size()) != n)
    throw std::invalid_argument("partition does not cover the model's graph");
  if (p.parts != k)
    throw std::invalid_argument("need one model component per part");
  const auto parts = p.members();

  AssumptionParams out;
  out.mu = std::numeric_limits<double>::infinity();
  for (int c = 0; c < k; ++c)
    for (int v : parts[c]) {
      out.mu = std::min(out.mu, m.memberships(v, c));
      out.gamma = std::max(out.gamma, m.memberships(v, c));
      for (int o = 0; o < k; ++o)
        if (o != c) out.delta = std::max(out.delta, std::abs(m.memberships(v, o)));
    }
  if (out.mu <= 0.0)
    throw std::invalid_argument(
        "Assumption 1 violated: memberships must be strictly positive on the own part "
        "(floor " +
        std::to_string(out.mu) + ")");

  for (int a = 0; a < k; ++a)
    for (int b = a + 1; b < k; ++b)
      out.epsilon = std::max(
          out.epsilon,
          (m.kernels.col(a).array() * m.kernels.col(b).array()).abs().sum());

  out.kappa_c = 0;
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c)
      if (m.kernels(i, c) != 0.0) out.kappa_c = i + 1;

  out.w_min = std::numeric_limits<double>::infinity();
  for (const auto& [i, j, w] : m.graph.edges()) {
    (void)i;
    (void)j;
    out.w_min = std::min(out.w_min, w);
  }

  const Spectrum& s = m.graph.spectrum();
  out.sigma_sq.assign(k, 0.0);
  for (int c = 0; c < k; ++c) {
    // diag of U diag(h_c^2) U^T at vertex v is sum_i h_c(i)^2 u_i(v)^2
    const Eigen::VectorXd h2 = m.kernels.col(c).array().square();
    for (int v : parts[c])
      out.sigma_sq[c] += (s.eigenvectors.row(v).array().square() *
                          h2.transpose().array()).sum();
  }
  return out;
}

struct CheckResult {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
  double slack = 0.0;  // signed distance to the bound (>= -1e-9 when holds)
};

namespace detail {

inline double membership_error_bound(const AssumptionParams& a, int order) {
  const double r = a.delta / a.mu;
  const double km1 = order - 1;
  return 2.0 * km1 * r + km1 * km1 * r * r;
}

}  // namespace detail

// Membership-normalized covariance blocks approximate the component
// cross-covariances: every entry of
// |S_k G_k^+ C_x (G_m^+)^T S_m^T - S_k C_{x_k x_m} S_m^T| is at most
// 2(K-1)(delta/mu) + (K-1)^2 (delta/mu)^2.
inline CheckResult check_theorem2(const Model& m, const Partition& p, int k, int mm) {
  if (k < 0 || mm < 0 || k >= m.order() || mm >= m.order())
    throw std::invalid_argument("component index out of range");
  const AssumptionParams a = extract_params(m, p);
  const auto parts = p.members();
  const Eigen::MatrixXd cov = model_covariance(m);
  const Eigen::MatrixXd cross = component_cross_covariance(m, k, mm);

  // Diagonal Moore-Penrose inverse: entries below 1e-12 in magnitude map to 0.
  auto pinv = [&](int v, int c) {
    const double g = m.memberships(v, c);
    return std::abs(g) < 1e-12 ? 0.0 : 1.0 / g;
  };
  CheckResult r;
  for (int va : parts[k])
    for (int vb : parts[mm]) {
      const double e = std::abs(pinv(va, k) * cov(va, vb) * pinv(vb, mm) - cross(va, vb));
      r.lhs = std::max(r.lhs, e);
    }
  r.rhs = detail::membership_error_bound(a, m.order());
  r.slack = r.rhs - r.lhs;
  r.holds = r.lhs <= r.rhs + 1e-9;
  return r;
}

// Average squared cross-part covariance is controlled by the spectral
// overlap eps and the membership localization.
inline CheckResult check_theorem3(const Model& m, const Partition& p) {
  const AssumptionParams a = extract_params(m, p);
  const auto parts = p.members();
  const Eigen::MatrixXd cov = model_covariance(m);
  const double n = m.size();
  const int k = m.order();

  double cross_sq = 0.0;
  double same_pairs = 0.0;
  for (int c = 0; c < k; ++c) same_pairs += double(parts[c].size()) * parts[c].size();
  const double cross_pairs = n * n - same_pairs;
  for (int ca = 0; ca < k; ++ca)
    for (int cb = 0; cb < k; ++cb) {
      if (ca == cb) continue;
      for (int va : parts[ca])
        for (int vb : parts[cb]) cross_sq += cov(va, vb) * cov(va, vb);
    }

  CheckResult r;
  const double g4 = std::pow(a.gamma, 4);
  r.lhs = cross_sq / (g4 * n * n);
  const double memb = detail::membership_error_bound(a, k);
  r.rhs = (2.0 / n) * k * (k - 1) * a.epsilon * a.epsilon +
          (2.0 / (n * n)) * cross_pairs * memb * memb;
  r.slack = r.rhs - r.lhs;
  r.holds = r.lhs <= r.rhs + 1e-9;
  return r;
}

// Average within-part covariance magnitude stays above the process variance
// minus a smoothness penalty (eigenvector variation over geodesic spreads)
// and a membership-leakage penalty.  Needs exactly band-limited kernels.
inline CheckResult check_theorem4(const Model& m, const Partition& p) {
  const AssumptionParams a = extract_params(m, p);
  const int n = m.size();
  const int k = m.order();
  if (a.kappa_c >= n)
    throw std::invalid_argument(
        "kernels are not band-limited (no exact zero tail); use exact-support "
        "kernels such as bumps to check this bound");
  const auto parts = p.members();
  const Eigen::MatrixXd cov = model_covariance(m);
  const Eigen::MatrixXi dist = geodesic_distances(m.graph);

  double lhs_sum = 0.0;
  double d2_sum = 0.0;
  double same_pairs = 0.0;
  double var_sum = 0.0;
  for (int c = 0; c < k; ++c) {
    for (int va : parts[c])
      for (int vb : parts[c]) {
        lhs_sum += std::abs(cov(va, vb));
        d2_sum += double(dist(va, vb)) * dist(va, vb);
      }
    same_pairs += double(parts[c].size()) * parts[c].size();
    var_sum += double(parts[c].size()) * a.sigma_sq[c];
  }
  double tv_sum = 0.0;
  for (int i = 0; i < a.kappa_c; ++i) tv_sum += eigenvector_total_variation(m.graph, i);

  CheckResult r;
  const double nn = double(n) * n;
  r.lhs = lhs_sum / (nn * a.mu * a.mu);
  r.rhs = var_sum / nn - d2_sum * tv_sum / (2.0 * nn * a.w_min) -
          same_pairs * detail::membership_error_bound(a, k) / nn;
  r.slack = r.lhs - r.rhs;
  r.holds = r.lhs >= r.rhs - 1e-9;
  return r;
}

}  // namespace lsgp
