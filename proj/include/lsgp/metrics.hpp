#pragma once

// Scalar evaluation metrics and the metrics CSV format.

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lsgp/io.hpp"

namespace lsgp {

// CD = ||C_true - C_est||_F / ||C_true||_F.
inline double covariance_discrepancy(const Eigen::MatrixXd& c_true,
                                     const Eigen::MatrixXd& c_est) {
  if (c_true.rows() != c_est.rows() || c_true.cols() != c_est.cols())
    throw std::invalid_argument("covariance shapes must match");
  const double denom = c_true.norm();
  if (denom == 0.0) throw std::invalid_argument("reference covariance is zero");
  return (c_true - c_est).norm() / denom;
}

struct ErrorMetrics {
  double nme = 0.0;   // ||z - z_hat||_2 / ||z||_2
  double mae = 0.0;   // ||z - z_hat||_1 / L
  double mape = 0.0;  // mean of |z - z_hat| / |z| over nonzero truth entries
  int count = 0;
  int mape_skipped = 0;  // zero-truth entries excluded from MAPE
};

inline ErrorMetrics error_metrics(const Eigen::VectorXd& z_true,
                                  const Eigen::VectorXd& z_est) {
  if (z_true.size() != z_est.size())
    throw std::invalid_argument("prediction length must match the target length");
  if (z_true.size() < 1) throw std::invalid_argument("no entries to score");
  const double znorm = z_true.norm();
  if (znorm == 0.0)
    throw std::invalid_argument("target vector is zero; NME undefined");
  ErrorMetrics m;
  m.count = static_cast<int>(z_true.size());
  m.nme = (z_true - z_est).norm() / znorm;
  m.mae = (z_true - z_est).cwiseAbs().sum() / m.count;
  double mape_sum = 0.0;
  int mape_count = 0;
  for (int i = 0; i < z_true.size(); ++i) {
    if (z_true(i) == 0.0) {
      ++m.mape_skipped;
      continue;
    }
    mape_sum += std::abs(z_true(i) - z_est(i)) / std::abs(z_true(i));
    ++mape_count;
  }
  m.mape = mape_sum / mape_count;  // mape_count >= 1 because ||z|| > 0
  return m;
}

// NMI with max-entropy normalization, log base 2.  Equal partitions (up to
// label permutation) score 1; the degenerate single-cluster pair is equal,
// so it also scores 1.
inline double normalized_mutual_information(const std::vector<int>& a,
                                            const std::vector<int>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("label vectors must be nonempty and equal length");
  const double n = static_cast<double>(a.size());
  std::map<int, int> ca, cb;
  std::map<std::pair<int, int>, int> joint;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++ca[a[i]];
    ++cb[b[i]];
    ++joint[{a[i], b[i]}];
  }
  auto entropy = [&](const std::map<int, int>& counts) {
    double h = 0.0;
    for (const auto& [label, c] : counts) {
      (void)label;
      const double p = c / n;
      h -= p * std::log2(p);
    }
    return h;
  };
  const double ha = entropy(ca);
  const double hb = entropy(cb);
  if (ha == 0.0 && hb == 0.0) return 1.0;  // both single-cluster: identical
  double mi = 0.0;
  for (const auto& [pair, c] : joint) {
    const double pxy = c / n;
    const double px = ca[pair.first] / n;
    const double py = cb[pair.second] / n;
    mi += pxy * std::log2(pxy / (px * py));
  }
  const double nmi = mi / std::max(ha, hb);
  return std::min(1.0, std::max(0.0, nmi));  // clamp float noise into [0,1]
}

struct MetricReport {
  std::string name;
  double value = 0.0;
  std::string details;
};

inline void write_metrics(const std::string& path,
                          const std::vector<MetricReport>& rows) {
  std::string text = "metric,value,details\n";
  for (const auto& r : rows)
    text += r.name + "," + format_double(r.value) + "," + r.details + "\n";
  write_text(path, text);
}

}  // namespace lsgp
