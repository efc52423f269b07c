#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lsgp/learner.hpp"
#include "lsgp/metrics.hpp"
#include "lsgp/random.hpp"
#include "lsgp/synthetic.hpp"

using namespace lsgp;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

Graph random_graph(int n, Rng& rng) {
  for (int attempt = 0; attempt < 50; ++attempt) {
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (rng.uniform() < 0.5) w(i, j) = w(j, i) = 0.2 + rng.uniform();
    Graph g(w);
    bool ok = true;
    for (int i = 0; i < n; ++i) ok = ok && g.weights().row(i).sum() > 0.0;
    if (ok && is_connected(g)) return g;
  }
  throw std::runtime_error("random graph generation failed");
}

Graph cycle(int n) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) w(i, (i + 1) % n) = w((i + 1) % n, i) = 1.0;
  return Graph(w);
}

// Joint filter built directly from stacked (g, b): H = sum_k G_k sum_q b_kq L^q.
// Independent of the lifted prediction code path.
Eigen::MatrixXd direct_filter(const Graph& graph, const Eigen::MatrixXd& g,
                              const Eigen::MatrixXd& b) {
  const int n = graph.size();
  const int order = static_cast<int>(g.cols());
  const int degree = static_cast<int>(b.rows());
  Eigen::MatrixXd lp = Eigen::MatrixXd::Identity(n, n);
  std::vector<Eigen::MatrixXd> pows;
  for (int q = 0; q < degree; ++q) {
    pows.push_back(lp);
    lp = lp * graph.spectrum().laplacian;
  }
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < order; ++k) {
    Eigen::MatrixXd poly = Eigen::MatrixXd::Zero(n, n);
    for (int q = 0; q < degree; ++q) poly += b(q, k) * pows[q];
    h += g.col(k).asDiagonal() * poly;
  }
  return h;
}

}  // namespace

TEST_CASE("laplacian powers") {
  Rng rng(60);
  Graph g = random_graph(5, rng);
  const auto lpow = laplacian_powers(g.spectrum(), 3);
  REQUIRE(lpow.size() == 5);  // L^0 .. L^4
  REQUIRE((lpow[0] - Eigen::MatrixXd::Identity(5, 5)).norm() == 0.0);
  REQUIRE((lpow[1] - g.spectrum().laplacian).norm() == 0.0);
  REQUIRE((lpow[4] - lpow[2] * lpow[2]).norm() < 1e-12);
  REQUIRE_THROWS_AS(laplacian_powers(g.spectrum(), 0), std::invalid_argument);
}

TEST_CASE("lifted objectives agree with the unlifted forms at rank one") {
  // f1(gg^T, bb^T) must equal ||Chat - HH^T||_F^2 with H assembled directly,
  // and f2(gg^T) must equal tr(G^T L G).  Two independent evaluation routes.
  Rng rng(61);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 4 + int(rng.index(5));
    const int order = 1 + int(rng.index(3));
    const int degree = 1 + int(rng.index(4));
    Graph graph = random_graph(n, rng);
    const Eigen::MatrixXd chat = rng.normal_matrix(n, n) +
                                 Eigen::MatrixXd(rng.normal_matrix(n, n).transpose());
    const Eigen::MatrixXd sym_chat = 0.5 * (chat + chat.transpose());

    const Eigen::MatrixXd g = rng.normal_matrix(n, order);
    const Eigen::MatrixXd b = rng.normal_matrix(degree, order);
    Eigen::VectorXd gs(n * order), bs(degree * order);
    for (int k = 0; k < order; ++k) {
      gs.segment(k * n, n) = g.col(k);
      bs.segment(k * degree, degree) = b.col(k);
    }
    const Eigen::MatrixXd gamma = gs * gs.transpose();
    const Eigen::MatrixXd bmat = bs * bs.transpose();

    const Eigen::MatrixXd h = direct_filter(graph, g, b);
    const double direct = (sym_chat - h * h.transpose()).squaredNorm();
    const double lifted = objective_f1(gamma, bmat, sym_chat, graph.spectrum());
    REQUIRE(std::abs(lifted - direct) < 1e-8 * (1.0 + sym_chat.squaredNorm()));

    const double f2 = objective_f2(gamma, graph.spectrum());
    const double trace_form = (g.transpose() * graph.spectrum().laplacian * g).trace();
    REQUIRE(std::abs(f2 - trace_form) < 1e-10 * (1.0 + std::abs(trace_form)));
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  Rng rng(62);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 4, order = 2, degree = 2;
    Graph graph = random_graph(n, rng);
    const Spectrum& s = graph.spectrum();
    Eigen::MatrixXd chat = rng.normal_matrix(n, n);
    chat = (0.5 * (chat + chat.transpose())).eval();
    Eigen::MatrixXd gamma = rng.normal_matrix(n * order, n * order);
    gamma = (gamma * gamma.transpose() / (n * order)).eval();
    Eigen::MatrixXd bmat = rng.normal_matrix(degree * order, degree * order);
    bmat = (bmat * bmat.transpose() / (degree * order)).eval();

    const double step = 1e-6;
    const Eigen::MatrixXd ggrad = grad_f1_gamma(gamma, bmat, chat, s);
    for (int a = 0; a < gamma.rows(); ++a)
      for (int c = 0; c < gamma.cols(); ++c) {
        Eigen::MatrixXd up = gamma, dn = gamma;
        up(a, c) += step;
        dn(a, c) -= step;
        const double fd =
            (objective_f1(up, bmat, chat, s) - objective_f1(dn, bmat, chat, s)) /
            (2 * step);
        REQUIRE(ggrad(a, c) == Approx(fd).margin(1e-5 * (1.0 + std::abs(fd))));
      }

    const Eigen::MatrixXd bgrad = grad_f1_b(gamma, bmat, chat, s);
    for (int a = 0; a < bmat.rows(); ++a)
      for (int c = 0; c < bmat.cols(); ++c) {
        Eigen::MatrixXd up = bmat, dn = bmat;
        up(a, c) += step;
        dn(a, c) -= step;
        const double fd =
            (objective_f1(gamma, up, chat, s) - objective_f1(gamma, dn, chat, s)) /
            (2 * step);
        REQUIRE(bgrad(a, c) == Approx(fd).margin(1e-5 * (1.0 + std::abs(fd))));
      }

    // f2 is linear with constant gradient blockdiag(L).
    const double f2_base = objective_f2(gamma, s);
    Eigen::MatrixXd bump = gamma;
    bump(1, 1) += 1.0;
    REQUIRE(objective_f2(bump, s) - f2_base == Approx(s.laplacian(1, 1)).margin(1e-9));
    bump = gamma;
    bump(0, 1) += 1.0;  // off-diagonal within the first diagonal block
    REQUIRE(objective_f2(bump, s) - f2_base == Approx(s.laplacian(0, 1)).margin(1e-9));
    bump = gamma;
    bump(0, n + 1) += 1.0;  // off-diagonal block: no contribution
    REQUIRE(objective_f2(bump, s) - f2_base == Approx(0.0).margin(1e-9));
  }
}

TEST_CASE("psd projection is idempotent and optimal") {
  Rng rng(63);
  const int n = 6;
  Eigen::MatrixXd a = rng.normal_matrix(n, n);
  a = (0.5 * (a + a.transpose())).eval();
  const Eigen::MatrixXd p = project_psd(a);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p);
  REQUIRE(es.eigenvalues().minCoeff() >= -1e-12);
  REQUIRE((project_psd(p) - p).norm() < 1e-10);

  // Diagonal case: clipping negatives entrywise.
  Eigen::VectorXd d(3);
  d << 2.0, -1.0, 0.5;
  const Eigen::MatrixXd pd = project_psd(Eigen::MatrixXd(d.asDiagonal()));
  REQUIRE(pd(0, 0) == Approx(2.0).margin(1e-12));
  REQUIRE(pd(1, 1) == Approx(0.0).margin(1e-12));
  REQUIRE(pd(2, 2) == Approx(0.5).margin(1e-12));

  // No random PSD candidate gets closer in Frobenius norm.
  const double best = (a - p).norm();
  for (int trial = 0; trial < 1000; ++trial) {
    Eigen::MatrixXd c = rng.normal_matrix(n, n);
    c = (c * c.transpose() / n).eval();
    REQUIRE((a - c).norm() >= best - 1e-12);
  }
}

TEST_CASE("rank1 extraction") {
  Rng rng(64);
  Eigen::VectorXd v = rng.normal_vector(5);
  // Canonical orientation has the largest-magnitude entry positive.
  const Rank1 pure = rank1_extract(v * v.transpose());
  REQUIRE(pure.residual == Approx(0.0).margin(1e-12));
  REQUIRE_FALSE(pure.degenerate);
  Eigen::VectorXd expect = v;
  int arg = 0;
  for (int i = 1; i < 5; ++i)
    if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
  if (v(arg) < 0) expect = -v;
  REQUIRE((pure.vector - expect).norm() < 1e-8);

  Eigen::VectorXd u = rng.normal_vector(5);
  u -= v * u.dot(v) / v.squaredNorm();
  u *= 0.4 * v.norm() / u.norm();
  const Rank1 mixed = rank1_extract(v * v.transpose() + u * u.transpose());
  REQUIRE(mixed.residual == Approx(0.16).epsilon(1e-6));  // (0.4 ||v||)^2 / ||v||^2

  const Rank1 zero = rank1_extract(Eigen::MatrixXd::Zero(4, 4));
  REQUIRE(zero.degenerate);
  REQUIRE_THROWS_AS(rank1_extract(Eigen::MatrixXd::Zero(3, 4)), std::invalid_argument);
}

TEST_CASE("subproblem steps decrease their objectives monotonically") {
  Rng rng(65);
  const int n = 6;
  Graph graph = random_graph(n, rng);
  LearnerConfig cfg;
  cfg.order = 2;
  cfg.degree = 2;
  cfg.inner_iters = 40;

  Eigen::MatrixXd c = rng.normal_matrix(n, n);
  c = (c * c.transpose() / n).eval();

  LearnerState state;
  state.gamma = Eigen::MatrixXd::Identity(n * 2, n * 2) * c.trace() / (n * 2);
  state.bmat = Eigen::MatrixXd::Identity(4, 4) / 4.0;

  std::vector<double> trace;
  const Eigen::MatrixXd b1 = solve_B_step(state, c, graph, cfg, &trace);
  REQUIRE(trace.size() >= 2);
  for (std::size_t i = 1; i < trace.size(); ++i)
    REQUIRE(trace[i] <= trace[i - 1] + 1e-9 * (1.0 + std::abs(trace[i - 1])));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esb(b1);
  REQUIRE(esb.eigenvalues().minCoeff() >= -1e-10);

  state.bmat = b1;
  trace.clear();
  const Eigen::MatrixXd g1 = solve_Gamma_step(state, c, graph, cfg, &trace);
  for (std::size_t i = 1; i < trace.size(); ++i)
    REQUIRE(trace[i] <= trace[i - 1] + 1e-9 * (1.0 + std::abs(trace[i - 1])));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esg(g1);
  REQUIRE(esg.eigenvalues().minCoeff() >= -1e-10);
}

TEST_CASE("projected gradient solves the trivial psd projection problem") {
  // min ||X - T||^2 over PSD X has the closed-form solution project_psd(T).
  Rng rng(66);
  Eigen::MatrixXd t = rng.normal_matrix(5, 5);
  t = (0.5 * (t + t.transpose())).eval();
  auto value = [&](const Eigen::MatrixXd& x) { return (x - t).squaredNorm(); };
  auto grad = [&](const Eigen::MatrixXd& x) { return Eigen::MatrixXd(2.0 * (x - t)); };
  const Eigen::MatrixXd x = detail::projected_gradient_psd(
      Eigen::MatrixXd::Zero(5, 5).eval(), value, grad, 500, 1e-14, nullptr);
  REQUIRE((x - project_psd(t)).norm() < 1e-6);
}

TEST_CASE("learner configuration validation") {
  Rng rng(67);
  Graph g = random_graph(5, rng);
  const Eigen::MatrixXd c = Eigen::MatrixXd::Identity(5, 5);
  LearnerConfig cfg;

  cfg.degree = 9;
  REQUIRE_THROWS_WITH(learn_lsgp(g, c, cfg), ContainsSubstring("allow_large_degree"));
  cfg.allow_large_degree = true;
  cfg.outer_iters = 1;
  cfg.inner_iters = 1;
  REQUIRE_NOTHROW(learn_lsgp(g, c, cfg));

  cfg = LearnerConfig();
  cfg.mu1 = -1.0;
  REQUIRE_THROWS_WITH(learn_lsgp(g, c, cfg), ContainsSubstring("nonnegative"));

  cfg = LearnerConfig();
  REQUIRE_THROWS_WITH(learn_lsgp(g, Eigen::MatrixXd::Identity(4, 4), cfg),
                      ContainsSubstring("match the graph"));
}

TEST_CASE("alternation trace is monotone in the plain regime") {
  // Short runs never re-seed, so every recorded half-step is a convex
  // descent and the trace must be non-increasing.
  PlantedLsgp planted = planted_knn_lsgp(16, 3, 1, 2, 5);
  const Eigen::MatrixXd truth = model_covariance(planted.model);

  LearnerConfig cfg;
  cfg.order = 1;
  cfg.degree = 2;
  cfg.mu1 = 1e-8;
  cfg.mu2 = 1e-6;
  cfg.mu3 = 1e-6;
  cfg.outer_iters = 8;
  cfg.inner_iters = 150;
  cfg.inner_tol = 1e-10;
  cfg.outer_tol = 0.0;

  const LearnedModel fit = learn_lsgp(planted.graph, truth, cfg);
  const auto& trace = fit.state.objective_trace;
  REQUIRE(trace.size() >= 3);
  for (std::size_t i = 1; i < trace.size(); ++i)
    REQUIRE(trace[i] <= trace[i - 1] + 1e-9 * (1.0 + std::abs(trace[i - 1])));
  REQUIRE(fit.diagnostics.outer_iterations == 8);
  REQUIRE(fit.diagnostics.step_seconds.size() ==
          2 * std::size_t(fit.diagnostics.outer_iterations));
}

TEST_CASE("the planted model is recovered") {
  PlantedLsgp planted = planted_knn_lsgp(16, 3, 1, 2, 5);
  const Eigen::MatrixXd truth = model_covariance(planted.model);

  LearnerConfig cfg;
  cfg.order = 1;
  cfg.degree = 2;
  cfg.mu1 = 1e-8;
  cfg.mu2 = cfg.mu3 = 3.3e-3 * truth.norm();
  cfg.outer_iters = 60;
  cfg.inner_iters = 300;
  cfg.inner_tol = 0.0;
  cfg.outer_tol = 0.0;

  const LearnedModel fit = learn_lsgp(planted.graph, truth, cfg);
  const double cd = covariance_discrepancy(truth, model_covariance(fit.model));
  REQUIRE(cd < 0.05);
  REQUIRE(fit.diagnostics.dropped_components == 0);
}

TEST_CASE("learning an exactly stationary covariance returns a stationary model") {
  // On a cycle every quantity in the alternation is circulant, so the fitted
  // membership comes out constant and the model covariance commutes with L.
  Graph g = cycle(10);
  Eigen::MatrixXd coeffs(2, 1);
  coeffs << 1.0, -0.4;
  Model truth = make_polynomial_model(g, Eigen::MatrixXd::Ones(10, 1), coeffs);
  const Eigen::MatrixXd c = model_covariance(truth);

  LearnerConfig cfg;
  cfg.order = 1;
  cfg.degree = 2;
  cfg.mu1 = 0.0;
  cfg.mu2 = 1e-10;
  cfg.mu3 = 1e-10;
  cfg.outer_iters = 40;
  cfg.inner_iters = 400;
  cfg.inner_tol = 1e-12;
  cfg.outer_tol = 1e-10;
  const LearnedModel fit = learn_lsgp(g, c, cfg);

  const Eigen::MatrixXd fitted = model_covariance(fit.model);
  const Eigen::MatrixXd& lap = g.spectrum().laplacian;
  REQUIRE((fitted * lap - lap * fitted).norm() / fitted.norm() < 1e-6);
  REQUIRE(covariance_discrepancy(c, fitted) < 0.01);
}

TEST_CASE("oversized trace penalties collapse to the zero model with a clear error") {
  Rng rng(68);
  Graph g = random_graph(6, rng);
  Eigen::MatrixXd c = 0.01 * Eigen::MatrixXd::Identity(6, 6);
  LearnerConfig cfg;
  cfg.order = 1;
  cfg.degree = 2;
  cfg.mu2 = 1e6;
  cfg.mu3 = 1e6;
  cfg.outer_iters = 3;
  REQUIRE_THROWS_WITH(learn_lsgp(g, c, cfg),
                      ContainsSubstring("lower the trace penalties"));
}
