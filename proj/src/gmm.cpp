#include "proxigmm/gmm.hpp"

#include <cmath>
#include <limits>

#include <boost/math/distributions/normal.hpp>

#include "proxigmm/error.hpp"

namespace proxigmm {

namespace {

struct Linearization {
  Vector g;  // G_K at theta
  Matrix b;  // dG_K / dtheta
};

void check_basis(const Dataset& ds, const BasisMatrix& basis) {
  if (static_cast<std::size_t>(basis.u.rows()) != ds.n())
    fail(ErrorCode::DimensionMismatch, "basis row count does not match the dataset");
}

Linearization linearize(const Dataset& ds, const BasisMatrix& basis, const OutcomeBridge& bridge, const Vector& theta) {
  const auto p = static_cast<Eigen::Index>(bridge.p());
  const Vector gamma = theta.head(p);
  const double tau = theta[p];
  const auto obs = evaluate_bridge(bridge, ds, gamma);
  const auto one = evaluate_bridge(bridge, ds, gamma, 1.0);
  const auto zero = evaluate_bridge(bridge, ds, gamma, 0.0);
  const double n = static_cast<double>(ds.n());
  const auto k = basis.u.cols();
  Linearization lin{Vector(k + 1), Matrix::Zero(k + 1, p + 1)};
  lin.g.head(k) = basis.u.transpose() * (ds.y() - obs.h) / n;
  lin.g[k] = tau - (one.h - zero.h).mean();
  lin.b.topLeftCorner(k, p) = -basis.u.transpose() * obs.grad / n;
  lin.b.block(k, 0, 1, p) = -(one.grad - zero.grad).colwise().mean();
  lin.b(k, p) = 1.0;
  return lin;
}

// Minimizes (g + B d)' M (g + B d), optionally subject to c'(g + B d) = 0.
Vector gauss_newton_step(const Linearization& lin, const Matrix& m, const std::optional<Vector>& c) {
  const auto q = lin.b.cols();
  const Matrix bm = lin.b.transpose() * m;
  if (!c) {
    const Matrix h = bm * lin.b;
    Eigen::ColPivHouseholderQR<Matrix> qr(h);
    qr.setThreshold(1e-12);
    if (qr.rank() < q) fail(ErrorCode::RankDeficientJacobian, "instruments do not identify the bridge parameters");
    return qr.solve(-bm * lin.g);
  }
  Matrix kkt = Matrix::Zero(q + 1, q + 1);
  kkt.topLeftCorner(q, q) = bm * lin.b;
  const Vector cb = lin.b.transpose() * *c;
  kkt.block(0, q, q, 1) = cb;
  kkt.block(q, 0, 1, q) = cb.transpose();
  Vector rhs(q + 1);
  rhs.head(q) = -bm * lin.g;
  rhs[q] = -c->dot(lin.g);
  Eigen::ColPivHouseholderQR<Matrix> qr(kkt);
  qr.setThreshold(1e-12);
  if (qr.rank() < q + 1)
    fail(ErrorCode::RankDeficientJacobian, "instruments do not identify the bridge parameters");
  return qr.solve(rhs).head(q);
}

double merit(const Linearization& lin, const Matrix& m, const std::optional<Vector>& c, double penalty) {
  double v = lin.g.dot(m * lin.g);
  if (c) {
    const double r = c->dot(lin.g);
    v += penalty * r * r;
  }
  return v;
}

struct Solution {
  Vector theta;
  int iterations = 0;
  double objective = 0.0;
};

Solution solve(const Dataset& ds, const BasisMatrix& basis, const OutcomeBridge& bridge, const Matrix& weight,
               const std::optional<Vector>& c, const GmmOptions& opts, Vector start) {
  Linearization lin = linearize(ds, basis, bridge, start);
  if (bridge.linear_in_params()) {
    Solution s{start + gauss_newton_step(lin, weight, c), 1, 0.0};
    s.objective = merit(linearize(ds, basis, bridge, s.theta), weight, std::nullopt, 0.0);
    return s;
  }
  const double penalty = 1e8 * std::max(1.0, weight.cwiseAbs().maxCoeff());
  Vector theta = std::move(start);
  double current = merit(lin, weight, c, penalty);
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const Vector step = gauss_newton_step(lin, weight, c);
    double alpha = 1.0;
    Vector trial;
    Linearization trial_lin;
    double trial_merit = std::numeric_limits<double>::infinity();
    for (int halving = 0; halving < 40; ++halving, alpha *= 0.5) {
      trial = theta + alpha * step;
      trial_lin = linearize(ds, basis, bridge, trial);
      trial_merit = merit(trial_lin, weight, c, penalty);
      if (std::isfinite(trial_merit) && trial_merit <= current) break;
    }
    if (!std::isfinite(trial_merit)) fail(ErrorCode::NoConvergence, "GMM objective became non-finite");
    const double moved = (alpha * step).cwiseAbs().maxCoeff();
    theta = trial;
    lin = std::move(trial_lin);
    current = trial_merit;
    if (moved < opts.step_tolerance) return Solution{theta, it, lin.g.dot(weight * lin.g)};
  }
  fail(ErrorCode::NoConvergence, "Gauss-Newton did not converge within " + std::to_string(opts.max_iterations) +
                                     " iterations");
}

std::vector<std::string> theta_names(const OutcomeBridge& bridge) {
  auto names = bridge.param_names;
  names.push_back("tau");
  return names;
}

void set_standard_errors(GmmFit& fit) {
  const auto q = fit.v_hat.rows();
  const double n = static_cast<double>(fit.n);
  Vector se(q);
  for (Eigen::Index j = 0; j < q; ++j) se[j] = std::sqrt(std::max(fit.v_hat(j, j), 0.0) / n);
  fit.se_gamma = se.head(q - 1);
  fit.se_tau = se[q - 1];
}

GmmFit make_fit(const Solution& sol, const Dataset& ds, const BasisMatrix& basis, const OutcomeBridge& bridge) {
  const auto p = static_cast<Eigen::Index>(bridge.p());
  GmmFit fit;
  fit.gamma_hat = sol.theta.head(p);
  fit.tau_hat = sol.theta[p];
  fit.k = static_cast<int>(basis.u.cols());
  fit.k1 = fit.k + 1;
  fit.objective_value = sol.objective;
  fit.iterations = sol.iterations;
  fit.param_names = theta_names(bridge);
  fit.n = ds.n();
  return fit;
}

Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

GmmFit sandwich(GmmFit fit, const Dataset& ds, const BasisMatrix& basis, const OutcomeBridge& bridge,
                const Matrix& weight) {
  const Linearization lin = linearize(ds, basis, bridge, fit.theta());
  const Matrix ups = estimate_upsilon(joint_score(ds, basis, bridge, fit.gamma_hat, fit.tau_hat));
  const Matrix bw = lin.b.transpose() * weight;
  Eigen::ColPivHouseholderQR<Matrix> qr(bw * lin.b);
  if (qr.rank() < lin.b.cols()) fail(ErrorCode::SingularVariance, "B'WB is singular");
  const Matrix h_inv = qr.inverse();
  fit.upsilon_hat = ups;
  fit.jacobian_hat = lin.b;
  fit.v_hat = symmetrize(h_inv * bw * ups * bw.transpose() * h_inv.transpose());
  set_standard_errors(fit);
  return fit;
}

}  // namespace

Matrix MomentDecomposition::weight() const {
  return q_retained * lambda_retained.cwiseInverse().asDiagonal() * q_retained.transpose();
}

Vector GmmFit::theta() const {
  Vector t(gamma_hat.size() + 1);
  t << gamma_hat, tau_hat;
  return t;
}

ScoreMatrix joint_score(const Dataset& ds, const BasisMatrix& basis, const OutcomeBridge& bridge, const Vector& gamma,
                        double tau) {
  check_basis(ds, basis);
  const auto obs = evaluate_bridge(bridge, ds, gamma);
  const auto one = evaluate_bridge(bridge, ds, gamma, 1.0);
  const auto zero = evaluate_bridge(bridge, ds, gamma, 0.0);
  const auto n = basis.u.rows();
  const auto k = basis.u.cols();
  ScoreMatrix sm{Matrix(n, k + 1), Vector()};
  const Vector e = ds.y() - obs.h;
  sm.s.leftCols(k) = basis.u.array().colwise() * e.array();
  sm.s.col(k) = (tau - (one.h - zero.h).array()).matrix();
  sm.mean = sm.s.colwise().mean().transpose();
  return sm;
}

Matrix estimate_upsilon(const ScoreMatrix& scores) {
  const double n = static_cast<double>(scores.s.rows());
  return symmetrize(scores.s.transpose() * scores.s / n);
}

MomentDecomposition regularize_moments(const Matrix& upsilon, double rel_threshold, std::size_t n_params) {
  if (upsilon.rows() != upsilon.cols()) fail(ErrorCode::DimensionMismatch, "moment covariance must be square");
  if (!(rel_threshold >= 0.0)) fail(ErrorCode::InvalidArgument, "relative threshold must be nonnegative");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(upsilon));
  const auto m = upsilon.rows();
  const Vector lam = eig.eigenvalues().reverse();
  const Matrix vec = eig.eigenvectors().rowwise().reverse();
  const double lmax = lam.size() ? lam[0] : 0.0;
  MomentDecomposition d;
  d.threshold_used = rel_threshold * lmax;
  int k1 = 0;
  while (k1 < m && lam[k1] > d.threshold_used && lam[k1] > 0.0) ++k1;
  d.k1 = k1;
  d.q_retained = vec.leftCols(k1);
  d.lambda_retained = lam.head(k1);
  if (k1 < m) {
    const Matrix dropped = vec.rightCols(m - k1);
    const Vector proj = dropped * dropped.row(m - 1).transpose();
    if (proj.norm() > 1e-6) d.constraint = proj / proj.norm();
  }
  const auto identifying = static_cast<std::size_t>(k1) + (d.constraint ? 1 : 0);
  if (identifying < n_params)
    fail(ErrorCode::TooFewMoments, "only " + std::to_string(identifying) + " moment directions survive filtering; " +
                                       std::to_string(n_params) + " are needed");
  return d;
}

Matrix score_jacobian(const Dataset& ds, const BasisMatrix& basis, const OutcomeBridge& bridge, const Vector& gamma) {
  check_basis(ds, basis);
  Vector theta(gamma.size() + 1);
  theta << gamma, 0.0;
  return linearize(ds, basis, bridge, theta).b;
}

GmmFit fit_initial(const Dataset& ds, const BasisMatrix& basis, const OutcomeBridge& bridge, const GmmOptions& opts) {
  const auto k = basis.u.cols();
  return fit_weighted(ds, basis, bridge, Matrix::Identity(k + 1, k + 1), opts);
}

GmmFit fit_weighted(const Dataset& ds, const BasisMatrix& basis, const OutcomeBridge& bridge, const Matrix& weight,
                    const GmmOptions& opts) {
  check_basis(ds, basis);
  const auto k = basis.u.cols();
  if (weight.rows() != k + 1 || weight.cols() != k + 1)
    fail(ErrorCode::DimensionMismatch, "weight must be (K+1) x (K+1)");
  if (static_cast<std::size_t>(k) < bridge.p())
    fail(ErrorCode::RankDeficientJacobian, "K=" + std::to_string(k) + " moments cannot identify " +
                                               std::to_string(bridge.p()) + " bridge parameters");
  const Solution sol =
      solve(ds, basis, bridge, weight, std::nullopt, opts, Vector::Zero(static_cast<Eigen::Index>(bridge.p()) + 1));
  return sandwich(make_fit(sol, ds, basis, bridge), ds, basis, bridge, weight);
}

GmmFit fit_optimal(const Dataset& ds, const BasisMatrix& basis, const OutcomeBridge& bridge, const GmmOptions& opts) {
  check_basis(ds, basis);
  // First step: identity weight in whitened coordinates, i.e. blockdiag((u'u/N)^{-1}, 1).
  const auto k = basis.u.cols();
  const Matrix gram = symmetrize(basis.u.transpose() * basis.u / static_cast<double>(basis.u.rows()));
  Eigen::LDLT<Matrix> gram_ldlt(gram);
  if (gram_ldlt.info() != Eigen::Success || !(gram_ldlt.vectorD().minCoeff() > 1e-12 * gram.diagonal().maxCoeff()))
    fail(ErrorCode::RankDeficient, "instrument Gram matrix is singular");
  Matrix first = Matrix::Identity(k + 1, k + 1);
  first.topLeftCorner(k, k) = symmetrize(gram_ldlt.solve(Matrix::Identity(k, k)));
  const GmmFit init = fit_weighted(ds, basis, bridge, first, opts);
  const Matrix ups = estimate_upsilon(joint_score(ds, basis, bridge, init.gamma_hat, init.tau_hat));
  const MomentDecomposition dec = regularize_moments(ups, opts.rel_threshold, bridge.p() + 1);
  const Solution sol = solve(ds, basis, bridge, dec.weight(), dec.constraint, opts, init.theta());
  GmmFit fit = make_fit(sol, ds, basis, bridge);
  fit.k1 = dec.k1;
  fit.decomposition = dec;
  return variance(std::move(fit), ds, basis, bridge, opts.rel_threshold);
}

GmmFit variance(GmmFit fit, const Dataset& ds, const BasisMatrix& basis, const OutcomeBridge& bridge,
                double rel_threshold) {
  const Linearization lin = linearize(ds, basis, bridge, fit.theta());
  const Matrix ups = estimate_upsilon(joint_score(ds, basis, bridge, fit.gamma_hat, fit.tau_hat));
  const auto q = lin.b.cols();
  MomentDecomposition dec;
  try {
    dec = regularize_moments(ups, rel_threshold, static_cast<std::size_t>(q));
  } catch (const Error& e) {
    fail(ErrorCode::SingularVariance, e.what());
  }
  const Matrix info = symmetrize(lin.b.transpose() * dec.weight() * lin.b);
  Matrix v;
  if (dec.constraint) {
    const Vector row = lin.b.transpose() * *dec.constraint;
    Eigen::HouseholderQR<Matrix> qr(row);
    const Matrix full_q = qr.householderQ();
    const Matrix null_basis = full_q.rightCols(q - 1);
    const Matrix reduced = symmetrize(null_basis.transpose() * info * null_basis);
    Eigen::LDLT<Matrix> ldlt(reduced);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0))
      fail(ErrorCode::SingularVariance, "constrained information matrix is singular");
    v = null_basis * ldlt.solve(null_basis.transpose());
  } else {
    Eigen::LDLT<Matrix> ldlt(info);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0))
      fail(ErrorCode::SingularVariance, "information matrix B'WB is singular");
    v = ldlt.solve(Matrix::Identity(q, q));
  }
  fit.upsilon_hat = ups;
  fit.jacobian_hat = lin.b;
  fit.v_hat = symmetrize(v);
  set_standard_errors(fit);
  return fit;
}

GmmFit fit_sieve_gmm(const Dataset& ds, const SieveSpec& spec, int k, const OutcomeBridge& bridge,
                     const GmmOptions& opts) {
  return fit_optimal(ds, orthonormalize(build_basis(ds, spec, k)), bridge, opts);
}

Interval wald_interval(double estimate, double se, double level) {
  if (!(level > 0.0 && level < 1.0)) fail(ErrorCode::InvalidArgument, "confidence level must lie in (0, 1)");
  const double z = boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 * (1.0 + level));
  return Interval{estimate - z * se, estimate + z * se};
}

Interval confidence_interval(const GmmFit& fit, double level) { return wald_interval(fit.tau_hat, fit.se_tau, level); }

WaldTest wald_test(double estimate, double se, double null_value) {
  WaldTest t;
  t.statistic = estimate == null_value ? 0.0 : (estimate - null_value) / se;
  t.reject_at_5pct = std::abs(t.statistic) > kZ975;
  return t;
}

WaldTest wald_test(const GmmFit& fit, double null_tau) { return wald_test(fit.tau_hat, fit.se_tau, null_tau); }

nlohmann::json to_json(const GmmFit& fit) {
  const Interval ci = confidence_interval(fit);
  return nlohmann::json{
      {"gamma_hat", named_vector_json(fit.param_names, fit.gamma_hat)},
      {"tau_hat", fit.tau_hat},
      {"se_gamma", named_vector_json(fit.param_names, fit.se_gamma)},
      {"se_tau", fit.se_tau},
      {"k", fit.k},
      {"k1", fit.k1},
      {"ci95", {ci.lo, ci.hi}},
      {"objective_value", fit.objective_value},
  };
}

}  // namespace proxigmm
