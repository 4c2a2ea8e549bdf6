#include "proxigmm/selection.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include "proxigmm/error.hpp"

namespace proxigmm {

namespace {

Eigen::LDLT<Matrix> checked_ldlt(const Matrix& m, const char* what) {
  Eigen::LDLT<Matrix> ldlt(m);
  const Vector d = ldlt.vectorD();
  const double dmax = d.cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || !(d.minCoeff() > 1e-12 * dmax))
    fail(ErrorCode::SingularUpsilonBlock, std::string(what) + " is not invertible");
  return ldlt;
}

}  // namespace

SgmmIngredients sgmm_ingredients(const Dataset& ds, const OutcomeBridge& bridge, const BasisMatrix& basis) {
  const GmmFit init = fit_initial(ds, basis, bridge);
  const auto& u = basis.u;
  const auto n_rows = u.rows();
  const double n = static_cast<double>(n_rows);
  const auto p = static_cast<Eigen::Index>(bridge.p());

  SgmmIngredients g;
  g.gamma_check = init.gamma_hat;
  const auto ev = evaluate_bridge(bridge, ds, init.gamma_hat);
  g.residual = ds.y() - ev.h;
  const Vector& e = g.residual;
  const Matrix& grad = ev.grad;

  const Matrix ue = u.array().colwise() * e.array();
  g.upsilon = ue.transpose() * ue / n;
  g.b = -u.transpose() * grad / n;
  const auto ups_ldlt = checked_ldlt(g.upsilon, "residual-weighted moment covariance");
  const Matrix ups_inv_b = ups_ldlt.solve(g.b);
  g.omega = g.b.transpose() * ups_inv_b;
  const auto omega_ldlt = checked_ldlt(g.omega, "B' Upsilon^{-1} B");
  const Matrix omega_inv = omega_ldlt.solve(Matrix::Identity(p, p));

  const Matrix gram = u.transpose() * u / n;
  const auto gram_ldlt = checked_ldlt(gram, "instrument Gram matrix");
  const Matrix d_tilde = u * gram_ldlt.solve(g.b);  // row i: d~_i'
  const Matrix eta = -grad - d_tilde;               // row i: eta~_i'
  const Matrix d_star = u * ups_inv_b;              // row i: D*_i'
  const Matrix ups_inv_u = ups_ldlt.solve(u.transpose());
  g.xi.resize(n_rows);
  for (Eigen::Index i = 0; i < n_rows; ++i) g.xi[i] = u.row(i).dot(ups_inv_u.col(i)) / n;

  const Matrix eta_om = eta * omega_inv;
  const Matrix phi_arg = ((d_star.array().colwise() * e.array().square()).matrix() + grad) * omega_inv;

  g.pi = Vector::Zero(p);
  g.phi = Vector::Zero(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index i = 0; i < n_rows; ++i) {
      g.pi[j] += g.xi[i] * e[i] * eta_om(i, j);
      g.phi[j] += g.xi[i] * phi_arg(i, j) * phi_arg(i, j);
    }
    g.phi[j] -= omega_inv(j, j);
  }
  return g;
}

SgmmScore sgmm_score(const Dataset& ds, const OutcomeBridge& bridge, const BasisMatrix& basis) {
  const SgmmIngredients g = sgmm_ingredients(ds, bridge, basis);
  const double n = static_cast<double>(basis.u.rows());
  SgmmScore out;
  for (Eigen::Index j = 0; j < g.pi.size(); ++j) {
    out.bias_term += g.pi[j] * g.pi[j] / n;
    out.variance_term += g.phi[j];
  }
  out.score = out.bias_term + out.variance_term;
  return out;
}

SgmmScore sgmm_score(const Dataset& ds, const OutcomeBridge& bridge, const SieveSpec& spec, int k) {
  if (k < static_cast<int>(bridge.p()))
    fail(ErrorCode::InvalidArgument, "K must be at least the number of bridge parameters");
  return sgmm_score(ds, bridge, orthonormalize(build_basis(ds, spec, k)));
}

SelectionDiagnostics select_k(const Dataset& ds, const OutcomeBridge& bridge, const SieveSpec& spec_in, int k_bar) {
  const int p = static_cast<int>(bridge.p());
  if (k_bar < p)
    fail(ErrorCode::InvalidArgument, "kmax=" + std::to_string(k_bar) + " is below the number of bridge parameters (" +
                                         std::to_string(p) + ")");
  const SieveSpec spec = spec_in.fitted ? spec_in : fit_sieve(spec_in, ds);
  if (static_cast<std::size_t>(k_bar) > spec.term_count())
    fail(ErrorCode::KTooLarge, "kmax=" + std::to_string(k_bar) + " exceeds the " +
                                   std::to_string(spec.term_count()) + " available sieve terms");
  const BasisMatrix full = build_basis(ds, spec, k_bar);
  SelectionDiagnostics d;
  const double inf = std::numeric_limits<double>::infinity();
  double best = inf;
  for (int k = p; k <= k_bar; ++k) {
    d.k_grid.push_back(k);
    SgmmScore s{inf, inf, inf};
    try {
      BasisMatrix prefix = full;
      prefix.u = full.u.leftCols(k);
      prefix.k = k;
      prefix.whitening = Matrix::Identity(k, k);
      prefix.whitening_inverse = Matrix::Identity(k, k);
      s = sgmm_score(ds, bridge, orthonormalize(prefix));
      if (!std::isfinite(s.score)) s = SgmmScore{inf, inf, inf};
    } catch (const Error& e) {
      if (e.category() != ErrorCategory::numeric) throw;
    }
    d.scores.push_back(s.score);
    d.bias_terms.push_back(s.bias_term);
    d.variance_terms.push_back(s.variance_term);
    if (s.score < best) {
      best = s.score;
      d.k_star = k;
    }
  }
  if (!(best < inf)) fail(ErrorCode::AllCandidatesSingular, "every candidate K was singular");
  return d;
}

void write_loss_curve(const SelectionDiagnostics& d, std::ostream& out) {
  out << "K,bias_term,variance_term,score,chosen\n";
  for (std::size_t i = 0; i < d.k_grid.size(); ++i) {
    out << d.k_grid[i] << ',' << format_double(d.bias_terms[i]) << ',' << format_double(d.variance_terms[i]) << ','
        << format_double(d.scores[i]) << ',' << (d.k_grid[i] == d.k_star ? 1 : 0) << '\n';
  }
}

}  // namespace proxigmm
