#include "proxigmm/baselines.hpp"

#include <cmath>
#include <sstream>

#include "proxigmm/error.hpp"

namespace proxigmm {

namespace {

Matrix design(const Dataset& ds, bool a, bool x, bool w, bool z, bool a_before_z = true) {
  const auto n = static_cast<Eigen::Index>(ds.n());
  Eigen::Index cols = 1 + (a ? 1 : 0) + (x ? ds.x().cols() : 0) + (w ? ds.w().cols() : 0) + (z ? ds.z().cols() : 0);
  Matrix m(n, cols);
  Eigen::Index c = 0;
  m.col(c++).setOnes();
  if (a && a_before_z) m.col(c++) = ds.a();
  if (z && !a_before_z) {
    m.middleCols(c, ds.z().cols()) = ds.z();
    c += ds.z().cols();
  }
  if (a && !a_before_z) m.col(c++) = ds.a();
  if (x) {
    m.middleCols(c, ds.x().cols()) = ds.x();
    c += ds.x().cols();
  }
  if (w) {
    m.middleCols(c, ds.w().cols()) = ds.w();
    c += ds.w().cols();
  }
  if (z && a_before_z) m.middleCols(c, ds.z().cols()) = ds.z();
  return m;
}

std::vector<std::string> design_names(const Dataset& ds, bool x, bool w, bool z) {
  std::vector<std::string> out{"(Intercept)", ds.names().treatment};
  if (x) out.insert(out.end(), ds.names().x.begin(), ds.names().x.end());
  if (w) out.insert(out.end(), ds.names().w.begin(), ds.names().w.end());
  if (z) out.insert(out.end(), ds.names().z.begin(), ds.names().z.end());
  return out;
}

Matrix sandwich_inverse(const Matrix& h, ErrorCode code, const char* what) {
  Eigen::ColPivHouseholderQR<Matrix> qr(h);
  qr.setThreshold(1e-12);
  if (qr.rank() < h.cols()) fail(code, what);
  return qr.inverse();
}

// Stacked M-estimation sandwich: psi is N x m, h is the m x m mean Jacobian.
Matrix stacked_variance(const Matrix& psi, const Matrix& h) {
  const double n = static_cast<double>(psi.rows());
  const Matrix hinv = sandwich_inverse(h, ErrorCode::SingularVariance, "stacked estimating equations are singular");
  const Matrix omega = psi.transpose() * psi / n;
  const Matrix v = hinv * omega * hinv.transpose();
  return 0.5 * (v + v.transpose());
}

Vector signs(const Dataset& ds) { return (2.0 * ds.a().array() - 1.0).matrix(); }

Matrix pipw_regressors(const Dataset& ds) {
  // (1, W..., A, X...)
  const auto n = static_cast<Eigen::Index>(ds.n());
  Matrix v(n, 2 + ds.w().cols() + ds.x().cols());
  v.col(0).setOnes();
  v.middleCols(1, ds.w().cols()) = ds.w();
  v.col(1 + ds.w().cols()) = ds.a();
  v.rightCols(ds.x().cols()) = ds.x();
  return v;
}

Matrix q_regressors(const Dataset& ds) { return design(ds, true, true, false, true, false); }

struct PipwState {
  Vector residual;
  Matrix jacobian;
  Vector q;
  Matrix q_grad;
};

PipwState pipw_state(const Dataset& ds, const Matrix& vw, const Matrix& vq, const Vector& s, const Vector& theta,
                     Eigen::Index a_pos) {
  const auto n = vw.rows();
  const Vector sign_a = -s;  // (-1)^a
  const Vector index = (sign_a.array() * (vq * theta).array()).matrix();
  const Vector ex = index.array().exp().matrix();
  PipwState st;
  st.q = (1.0 + ex.array()).matrix();
  st.q_grad = vq.array().colwise() * (ex.array() * sign_a.array());
  const Vector sq = (s.array() * st.q.array()).matrix();
  st.residual = vw.transpose() * sq / static_cast<double>(n);
  st.residual[a_pos] -= 1.0;
  st.jacobian = vw.transpose() * (st.q_grad.array().colwise() * s.array()).matrix() / static_cast<double>(n);
  (void)ds;
  return st;
}

bool finite(const Vector& v) { return v.allFinite(); }

}  // namespace

EstimateReport make_report(std::string method, double tau, double se, std::vector<std::string> aux_names, Vector aux) {
  EstimateReport r;
  r.method = std::move(method);
  r.tau_hat = tau;
  r.se_tau = se;
  r.ci95 = wald_interval(tau, se);
  r.aux_names = std::move(aux_names);
  r.aux_params = std::move(aux);
  return r;
}

nlohmann::json to_json(const EstimateReport& r) {
  nlohmann::json j{{"method", r.method},
                   {"tau_hat", r.tau_hat},
                   {"se_tau", r.se_tau},
                   {"ci95", {r.ci95.lo, r.ci95.hi}},
                   {"aux_params", named_vector_json(r.aux_names, r.aux_params)}};
  if (r.k) j["k"] = *r.k;
  return j;
}

Matrix proxy_instruments(const Dataset& ds) { return q_regressors(ds); }

EstimateReport naive_gformula(const Dataset& ds) {
  const Matrix d = design(ds, true, true, true, true);
  if (ds.n() < static_cast<std::size_t>(d.cols()))
    fail(ErrorCode::RankDeficientDesign, "fewer observations than regressors");
  Eigen::ColPivHouseholderQR<Matrix> qr(d);
  qr.setThreshold(1e-10);
  if (qr.rank() < d.cols()) fail(ErrorCode::RankDeficientDesign, "regressors (1, A, X, W, Z) are collinear");
  const Vector beta = qr.solve(ds.y());
  const Vector e = ds.y() - d * beta;
  const Matrix xtx_inv = sandwich_inverse(d.transpose() * d, ErrorCode::RankDeficientDesign, "X'X is singular");
  const Matrix de = d.array().colwise() * e.array();
  const Matrix v = xtx_inv * (de.transpose() * de) * xtx_inv;
  return make_report("naive", beta[1], std::sqrt(std::max(v(1, 1), 0.0)), design_names(ds, true, true, true), beta);
}

EstimateReport rgmm(const Dataset& ds, const OutcomeBridge& bridge) {
  const BasisMatrix basis = basis_from_matrix(proxy_instruments(ds));
  if (static_cast<std::size_t>(basis.k) != bridge.p())
    fail(ErrorCode::DimensionMismatch, "recursive GMM needs as many instruments (1, Z, A, X) as bridge parameters");
  GmmFit fit;
  if (bridge.linear_in_params()) {
    const auto ev = evaluate_bridge(bridge, ds, Vector::Zero(static_cast<Eigen::Index>(bridge.p())));
    const Matrix lhs = basis.u.transpose() * ev.grad;
    Eigen::FullPivLU<Matrix> lu(lhs);
    lu.setThreshold(1e-12);
    if (!lu.isInvertible()) fail(ErrorCode::SingularSystem, "moment system with instruments (1, Z, A, X) is singular");
    const Vector gamma = lu.solve(basis.u.transpose() * ds.y());
    const auto one = evaluate_bridge(bridge, ds, gamma, 1.0);
    const auto zero = evaluate_bridge(bridge, ds, gamma, 0.0);
    fit.gamma_hat = gamma;
    fit.tau_hat = (one.h - zero.h).mean();
    fit.k = basis.k;
    fit.k1 = basis.k + 1;
    fit.n = ds.n();
    fit.param_names = bridge.param_names;
    fit.param_names.push_back("tau");
  } else {
    try {
      fit = fit_initial(ds, basis, bridge);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::RankDeficientJacobian) fail(ErrorCode::SingularSystem, e.what());
      throw;
    }
  }
  fit = variance(std::move(fit), ds, basis, bridge);
  return report_from_fit("rgmm", fit);
}

EstimateReport p2sls(const Dataset& ds) {
  const Matrix r = design(ds, true, true, true, false);
  const Matrix zm = design(ds, true, true, false, true);
  if (zm.cols() < r.cols()) fail(ErrorCode::WeakRank, "fewer instruments than regressors");
  Eigen::ColPivHouseholderQR<Matrix> first(zm);
  first.setThreshold(1e-10);
  if (first.rank() < zm.cols()) fail(ErrorCode::WeakRank, "instruments (1, A, X, Z) are collinear");
  const Matrix r_hat = zm * first.solve(r);
  Eigen::ColPivHouseholderQR<Matrix> second(r_hat);
  second.setThreshold(1e-10);
  if (second.rank() < r.cols()) fail(ErrorCode::WeakRank, "first stage does not identify the W coefficients");
  const Matrix rr_inv = sandwich_inverse(r_hat.transpose() * r, ErrorCode::WeakRank, "first stage is singular");
  const Vector beta = rr_inv * (r_hat.transpose() * ds.y());
  const Vector e = ds.y() - r * beta;
  const Matrix re = r_hat.array().colwise() * e.array();
  const Matrix v = rr_inv * (re.transpose() * re) * rr_inv.transpose();
  return make_report("p2sls", beta[1], std::sqrt(std::max(v(1, 1), 0.0)), design_names(ds, true, true, false), beta);
}

TreatmentBridgeFit fit_treatment_bridge(const Dataset& ds, int max_iterations, double tolerance) {
  TreatmentBridgeFit out;
  out.bridge = treatment_bridge(ds);
  const Matrix vw = pipw_regressors(ds);
  const Matrix vq = q_regressors(ds);
  if (vw.cols() != vq.cols())
    fail(ErrorCode::DimensionMismatch, "treatment bridge needs as many Z columns as W columns");
  const Vector s = signs(ds);
  const Eigen::Index a_pos = 1 + ds.w().cols();
  const auto m = vq.cols();

  auto attempt = [&](Vector theta, int start_id) -> bool {
    PipwState st = pipw_state(ds, vw, vq, s, theta, a_pos);
    if (!finite(st.residual)) return false;
    for (int it = 0; it <= max_iterations; ++it) {
      if (st.residual.cwiseAbs().maxCoeff() < tolerance) {
        out.theta = theta;
        out.q = st.q;
        out.q_grad = st.q_grad;
        out.jacobian = st.jacobian;
        out.iterations = it;
        out.start_used = start_id;
        return true;
      }
      if (it == max_iterations) return false;
      Eigen::FullPivLU<Matrix> lu(st.jacobian);
      if (!lu.isInvertible() || !st.jacobian.allFinite()) return false;
      const Vector step = -lu.solve(st.residual);
      const double current = st.residual.norm();
      double alpha = 1.0;
      bool improved = false;
      for (int h = 0; h < 50; ++h, alpha *= 0.5) {
        const Vector trial = theta + alpha * step;
        PipwState next = pipw_state(ds, vw, vq, s, trial, a_pos);
        if (finite(next.residual) && next.residual.norm() < current) {
          theta = trial;
          st = std::move(next);
          improved = true;
          break;
        }
      }
      if (!improved) return false;
    }
    return false;
  };

  if (attempt(Vector::Zero(m), 0)) return out;
  for (int k = 0; k < 8; ++k) {
    Vector start(m);
    for (Eigen::Index j = 0; j < m; ++j) start[j] = ((k >> (j % 3)) & 1) ? 0.5 : -0.5;
    if (attempt(start, k + 1)) return out;
  }
  fail(ErrorCode::NoConvergence, "treatment bridge estimating equations have no root reachable from the 9 starts");
}

EstimateReport pipw(const Dataset& ds) {
  const TreatmentBridgeFit tb = fit_treatment_bridge(ds);
  const Vector s = signs(ds);
  const Vector sq = (s.array() * tb.q.array()).matrix();
  const Vector contrib = (sq.array() * ds.y().array()).matrix();
  const double tau = contrib.mean();

  const auto n = static_cast<Eigen::Index>(ds.n());
  const auto m = tb.theta.size();
  const Matrix vw = pipw_regressors(ds);
  Matrix psi(n, m + 1);
  psi.leftCols(m) = vw.array().colwise() * sq.array();
  psi.col(1 + ds.w().cols()).array() -= 1.0;
  psi.col(m) = (contrib.array() - tau).matrix();
  Matrix h = Matrix::Zero(m + 1, m + 1);
  h.topLeftCorner(m, m) = tb.jacobian;
  h.block(m, 0, 1, m) =
      ((tb.q_grad.array().colwise() * (s.array() * ds.y().array())).colwise().sum() / static_cast<double>(n))
          .matrix();
  h(m, m) = -1.0;
  const Matrix v = stacked_variance(psi, h);
  const double se = std::sqrt(std::max(v(m, m), 0.0) / static_cast<double>(n));
  return make_report("pipw", tau, se, tb.bridge.param_names, tb.theta);
}

double pdr_point(const Dataset& ds, const OutcomeBridge& bridge, const Vector& gamma, const Vector& q) {
  const auto obs = evaluate_bridge(bridge, ds, gamma);
  const auto one = evaluate_bridge(bridge, ds, gamma, 1.0);
  const auto zero = evaluate_bridge(bridge, ds, gamma, 0.0);
  const Vector s = signs(ds);
  return ((one.h - zero.h).array() + s.array() * q.array() * (ds.y() - obs.h).array()).mean();
}

EstimateReport pdr(const Dataset& ds, const OutcomeBridge& bridge) {
  const EstimateReport outcome = rgmm(ds, bridge);
  const TreatmentBridgeFit tb = fit_treatment_bridge(ds);
  const Vector gamma = outcome.aux_params.head(static_cast<Eigen::Index>(bridge.p()));
  const double tau = pdr_point(ds, bridge, gamma, tb.q);

  const auto n = static_cast<Eigen::Index>(ds.n());
  const double nd = static_cast<double>(n);
  const auto p = gamma.size();
  const auto m = tb.theta.size();
  const Matrix u = proxy_instruments(ds);
  const Matrix vw = pipw_regressors(ds);
  const Vector s = signs(ds);
  const auto obs = evaluate_bridge(bridge, ds, gamma);
  const auto one = evaluate_bridge(bridge, ds, gamma, 1.0);
  const auto zero = evaluate_bridge(bridge, ds, gamma, 0.0);
  const Vector e = ds.y() - obs.h;
  const Vector sq = (s.array() * tb.q.array()).matrix();

  Matrix psi(n, p + m + 1);
  psi.leftCols(p) = u.array().colwise() * e.array();
  psi.middleCols(p, m) = vw.array().colwise() * sq.array();
  psi.col(p + 1 + ds.w().cols()).array() -= 1.0;
  psi.col(p + m) = ((one.h - zero.h).array() + sq.array() * e.array() - tau).matrix();

  Matrix h = Matrix::Zero(p + m + 1, p + m + 1);
  h.topLeftCorner(p, p) = -u.transpose() * obs.grad / nd;
  h.block(p, p, m, m) = tb.jacobian;
  const Matrix dtau_dgamma = (one.grad - zero.grad) - Matrix(obs.grad.array().colwise() * sq.array());
  h.block(p + m, 0, 1, p) = dtau_dgamma.colwise().mean();
  h.block(p + m, p, 1, m) = (tb.q_grad.array().colwise() * (s.array() * e.array())).colwise().mean().matrix();
  h(p + m, p + m) = -1.0;
  const Matrix v = stacked_variance(psi, h);
  const double se = std::sqrt(std::max(v(p + m, p + m), 0.0) / nd);

  std::vector<std::string> names = bridge.param_names;
  names.insert(names.end(), tb.bridge.param_names.begin(), tb.bridge.param_names.end());
  Vector aux(p + m);
  aux << gamma, tb.theta;
  return make_report("pdr", tau, se, names, aux);
}

EstimateReport plugin(const Dataset& ds, const OutcomeBridge& bridge, const Matrix& instruments) {
  if (static_cast<std::size_t>(instruments.cols()) != bridge.p())
    fail(ErrorCode::DimensionMismatch, "plug-in estimator needs exactly p instruments");
  const BasisMatrix basis = basis_from_matrix(instruments);
  Matrix weight = Matrix::Identity(basis.k + 1, basis.k + 1);
  GmmFit fit;
  try {
    fit = fit_weighted(ds, basis, bridge, weight);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::RankDeficientJacobian) fail(ErrorCode::SingularSystem, e.what());
    throw;
  }
  return report_from_fit("plugin", fit);
}

EstimateReport gmm_div(const Dataset& ds, const OutcomeBridge& bridge, const SieveSpec& spec_in, int k_bar,
                       const GmmOptions& opts) {
  const SieveSpec spec = spec_in.fitted ? spec_in : fit_sieve(spec_in, ds);
  SelectionDiagnostics sel = select_k(ds, bridge, spec, k_bar);
  const GmmFit fit = fit_sieve_gmm(ds, spec, sel.k_star, bridge, opts);
  EstimateReport r = report_from_fit("gmm-div", fit);
  r.selection = std::move(sel);
  return r;
}

EstimateReport report_from_fit(std::string method, const GmmFit& fit) {
  std::vector<std::string> names(fit.param_names.begin(), fit.param_names.end() - (fit.param_names.empty() ? 0 : 1));
  EstimateReport r = make_report(std::move(method), fit.tau_hat, fit.se_tau, names, fit.gamma_hat);
  r.k = fit.k;
  return r;
}

std::string to_string(Method m) {
  switch (m) {
    case Method::naive: return "naive";
    case Method::rgmm: return "rgmm";
    case Method::p2sls: return "p2sls";
    case Method::pipw: return "pipw";
    case Method::pdr: return "pdr";
    case Method::gmm_div: return "gmm-div";
    case Method::plugin: return "plugin";
  }
  return "unknown";
}

Method parse_method(const std::string& s) {
  for (Method m : {Method::naive, Method::rgmm, Method::p2sls, Method::pipw, Method::pdr, Method::gmm_div,
                   Method::plugin})
    if (to_string(m) == s) return m;
  if (s == "gmm") return Method::gmm_div;
  fail(ErrorCode::InvalidArgument, "unknown method '" + s + "'");
}

const std::vector<Method>& study_methods() {
  static const std::vector<Method> all{Method::naive, Method::rgmm, Method::p2sls,
                                       Method::pipw,  Method::pdr,  Method::gmm_div};
  return all;
}

std::vector<Method> parse_methods(const std::string& list) {
  std::vector<Method> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item == "all") {
      for (Method m : study_methods())
        if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
      continue;
    }
    const Method m = parse_method(item);
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  }
  if (out.empty()) fail(ErrorCode::InvalidArgument, "no methods given");
  return out;
}

EstimateReport run_method(Method m, const Dataset& ds, const MethodContext& ctx) {
  switch (m) {
    case Method::naive: return naive_gformula(ds);
    case Method::rgmm: return rgmm(ds, ctx.bridge);
    case Method::p2sls: return p2sls(ds);
    case Method::pipw: return pipw(ds);
    case Method::pdr: return pdr(ds, ctx.bridge);
    case Method::gmm_div: return gmm_div(ds, ctx.bridge, ctx.spec, ctx.k_bar, ctx.gmm);
    case Method::plugin: return plugin(ds, ctx.bridge, proxy_instruments(ds));
  }
  fail(ErrorCode::InvalidArgument, "unknown method");
}

}  // namespace proxigmm
