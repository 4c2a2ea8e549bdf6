#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxigmm/bridge.hpp"
#include "proxigmm/dataset.hpp"
#include "proxigmm/gmm.hpp"
#include "proxigmm/selection.hpp"
#include "proxigmm/sieve.hpp"

namespace proxigmm {

struct EstimateReport {
  std::string method;
  double tau_hat = 0.0;
  double se_tau = 0.0;
  Interval ci95;
  std::vector<std::string> aux_names;
  Vector aux_params;
  std::optional<int> k;  // number of moments, for the sieve estimator
  std::optional<SelectionDiagnostics> selection;
};

EstimateReport make_report(std::string method, double tau, double se, std::vector<std::string> aux_names = {},
                           Vector aux = Vector());
nlohmann::json to_json(const EstimateReport& r);

/// Instrument matrix (1, Z..., A, X...).
Matrix proxy_instruments(const Dataset& ds);

/// Least squares of Y on (1, A, X, W, Z) with HC0 standard errors.
EstimateReport naive_gformula(const Dataset& ds);

/// Root of the exactly identified moments with instruments (1, Z, A, X);
/// standard error from the joint-GMM variance with that instrument set.
EstimateReport rgmm(const Dataset& ds, const OutcomeBridge& bridge);

/// Two-stage least squares, regressors (1, A, X, W), instruments (1, A, X, Z);
/// heteroskedasticity-robust standard errors.
EstimateReport p2sls(const Dataset& ds);

struct TreatmentBridgeFit {
  TreatmentBridge bridge;
  Vector theta;
  Vector q;          // q(Z_i, A_i, X_i; theta)
  Matrix q_grad;     // N x dim(theta)
  Matrix jacobian;   // of the estimating equations
  int iterations = 0;
  int start_used = 0;
};

/// Solves mean{(-1)^{1-A} q(Z, A, X; theta) (1, W, A, X) - e_A} = 0 by damped Newton.
TreatmentBridgeFit fit_treatment_bridge(const Dataset& ds, int max_iterations = 100, double tolerance = 1e-10);

/// Inverse-weighting estimator mean{(-1)^{1-A} q Y}; stacked sandwich over (theta, tau).
EstimateReport pipw(const Dataset& ds);

/// mean[h(W,1,X) - h(W,0,X) + (-1)^{1-A} q {Y - h(W,A,X)}] for given nuisance values.
double pdr_point(const Dataset& ds, const OutcomeBridge& bridge, const Vector& gamma, const Vector& q);

/// Doubly robust estimator with the rgmm and pipw nuisances; stacked sandwich over (gamma, theta, tau).
EstimateReport pdr(const Dataset& ds, const OutcomeBridge& bridge);

/// Two-stage plug-in with an explicit N x p instrument matrix; standard error
/// from the block-diagonal-weight joint GMM.
EstimateReport plugin(const Dataset& ds, const OutcomeBridge& bridge, const Matrix& instruments);

/// Data-driven K followed by optimal GMM at that K.
EstimateReport gmm_div(const Dataset& ds, const OutcomeBridge& bridge, const SieveSpec& spec, int k_bar,
                       const GmmOptions& opts = {});

EstimateReport report_from_fit(std::string method, const GmmFit& fit);

enum class Method { naive, rgmm, p2sls, pipw, pdr, gmm_div, plugin };

std::string to_string(Method m);
Method parse_method(const std::string& s);
/// "all" expands to the six simulation-study methods.
std::vector<Method> parse_methods(const std::string& list);
const std::vector<Method>& study_methods();

struct MethodContext {
  OutcomeBridge bridge;
  SieveSpec spec;
  int k_bar = 12;
  GmmOptions gmm;
};

EstimateReport run_method(Method m, const Dataset& ds, const MethodContext& ctx);

}  // namespace proxigmm
