#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxigmm/bridge.hpp"
#include "proxigmm/dataset.hpp"
#include "proxigmm/sieve.hpp"

namespace proxigmm {

/// Per-observation joint score g_K(O_i; gamma, tau).
///
/// Columns 0..K-1 hold {Y - h(W, A, X; gamma)} u_K(Z, A, X); column K holds
/// tau - h(W, 1, X; gamma) + h(W, 0, X; gamma).
struct ScoreMatrix {
  Matrix s;
  Vector mean;
};

ScoreMatrix joint_score(const Dataset& ds, const BasisMatrix& basis, const OutcomeBridge& bridge, const Vector& gamma,
                        double tau);

/// (1/N) s's.
Matrix estimate_upsilon(const ScoreMatrix& scores);

/// Spectral filtering of the moment covariance.
///
/// Eigen-directions with eigenvalue above rel_threshold * lambda_max are kept
/// (descending order). When the discarded directions carry a component of the
/// last (tau) coordinate, that component is returned as `constraint`: a unit
/// vector c such that c' G_K is treated as known to be zero.
struct MomentDecomposition {
  Matrix q_retained;
  Vector lambda_retained;
  double threshold_used = 0.0;
  int k1 = 0;
  std::optional<Vector> constraint;

  /// Q Lambda^{-1} Q'.
  Matrix weight() const;
};

/// n_params is the number of estimated parameters (p + 1 for (gamma, tau)).
MomentDecomposition regularize_moments(const Matrix& upsilon, double rel_threshold, std::size_t n_params);

struct GmmOptions {
  double rel_threshold = 1e-8;
  int max_iterations = 100;
  double step_tolerance = 1e-10;
};

struct GmmFit {
  Vector gamma_hat;
  double tau_hat = 0.0;
  int k = 0;
  int k1 = 0;
  Matrix upsilon_hat;
  Matrix jacobian_hat;
  Matrix v_hat;
  Vector se_gamma;
  double se_tau = 0.0;
  double objective_value = 0.0;
  int iterations = 0;
  std::vector<std::string> param_names;
  std::optional<MomentDecomposition> decomposition;

  std::size_t n = 0;
  Vector theta() const;
};

/// Sample Jacobian of G_K with respect to (gamma, tau).
Matrix score_jacobian(const Dataset& ds, const BasisMatrix& basis, const OutcomeBridge& bridge, const Vector& gamma);

/// Identity-weight GMM; variance is the sandwich for that weight.
GmmFit fit_initial(const Dataset& ds, const BasisMatrix& basis, const OutcomeBridge& bridge,
                   const GmmOptions& opts = {});

/// GMM with a fixed (K+1) x (K+1) positive semidefinite weight; sandwich variance.
GmmFit fit_weighted(const Dataset& ds, const BasisMatrix& basis, const OutcomeBridge& bridge, const Matrix& weight,
                    const GmmOptions& opts = {});

/// Two-step optimal GMM on the spectrally filtered moments, with variance().
/// The first step weights the instruments by (u'u/N)^{-1}, which is the
/// identity for an orthonormal basis and makes the result invariant to
/// nonsingular reparameterization of the instruments.
GmmFit fit_optimal(const Dataset& ds, const BasisMatrix& basis, const OutcomeBridge& bridge,
                   const GmmOptions& opts = {});

/// Efficient-GMM variance with the moment covariance re-estimated at the
/// fit's final estimates.
GmmFit variance(GmmFit fit, const Dataset& ds, const BasisMatrix& basis, const OutcomeBridge& bridge,
                double rel_threshold = 1e-8);

/// Builds the first k sieve terms, orthonormalizes them, and runs fit_optimal.
GmmFit fit_sieve_gmm(const Dataset& ds, const SieveSpec& spec, int k, const OutcomeBridge& bridge,
                     const GmmOptions& opts = {});

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double length() const { return hi - lo; }
  bool contains(double v) const { return lo <= v && v <= hi; }
};

struct WaldTest {
  double statistic = 0.0;
  bool reject_at_5pct = false;
};

inline constexpr double kZ975 = 1.959964;

Interval wald_interval(double estimate, double se, double level = 0.95);
Interval confidence_interval(const GmmFit& fit, double level = 0.95);
WaldTest wald_test(double estimate, double se, double null_value);
WaldTest wald_test(const GmmFit& fit, double null_tau);

nlohmann::json to_json(const GmmFit& fit);

}  // namespace proxigmm
