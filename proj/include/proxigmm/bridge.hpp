#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "proxigmm/dataset.hpp"

namespace proxigmm {

enum class BridgeLink { identity, exponential };

/// Outcome-confounding bridge h(w, a, x; gamma) = link(f(w, a, x)' gamma).
///
/// With the identity link the model is linear in gamma and its gradient is
/// the feature vector itself.
struct OutcomeBridge {
  using FeatureMap =
      std::function<void(std::span<const double> w, double a, std::span<const double> x, std::span<double> out)>;

  FeatureMap features;
  std::vector<std::string> param_names;
  std::size_t dim_w = 0;
  std::size_t dim_x = 0;
  BridgeLink link = BridgeLink::identity;

  std::size_t p() const { return param_names.size(); }
  bool linear_in_params() const { return link == BridgeLink::identity; }
};

/// Features (1, w..., a, x...), one coefficient per column.
OutcomeBridge linear_outcome_bridge(const ColumnNames& names);
OutcomeBridge linear_outcome_bridge(const Dataset& ds);
/// Linear features plus a*w for every W column.
OutcomeBridge interaction_outcome_bridge(const Dataset& ds);
/// exp((1, w..., a, x...)' gamma); exercises the iterative GMM path.
OutcomeBridge exponential_outcome_bridge(const Dataset& ds);

double h_eval(const OutcomeBridge& b, const Vector& gamma, std::span<const double> w, double a,
              std::span<const double> x);
Vector h_grad(const OutcomeBridge& b, const Vector& gamma, std::span<const double> w, double a,
              std::span<const double> x);
/// h(w, 1, x) - h(w, 0, x).
double h_contrast(const OutcomeBridge& b, const Vector& gamma, std::span<const double> w, std::span<const double> x);

/// Row-wise evaluation on a dataset. `a_override` replaces the observed
/// treatment when set.
struct BridgeEvaluation {
  Vector h;       // N
  Matrix grad;    // N x p
};
BridgeEvaluation evaluate_bridge(const OutcomeBridge& b, const Dataset& ds, const Vector& gamma,
                                 std::optional<double> a_override = std::nullopt);

/// Treatment-confounding bridge q(z, a, x; theta) = 1 + exp{(-1)^a theta'(1, z..., a, x...)}.
struct TreatmentBridge {
  std::vector<std::string> param_names;
  std::size_t dim_z = 0;
  std::size_t dim_x = 0;

  std::size_t p() const { return param_names.size(); }
};

TreatmentBridge treatment_bridge(const ColumnNames& names);
TreatmentBridge treatment_bridge(const Dataset& ds);

double q_eval(const TreatmentBridge& t, const Vector& theta, std::span<const double> z, double a,
              std::span<const double> x);
Vector q_grad(const TreatmentBridge& t, const Vector& theta, std::span<const double> z, double a,
              std::span<const double> x);

/// Coefficients of the simulation design, named after their role:
/// logit P(A=1) = (1, X, U) beta_a, Z = (1, A, X, U) beta_z + e1,
/// W = (1, X, U) beta_w + e2, Y = (1, A, W, X, U) beta_y + e3.
struct DgpCoefficients {
  double a0 = -0.1, ax = 0.5, au = 0.5;
  double z0 = 0.5, za = 1.0, zx = 0.5, zu = 1.0;
  double w0 = 1.0, wx = -1.0, wu = 1.0;
  double y0 = 1.0, ya = 0.5, yw = 0.5, yx = 1.0, yu = 1.0;
};

struct TrueBridgeParams {
  Vector gamma;  // (gamma0, gamma_w, gamma_a, gamma_x)
  Vector theta;  // (theta0, theta_z, theta_a, theta_x)
};

/// Closed-form bridge parameters implied by the linear-Gaussian design with
/// unit-variance treatment-proxy noise.
TrueBridgeParams true_bridge_params(const DgpCoefficients& c);

nlohmann::json named_vector_json(const std::vector<std::string>& names, const Vector& v);

}  // namespace proxigmm
