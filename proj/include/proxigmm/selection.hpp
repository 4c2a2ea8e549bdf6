#pragma once

#include <iosfwd>
#include <vector>

#include "proxigmm/bridge.hpp"
#include "proxigmm/dataset.hpp"
#include "proxigmm/gmm.hpp"
#include "proxigmm/sieve.hpp"

namespace proxigmm {

/// Asymptotic-MSE criterion for the number of moments K, summed over the
/// unit vectors of the bridge parameter space.
struct SgmmScore {
  double score = 0.0;
  double bias_term = 0.0;
  double variance_term = 0.0;
};

/// Intermediate quantities of the criterion, exposed for inspection.
struct SgmmIngredients {
  Vector gamma_check;  // identity-weight estimate
  Vector residual;     // Y - h(W, A, X; gamma_check)
  Matrix upsilon;      // (1/N) sum e_i^2 u_i u_i'
  Matrix b;            // -(1/N) sum u_i grad_i'
  Matrix omega;        // B' Upsilon^{-1} B
  Vector xi;           // u_i' Upsilon^{-1} u_i / N
  Vector pi;           // per unit vector e_j
  Vector phi;          // per unit vector e_j
};

SgmmIngredients sgmm_ingredients(const Dataset& ds, const OutcomeBridge& bridge, const BasisMatrix& basis);

/// Criterion at K on an explicit (orthonormalized) instrument matrix, using
/// the identity-weight estimate on that matrix.
SgmmScore sgmm_score(const Dataset& ds, const OutcomeBridge& bridge, const BasisMatrix& basis);
/// Criterion at K with the first k terms of spec, orthonormalized.
SgmmScore sgmm_score(const Dataset& ds, const OutcomeBridge& bridge, const SieveSpec& spec, int k);

struct SelectionDiagnostics {
  std::vector<int> k_grid;
  std::vector<double> scores;  // +inf where the candidate was singular
  std::vector<double> bias_terms;
  std::vector<double> variance_terms;
  int k_star = 0;
};

/// Scans K = p..k_bar and returns the smallest minimizer of the criterion.
SelectionDiagnostics select_k(const Dataset& ds, const OutcomeBridge& bridge, const SieveSpec& spec, int k_bar);

/// Columns K, bias_term, variance_term, score, chosen; ascending K.
void write_loss_curve(const SelectionDiagnostics& d, std::ostream& out);

}  // namespace proxigmm
