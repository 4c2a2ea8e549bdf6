#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxigmm/dataset.hpp"

namespace proxigmm {

enum class SieveFamily { power, bspline };
enum class SieveStructure { tensor, additive };

std::string to_string(SieveFamily f);
std::string to_string(SieveStructure s);
SieveFamily parse_sieve_family(const std::string& s);
SieveStructure parse_sieve_structure(const std::string& s);

/// Univariate sieve for one Z or X column.
///
/// Power family: functions s, s^2, ..., s^degree of the standardised value s.
/// B-spline family: the clamped B-spline basis of `degree` with `knots`
/// interior knots at equally spaced sample quantiles, minus its first member
/// (the constant is carried by the dedicated constant term, and the full set
/// sums to one). A two-valued column contributes a single function.
struct VariableSieve {
  std::string name;
  int degree = 1;
  int knots = 0;

  // Learned by fit_sieve.
  double center = 0.0;
  double scale = 1.0;
  bool two_valued = false;
  std::vector<double> knot_vector;

  /// Number of non-constant univariate functions this variable contributes.
  int functions(SieveFamily family) const;
};

/// One basis term: treatment power (0/1) and a function index per variable
/// (Z variables first, then X); index 0 is the constant function.
struct SieveTerm {
  int a = 0;
  std::vector<int> index;

  int total_degree() const;
  bool operator==(const SieveTerm&) const = default;
};

struct SieveSpec {
  SieveFamily family = SieveFamily::power;
  SieveStructure structure = SieveStructure::tensor;
  bool include_treatment_interactions = true;
  std::vector<VariableSieve> z;
  std::vector<VariableSieve> x;
  bool fitted = false;

  /// Terms in canonical order: constant, treatment indicator, single-variable
  /// terms by ascending degree (Z before X), then interactions by ascending
  /// total degree with ties broken lexicographically on (a, index...).
  /// Every prefix of this list is itself a valid nested basis.
  std::vector<SieveTerm> terms() const;
  std::size_t term_count() const { return terms().size(); }
};

struct BlockSieve {
  int degree = 1;
  int knots = 0;
};

/// Spec covering every Z and X column of `ds` with one setting per block.
SieveSpec make_sieve_spec(const Dataset& ds, SieveFamily family, SieveStructure structure, BlockSieve z_block,
                          BlockSieve x_block, bool treatment_interactions = true);

/// The basis used by the simulation study: power series, tensor product of
/// {1, a} x {1, z} x {1, x, x^2} (12 terms, the first four spanning (1, a, z, x)).
SieveSpec default_power_spec(const Dataset& ds);
/// Cubic B-spline counterpart of default_power_spec for the sieve comparison.
SieveSpec default_bspline_spec(const Dataset& ds);

/// Learns standardisation constants, two-valued flags and knot vectors.
SieveSpec fit_sieve(SieveSpec spec, const Dataset& ds);

/// N x K instrument matrix. `whitening` is T with u = u_raw * T; identity for
/// raw bases.
struct BasisMatrix {
  Matrix u;
  int k = 0;
  Matrix whitening;
  Matrix whitening_inverse;
  SieveSpec spec;
  bool orthonormal = false;
};

/// First k terms of the spec evaluated at every row of ds (fits the spec on
/// ds first if it is not fitted yet).
BasisMatrix build_basis(const Dataset& ds, const SieveSpec& spec, int k);

/// Wraps an explicit instrument matrix (e.g. (1, Z, A, X)).
BasisMatrix basis_from_matrix(Matrix u);

/// Whitens u so that u'u / N = I via thin QR of u / sqrt(N).
BasisMatrix orthonormalize(const BasisMatrix& b);

/// Right-multiplies the instruments by an invertible K x K matrix.
BasisMatrix reparameterize(const BasisMatrix& b, const Matrix& t);

/// u_K(z, a, x) before whitening. Spec must be fitted.
Vector evaluate_basis(const SieveSpec& spec, int k, std::span<const double> z, double a, std::span<const double> x);

/// All degree+knots+1 clamped B-spline values at t (clamped into the knot
/// range). The values are nonnegative and sum to one.
std::vector<double> bspline_basis(std::span<const double> knot_vector, int degree, double t);

/// Knot vector with boundary knots at the sample range and `interior`
/// knots at equally spaced sample quantiles.
std::vector<double> quantile_knots(std::span<const double> values, int degree, int interior);

nlohmann::json to_json(const SieveSpec& spec);
SieveSpec sieve_from_json(const nlohmann::json& j);

}  // namespace proxigmm
