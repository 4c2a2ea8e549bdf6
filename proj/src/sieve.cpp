#include "proxigmm/sieve.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "proxigmm/error.hpp"

namespace proxigmm {

namespace {

constexpr std::size_t kMaxTerms = 1'000'000;

int term_class(const SieveTerm& t) {
  const auto nnz = std::count_if(t.index.begin(), t.index.end(), [](int e) { return e != 0; });
  if (nnz == 0) return t.a == 0 ? 0 : 1;
  if (nnz == 1 && t.a == 0) return 2;
  return 3;
}

bool canonical_less(const SieveTerm& l, const SieveTerm& r) {
  const int cl = term_class(l), cr = term_class(r);
  if (cl != cr) return cl < cr;
  if (cl == 2) {
    auto var = [](const SieveTerm& t) {
      return static_cast<int>(std::find_if(t.index.begin(), t.index.end(), [](int e) { return e != 0; }) -
                              t.index.begin());
    };
    const int vl = var(l), vr = var(r);
    if (l.index[vl] != r.index[vr]) return l.index[vl] < r.index[vr];
    return vl < vr;
  }
  if (cl == 3) {
    if (l.total_degree() != r.total_degree()) return l.total_degree() < r.total_degree();
    if (l.a != r.a) return l.a < r.a;
    return l.index < r.index;
  }
  return false;
}

double univariate(const VariableSieve& v, SieveFamily family, int j, double value) {
  if (j == 0) return 1.0;
  if (family == SieveFamily::power) {
    const double s = (value - v.center) / v.scale;
    double p = s;
    for (int e = 1; e < j; ++e) p *= s;
    return p;
  }
  const auto all = bspline_basis(v.knot_vector, v.degree, value);
  return all[static_cast<std::size_t>(j)];
}

VariableSieve fit_variable(VariableSieve v, SieveFamily family, std::span<const double> col) {
  const auto n = col.size();
  const double mean = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double c : col) ss += (c - mean) * (c - mean);
  const double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
  if (!(sd > 0.0)) fail(ErrorCode::DegenerateColumn, "sieve variable '" + v.name + "' is constant");
  v.center = mean;
  v.scale = sd;
  const double first = col[0];
  const auto other = std::find_if(col.begin(), col.end(), [&](double c) { return c != first; });
  v.two_valued = std::all_of(col.begin(), col.end(), [&](double c) { return c == first || c == *other; });
  if (family == SieveFamily::bspline) {
    if (v.degree < 1) fail(ErrorCode::InvalidArgument, "B-spline degree must be >= 1 for '" + v.name + "'");
    v.knot_vector = quantile_knots(col, v.degree, v.knots);
  }
  return v;
}

}  // namespace

std::string to_string(SieveFamily f) { return f == SieveFamily::power ? "power" : "bspline"; }
std::string to_string(SieveStructure s) { return s == SieveStructure::tensor ? "tensor" : "additive"; }

SieveFamily parse_sieve_family(const std::string& s) {
  if (s == "power") return SieveFamily::power;
  if (s == "bspline") return SieveFamily::bspline;
  fail(ErrorCode::InvalidArgument, "unknown sieve family '" + s + "'");
}

SieveStructure parse_sieve_structure(const std::string& s) {
  if (s == "tensor") return SieveStructure::tensor;
  if (s == "additive") return SieveStructure::additive;
  fail(ErrorCode::InvalidArgument, "unknown sieve structure '" + s + "'");
}

int VariableSieve::functions(SieveFamily family) const {
  const int j = family == SieveFamily::power ? degree : degree + knots;
  return two_valued ? std::min(j, 1) : j;
}

int SieveTerm::total_degree() const { return a + std::accumulate(index.begin(), index.end(), 0); }

std::vector<SieveTerm> SieveSpec::terms() const {
  std::vector<int> limits;
  for (const auto& v : z) limits.push_back(v.functions(family));
  for (const auto& v : x) limits.push_back(v.functions(family));
  for (std::size_t i = 0; i < limits.size(); ++i) {
    if (limits[i] < 0) fail(ErrorCode::InvalidArgument, "negative sieve degree");
  }
  const std::size_t m = limits.size();

  std::vector<std::vector<int>> indices;
  if (structure == SieveStructure::tensor) {
    double count = 1.0;
    for (int l : limits) count *= static_cast<double>(l + 1);
    if (count * 2.0 > static_cast<double>(kMaxTerms))
      fail(ErrorCode::InvalidArgument, "tensor sieve would generate more than 1e6 terms; use the additive structure");
    std::vector<int> cur(m, 0);
    while (true) {
      indices.push_back(cur);
      std::size_t pos = 0;
      while (pos < m && cur[pos] == limits[pos]) cur[pos++] = 0;
      if (pos == m) break;
      ++cur[pos];
    }
  } else {
    indices.emplace_back(m, 0);
    for (std::size_t v = 0; v < m; ++v)
      for (int j = 1; j <= limits[v]; ++j) {
        std::vector<int> cur(m, 0);
        cur[v] = j;
        indices.push_back(std::move(cur));
      }
  }

  std::vector<SieveTerm> out;
  for (const auto& idx : indices) {
    out.push_back(SieveTerm{0, idx});
    const bool is_const = std::all_of(idx.begin(), idx.end(), [](int e) { return e == 0; });
    if (include_treatment_interactions || is_const) out.push_back(SieveTerm{1, idx});
  }
  std::stable_sort(out.begin(), out.end(), canonical_less);
  return out;
}

SieveSpec make_sieve_spec(const Dataset& ds, SieveFamily family, SieveStructure structure, BlockSieve z_block,
                          BlockSieve x_block, bool treatment_interactions) {
  if (z_block.degree < 0 || x_block.degree < 0 || z_block.knots < 0 || x_block.knots < 0)
    fail(ErrorCode::InvalidArgument, "sieve degrees and knot counts must be nonnegative");
  SieveSpec spec;
  spec.family = family;
  spec.structure = structure;
  spec.include_treatment_interactions = treatment_interactions;
  for (const auto& name : ds.names().z) spec.z.push_back(VariableSieve{name, z_block.degree, z_block.knots});
  for (const auto& name : ds.names().x) spec.x.push_back(VariableSieve{name, x_block.degree, x_block.knots});
  return spec;
}

SieveSpec default_power_spec(const Dataset& ds) {
  return make_sieve_spec(ds, SieveFamily::power, SieveStructure::tensor, {1, 0}, {2, 0});
}

SieveSpec default_bspline_spec(const Dataset& ds) {
  return make_sieve_spec(ds, SieveFamily::bspline, SieveStructure::tensor, {1, 0}, {3, 1});
}

SieveSpec fit_sieve(SieveSpec spec, const Dataset& ds) {
  if (spec.z.size() != ds.dim_z() || spec.x.size() != ds.dim_x())
    fail(ErrorCode::DimensionMismatch, "sieve spec does not match the dataset's Z/X blocks");
  std::vector<double> col(ds.n());
  for (std::size_t j = 0; j < spec.z.size(); ++j) {
    for (std::size_t i = 0; i < ds.n(); ++i) col[i] = ds.z()(i, j);
    spec.z[j] = fit_variable(spec.z[j], spec.family, col);
  }
  for (std::size_t j = 0; j < spec.x.size(); ++j) {
    for (std::size_t i = 0; i < ds.n(); ++i) col[i] = ds.x()(i, j);
    spec.x[j] = fit_variable(spec.x[j], spec.family, col);
  }
  spec.fitted = true;
  return spec;
}

namespace {

// Row evaluation shared by build_basis and evaluate_basis so both agree bitwise.
void evaluate_terms(const SieveSpec& spec, std::span<const SieveTerm> terms, std::span<const double> z, double a,
                    std::span<const double> x, std::span<double> out) {
  const std::size_t dz = spec.z.size();
  std::vector<std::vector<double>> cache(dz + spec.x.size());
  auto value = [&](std::size_t v, int j) {
    auto& c = cache[v];
    const VariableSieve& var = v < dz ? spec.z[v] : spec.x[v - dz];
    const double raw = v < dz ? z[v] : x[v - dz];
    if (c.empty()) {
      c.resize(static_cast<std::size_t>(var.functions(spec.family)) + 1);
      for (std::size_t e = 0; e < c.size(); ++e) c[e] = univariate(var, spec.family, static_cast<int>(e), raw);
    }
    return c[static_cast<std::size_t>(j)];
  };
  for (std::size_t t = 0; t < terms.size(); ++t) {
    double prod = terms[t].a ? a : 1.0;
    for (std::size_t v = 0; v < terms[t].index.size(); ++v)
      if (terms[t].index[v] != 0) prod *= value(v, terms[t].index[v]);
    out[t] = prod;
  }
}

}  // namespace

BasisMatrix build_basis(const Dataset& ds, const SieveSpec& spec_in, int k) {
  const SieveSpec spec = spec_in.fitted ? spec_in : fit_sieve(spec_in, ds);
  if (spec.z.size() != ds.dim_z() || spec.x.size() != ds.dim_x())
    fail(ErrorCode::DimensionMismatch, "sieve spec does not match the dataset's Z/X blocks");
  const auto all = spec.terms();
  if (k < 1 || static_cast<std::size_t>(k) > all.size())
    fail(ErrorCode::KTooLarge, "requested K=" + std::to_string(k) + " but the sieve has " +
                                   std::to_string(all.size()) + " terms");
  const std::span<const SieveTerm> terms(all.data(), static_cast<std::size_t>(k));
  const auto n = static_cast<Eigen::Index>(ds.n());
  Matrix u(n, k);
  std::vector<double> zr(ds.dim_z()), xr(ds.dim_x()), row(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < zr.size(); ++j) zr[j] = ds.z()(i, j);
    for (std::size_t j = 0; j < xr.size(); ++j) xr[j] = ds.x()(i, j);
    evaluate_terms(spec, terms, zr, ds.a()[i], xr, row);
    for (int c = 0; c < k; ++c) u(i, c) = row[static_cast<std::size_t>(c)];
  }
  for (int c = 0; c < k; ++c)
    if (u.col(c).cwiseAbs().maxCoeff() <= 1e-14)
      fail(ErrorCode::DegenerateColumn, "basis column " + std::to_string(c + 1) + " is identically zero");
  BasisMatrix b;
  b.u = std::move(u);
  b.k = k;
  b.whitening = Matrix::Identity(k, k);
  b.whitening_inverse = Matrix::Identity(k, k);
  b.spec = spec;
  return b;
}

BasisMatrix basis_from_matrix(Matrix u) {
  BasisMatrix b;
  b.k = static_cast<int>(u.cols());
  b.whitening = Matrix::Identity(b.k, b.k);
  b.whitening_inverse = Matrix::Identity(b.k, b.k);
  b.u = std::move(u);
  return b;
}

BasisMatrix orthonormalize(const BasisMatrix& b) {
  const auto n = b.u.rows();
  const auto k = b.u.cols();
  const double root_n = std::sqrt(static_cast<double>(n));
  if (n < k) fail(ErrorCode::RankDeficient, "fewer observations than basis functions");
  Eigen::HouseholderQR<Matrix> qr(b.u / root_n);
  Matrix r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  const double rmax = r.diagonal().cwiseAbs().maxCoeff();
  for (Eigen::Index j = 0; j < k; ++j)
    if (!(std::abs(r(j, j)) > 1e-10 * rmax))
      fail(ErrorCode::RankDeficient, "basis column " + std::to_string(j + 1) +
                                         " is linearly dependent on earlier columns; reduce K");
  // Positive diagonal so that an already orthonormal input maps to T = I.
  for (Eigen::Index j = 0; j < k; ++j)
    if (r(j, j) < 0) r.row(j) *= -1.0;
  Matrix t = r.triangularView<Eigen::Upper>().solve(Matrix::Identity(k, k));
  BasisMatrix out = b;
  out.u = b.u * t;
  out.whitening = b.whitening * t;
  out.whitening_inverse = r * b.whitening_inverse;
  out.orthonormal = true;
  return out;
}

BasisMatrix reparameterize(const BasisMatrix& b, const Matrix& t) {
  if (t.rows() != b.k || t.cols() != b.k) fail(ErrorCode::DimensionMismatch, "reparameterisation must be K x K");
  BasisMatrix out = b;
  out.u = b.u * t;
  out.whitening = b.whitening * t;
  out.whitening_inverse = t.inverse() * b.whitening_inverse;
  out.orthonormal = false;
  return out;
}

Vector evaluate_basis(const SieveSpec& spec, int k, std::span<const double> z, double a, std::span<const double> x) {
  if (!spec.fitted) fail(ErrorCode::InvalidArgument, "evaluate_basis requires a fitted sieve spec");
  if (z.size() != spec.z.size() || x.size() != spec.x.size())
    fail(ErrorCode::DimensionMismatch, "point dimensions do not match the sieve spec");
  const auto all = spec.terms();
  if (k < 1 || static_cast<std::size_t>(k) > all.size()) fail(ErrorCode::KTooLarge, "K exceeds the number of terms");
  std::vector<double> row(static_cast<std::size_t>(k));
  evaluate_terms(spec, std::span<const SieveTerm>(all.data(), static_cast<std::size_t>(k)), z, a, x, row);
  return Eigen::Map<Vector>(row.data(), k);
}

std::vector<double> bspline_basis(std::span<const double> knots, int degree, double t) {
  const int n_basis = static_cast<int>(knots.size()) - degree - 1;
  if (degree < 0 || n_basis < 1) fail(ErrorCode::InvalidArgument, "invalid B-spline knot vector");
  const double lo = knots[static_cast<std::size_t>(degree)];
  const double hi = knots[static_cast<std::size_t>(n_basis)];
  t = std::clamp(t, lo, hi);
  // Span mu with knots[mu] <= t < knots[mu + 1]; the right end uses the last span.
  int mu = n_basis - 1;
  if (t < hi) {
    mu = degree;
    while (mu + 1 < n_basis && knots[static_cast<std::size_t>(mu + 1)] <= t) ++mu;
  }
  std::vector<double> nonzero(static_cast<std::size_t>(degree) + 1, 0.0);
  std::vector<double> left(static_cast<std::size_t>(degree) + 1), right(static_cast<std::size_t>(degree) + 1);
  nonzero[0] = 1.0;
  for (int j = 1; j <= degree; ++j) {
    left[j] = t - knots[static_cast<std::size_t>(mu + 1 - j)];
    right[j] = knots[static_cast<std::size_t>(mu + j)] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double temp = denom != 0.0 ? nonzero[r] / denom : 0.0;
      nonzero[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    nonzero[j] = saved;
  }
  std::vector<double> out(static_cast<std::size_t>(n_basis), 0.0);
  for (int r = 0; r <= degree; ++r) out[static_cast<std::size_t>(mu - degree + r)] = nonzero[r];
  return out;
}

std::vector<double> quantile_knots(std::span<const double> values, int degree, int interior) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double p) {
    const double h = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  std::vector<double> knots;
  for (int i = 0; i <= degree; ++i) knots.push_back(sorted.front());
  for (int j = 1; j <= interior; ++j) knots.push_back(quantile(static_cast<double>(j) / (interior + 1)));
  for (int i = 0; i <= degree; ++i) knots.push_back(sorted.back());
  return knots;
}

nlohmann::json to_json(const SieveSpec& spec) {
  auto vars = [&](const std::vector<VariableSieve>& vs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& v : vs) {
      nlohmann::json j{{"name", v.name}, {"degree", v.degree}, {"knots", v.knots}};
      if (spec.fitted) {
        j["center"] = v.center;
        j["scale"] = v.scale;
        j["two_valued"] = v.two_valued;
        if (spec.family == SieveFamily::bspline) j["knot_vector"] = v.knot_vector;
      }
      arr.push_back(std::move(j));
    }
    return arr;
  };
  return nlohmann::json{{"family", to_string(spec.family)},
                        {"structure", to_string(spec.structure)},
                        {"treatment_interactions", spec.include_treatment_interactions},
                        {"fitted", spec.fitted},
                        {"z", vars(spec.z)},
                        {"x", vars(spec.x)}};
}

SieveSpec sieve_from_json(const nlohmann::json& j) {
  SieveSpec spec;
  try {
    spec.family = parse_sieve_family(j.value("family", std::string("power")));
    spec.structure = parse_sieve_structure(j.value("structure", std::string("tensor")));
    spec.include_treatment_interactions = j.value("treatment_interactions", true);
    spec.fitted = j.value("fitted", false);
    auto vars = [&](const char* key) {
      std::vector<VariableSieve> out;
      if (!j.contains(key)) return out;
      for (const auto& e : j.at(key)) {
        VariableSieve v;
        v.name = e.at("name").get<std::string>();
        v.degree = e.value("degree", 1);
        v.knots = e.value("knots", 0);
        if (v.degree < 0 || v.knots < 0) fail(ErrorCode::InvalidArgument, "negative degree or knot count");
        if (spec.fitted) {
          v.center = e.at("center").get<double>();
          v.scale = e.at("scale").get<double>();
          v.two_valued = e.value("two_valued", false);
          if (spec.family == SieveFamily::bspline) v.knot_vector = e.at("knot_vector").get<std::vector<double>>();
        }
        out.push_back(std::move(v));
      }
      return out;
    };
    spec.z = vars("z");
    spec.x = vars("x");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("malformed sieve config: ") + e.what());
  }
  return spec;
}

}  // namespace proxigmm
