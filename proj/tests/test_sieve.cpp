#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "proxigmm/error.hpp"
#include "proxigmm/sieve.hpp"
#include "proxigmm/simulation.hpp"
#include "test_util.hpp"

using namespace proxigmm;

namespace {

// Textbook recursive Cox-de Boor definition, written independently of the library.
double cox_de_boor(const std::vector<double>& t, int i, int d, double x) {
  if (d == 0) {
    const bool last = t[i + 1] == t.back() && x == t.back() && t[i] < t[i + 1];
    return ((t[i] <= x && x < t[i + 1]) || last) ? 1.0 : 0.0;
  }
  double left = 0.0, right = 0.0;
  if (t[i + d] != t[i]) left = (x - t[i]) / (t[i + d] - t[i]) * cox_de_boor(t, i, d - 1, x);
  if (t[i + d + 1] != t[i + 1]) right = (t[i + d + 1] - x) / (t[i + d + 1] - t[i + 1]) * cox_de_boor(t, i + 1, d - 1, x);
  return left + right;
}

double max_gram_deviation(const Matrix& u) {
  const double n = static_cast<double>(u.rows());
  return (u.transpose() * u / n - Matrix::Identity(u.cols(), u.cols())).cwiseAbs().maxCoeff();
}

Dataset scenario_data(Scenario s, std::size_t n, std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.scenario = s;
  cfg.n = n;
  return generate(cfg, seed);
}

}  // namespace

TEST_CASE("additive power basis ordering: constant, treatment, z") {
  const Dataset ds = scenario_data(Scenario::I, 300, 1);
  const SieveSpec spec = make_sieve_spec(ds, SieveFamily::power, SieveStructure::additive, {1, 0}, {0, 0});
  const BasisMatrix b = build_basis(ds, spec, 3);
  const double zbar = ds.z().col(0).mean();
  const double zsd = std::sqrt((ds.z().col(0).array() - zbar).square().sum() / (ds.n() - 1.0));
  for (Eigen::Index i = 0; i < 300; ++i) {
    CHECK(b.u(i, 0) == 1.0);
    CHECK(b.u(i, 1) == ds.a()[i]);
    CHECK(b.u(i, 2) == doctest::Approx((ds.z()(i, 0) - zbar) / zsd).epsilon(1e-12));
  }
  const BasisMatrix b4 = build_basis(ds, spec, 4);
  for (Eigen::Index i = 0; i < 300; ++i) CHECK(b4.u(i, 3) == doctest::Approx(ds.a()[i] * b.u(i, 2)).epsilon(1e-12));
  try {
    build_basis(ds, spec, 5);
    FAIL("only four terms exist");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::KTooLarge);
  }
}

TEST_CASE("default tensor sieve term order") {
  const Dataset ds = scenario_data(Scenario::I, 100, 2);
  const auto terms = fit_sieve(default_power_spec(ds), ds).terms();
  REQUIRE(terms.size() == 12);
  const std::vector<std::pair<int, std::vector<int>>> expected{
      {0, {0, 0}}, {1, {0, 0}}, {0, {1, 0}}, {0, {0, 1}}, {0, {0, 2}}, {0, {1, 1}},
      {1, {0, 1}}, {1, {1, 0}}, {0, {1, 2}}, {1, {0, 2}}, {1, {1, 1}}, {1, {1, 2}}};
  for (std::size_t t = 0; t < 12; ++t) {
    CHECK(terms[t].a == expected[t].first);
    CHECK(terms[t].index == expected[t].second);
  }
}

TEST_CASE("first four default terms span the instruments (1, Z, A, X)") {
  const Dataset ds = scenario_data(Scenario::I, 400, 3);
  const BasisMatrix b = build_basis(ds, default_power_spec(ds), 4);
  Matrix m(400, 4);
  m.col(0).setOnes();
  m.col(1) = ds.z().col(0);
  m.col(2) = ds.a();
  m.col(3) = ds.x().col(0);
  const Matrix coef = b.u.colPivHouseholderQr().solve(m);
  CHECK((b.u * coef - m).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("orthonormalize contracts") {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> nd;
  SUBCASE("random Gaussian matrix") {
    Matrix u(100, 5);
    for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = nd(gen);
    const BasisMatrix o = orthonormalize(basis_from_matrix(u));
    CHECK(max_gram_deviation(o.u) < 1e-10);
    CHECK((u * o.whitening - o.u).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((o.whitening * o.whitening_inverse - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("already orthonormal input is a fixed point") {
    Matrix u(100, 5);
    for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = nd(gen);
    const BasisMatrix once = orthonormalize(basis_from_matrix(u));
    const BasisMatrix twice = orthonormalize(basis_from_matrix(once.u));
    CHECK((twice.whitening - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("duplicate columns are rank deficient") {
    Matrix u(50, 3);
    for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = nd(gen);
    u.col(2) = u.col(1);
    try {
      orthonormalize(basis_from_matrix(u));
      FAIL("expected RankDeficient");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::RankDeficient);
    }
  }
}

TEST_CASE("orthonormalize on 100 random sieve bases") {
  for (std::uint64_t r = 0; r < 100; ++r) {
    const Dataset ds = scenario_data(r % 2 ? Scenario::II : Scenario::I, 150 + 10 * (r % 7), 100 + r);
    const int k = 4 + static_cast<int>(r % 9);
    const BasisMatrix o = orthonormalize(build_basis(ds, default_power_spec(ds), k));
    CHECK(max_gram_deviation(o.u) < 1e-8);
  }
}

TEST_CASE("evaluate_basis reproduces build_basis bit for bit") {
  const Dataset ds = scenario_data(Scenario::II, 200, 5);
  for (SieveFamily fam : {SieveFamily::power, SieveFamily::bspline}) {
    const SieveSpec spec =
        fit_sieve(fam == SieveFamily::power ? default_power_spec(ds) : default_bspline_spec(ds), ds);
    const int k = 12;
    const BasisMatrix b = build_basis(ds, spec, k);
    for (Eigen::Index i = 0; i < 200; ++i) {
      const double z = ds.z()(i, 0), x = ds.x()(i, 0);
      const Vector row = evaluate_basis(spec, k, std::span<const double>(&z, 1), ds.a()[i], std::span<const double>(&x, 1));
      for (int c = 0; c < k; ++c) CHECK(row[c] == b.u(i, c));
    }
    const double z = 123.0, x = -7.0;
    CHECK(evaluate_basis(spec, 1, std::span<const double>(&z, 1), 1.0, std::span<const double>(&x, 1))[0] == 1.0);
    const double two[2] = {1.0, 2.0};
    CHECK_THROWS_AS(evaluate_basis(spec, 3, std::span<const double>(two, 2), 1.0, std::span<const double>(&x, 1)),
                    Error);
  }
}

TEST_CASE("power basis is centred at the sample mean") {
  const Dataset ds = scenario_data(Scenario::I, 200, 6);
  const SieveSpec spec = fit_sieve(default_power_spec(ds), ds);
  const double zbar = ds.z().col(0).mean();
  const double x = 0.3;
  const Vector row = evaluate_basis(spec, 3, std::span<const double>(&zbar, 1), 0.0, std::span<const double>(&x, 1));
  CHECK(std::abs(row[2]) < 1e-15);
}

TEST_CASE("nestedness of prefixes") {
  const Dataset ds = scenario_data(Scenario::II, 250, 7);
  for (SieveFamily fam : {SieveFamily::power, SieveFamily::bspline}) {
    const SieveSpec spec = fam == SieveFamily::power ? default_power_spec(ds) : default_bspline_spec(ds);
    const BasisMatrix big = build_basis(ds, spec, 12);
    for (int k1 = 1; k1 < 12; ++k1) {
      const BasisMatrix small = build_basis(ds, spec, k1);
      CHECK((small.u.array() == big.u.leftCols(k1).array()).all());
    }
  }
}

TEST_CASE("B-spline values match the recursive definition and sum to one") {
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> ud(-2.0, 3.0);
  std::vector<double> sample(500);
  for (double& s : sample) s = ud(gen);
  for (int degree : {1, 2, 3}) {
    for (int interior : {0, 1, 4}) {
      const auto knots = quantile_knots(sample, degree, interior);
      CHECK(knots.size() == static_cast<std::size_t>(2 * (degree + 1) + interior));
      for (int p = 0; p <= 200; ++p) {
        const double x = knots.front() + (knots.back() - knots.front()) * p / 200.0;
        const auto vals = bspline_basis(knots, degree, x);
        double sum = 0.0;
        for (std::size_t i = 0; i < vals.size(); ++i) {
          sum += vals[i];
          CHECK(vals[i] >= -1e-15);
          CHECK(vals[i] == doctest::Approx(cox_de_boor(knots, static_cast<int>(i), degree, x)).epsilon(1e-12));
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
      }
      // Points outside the knot range are clamped.
      const auto below = bspline_basis(knots, degree, knots.front() - 5.0);
      CHECK(below.front() == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("two-valued columns contribute a single function") {
  std::mt19937_64 gen(13);
  Dataset ds = testutil::random_dataset(gen, 100);
  Matrix x = ds.x();
  for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, 0) = i % 3 == 0 ? 1.0 : 0.0;
  const Dataset dummy(ds.a(), ds.y(), ds.w(), x, ds.z(), ds.names());
  const SieveSpec spec = fit_sieve(default_power_spec(dummy), dummy);
  CHECK(spec.x[0].two_valued);
  CHECK(spec.term_count() == 8);
  CHECK_NOTHROW(orthonormalize(build_basis(dummy, spec, 8)));
}

TEST_CASE("degenerate inputs") {
  std::mt19937_64 gen(14);
  const Dataset ds = testutil::random_dataset(gen, 40);
  Matrix x = Matrix::Constant(40, 1, 2.0);
  const Dataset flat(ds.a(), ds.y(), ds.w(), x, ds.z(), ds.names());
  try {
    build_basis(flat, default_power_spec(flat), 4);
    FAIL("expected DegenerateColumn");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateColumn);
  }
  ColumnNames names;
  names.w = {"W"};
  names.z = {"Z"};
  for (int j = 0; j < 25; ++j) names.x.push_back("X" + std::to_string(j));
  Matrix many(40, 25);
  std::normal_distribution<double> nd;
  for (Eigen::Index i = 0; i < many.size(); ++i) many.data()[i] = nd(gen);
  const Dataset wide(ds.a(), ds.y(), ds.w(), many, ds.z(), names);
  CHECK_THROWS_AS(default_power_spec(wide).terms(), Error);
  const SieveSpec additive = make_sieve_spec(wide, SieveFamily::power, SieveStructure::additive, {1, 0}, {2, 0});
  CHECK(additive.terms().size() == 2 * (1 + 1 + 25 * 2));
}

TEST_CASE("sieve spec JSON round trip") {
  const Dataset ds = scenario_data(Scenario::I, 120, 15);
  const SieveSpec spec = fit_sieve(default_bspline_spec(ds), ds);
  const SieveSpec back = sieve_from_json(to_json(spec));
  CHECK(back.family == spec.family);
  CHECK(back.structure == spec.structure);
  CHECK(back.terms() == spec.terms());
  const BasisMatrix a = build_basis(ds, spec, 10);
  const BasisMatrix b = build_basis(ds, back, 10);
  CHECK((a.u - b.u).cwiseAbs().maxCoeff() < 1e-12);
  nlohmann::json bad{{"family", "fourier"}};
  CHECK_THROWS_AS(sieve_from_json(bad), Error);
}
