#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "proxigmm/error.hpp"
#include "proxigmm/rng.hpp"
#include "proxigmm/selection.hpp"
#include "proxigmm/simulation.hpp"
#include "sgmm_oracle.hpp"
#include "test_util.hpp"

using namespace proxigmm;

namespace {

Dataset scenario_data(Scenario s, std::size_t n, std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.scenario = s;
  cfg.n = n;
  return generate(cfg, seed);
}

OutcomeBridge slope_only_bridge() {
  OutcomeBridge b;
  b.features = [](std::span<const double> w, double, std::span<const double>, std::span<double> out) { out[0] = w[0]; };
  b.param_names = {"W"};
  b.dim_w = 1;
  b.dim_x = 1;
  return b;
}

}  // namespace

TEST_CASE("criterion matches a literal transcription on a hand-built instance") {
  const double u[5][2] = {{1, 0.3}, {1, -1.2}, {1, 2.0}, {1, 0.7}, {1, -0.4}};
  const double y[5] = {1.5, -0.2, 3.1, 0.4, 0.9};
  const double w[5] = {0.8, -0.5, 1.9, 0.1, 1.2};
  Vector a(5), yy(5), ww(5), x(5), z(5);
  Matrix um(5, 2);
  for (int i = 0; i < 5; ++i) {
    a[i] = i % 2;
    yy[i] = y[i];
    ww[i] = w[i];
    x[i] = 0.0;
    z[i] = u[i][1];
    um(i, 0) = u[i][0];
    um(i, 1) = u[i][1];
  }
  const Dataset ds = testutil::make_dataset(a, yy, ww, x, z);
  double bias = 0, var = 0;
  const double oracle = testutil::literal_criterion(u, y, w, &bias, &var);
  const SgmmScore s = sgmm_score(ds, slope_only_bridge(), basis_from_matrix(um));
  CHECK(std::abs(s.score - oracle) < 1e-10);
  CHECK(std::abs(s.bias_term - bias) < 1e-10);
  CHECK(std::abs(s.variance_term - var) < 1e-10);
  CHECK(s.score == s.bias_term + s.variance_term);
}

TEST_CASE("criterion scales with the squared residual size") {
  const Dataset base = scenario_data(Scenario::II, 300, 4);
  const OutcomeBridge bridge = linear_outcome_bridge(base);
  const BasisMatrix basis = orthonormalize(build_basis(base, default_power_spec(base), 8));
  const Vector fit = evaluate_bridge(bridge, base, true_bridge_params({}).gamma).h;
  const Vector noise = base.y() - fit;
  const SgmmScore full = sgmm_score(base, bridge, basis);
  CHECK(full.bias_term >= 0.0);
  const SgmmIngredients g1 = sgmm_ingredients(base, bridge, basis);
  for (double c : {0.1, 1e-3, 1e-6}) {
    const Dataset scaled = base.with_outcome(fit + c * noise);
    const SgmmIngredients g = sgmm_ingredients(scaled, bridge, basis);
    for (Eigen::Index j = 0; j < 4; ++j) CHECK(g.pi[j] == doctest::Approx(c * g1.pi[j]).epsilon(1e-6));
    const SgmmScore s = sgmm_score(scaled, bridge, basis);
    CHECK(s.bias_term == doctest::Approx(c * c * full.bias_term).epsilon(1e-6));
    CHECK(s.variance_term == doctest::Approx(c * c * full.variance_term).epsilon(1e-6));
  }
  const Dataset silent = base.with_outcome(Vector::Zero(static_cast<Eigen::Index>(base.n())));
  try {
    sgmm_score(silent, bridge, basis);
    FAIL("a zero residual vector must make the moment covariance singular");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SingularUpsilonBlock);
  }
  try {
    select_k(silent, bridge, default_power_spec(base), 8);
    FAIL("every candidate is singular");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AllCandidatesSingular);
  }
}

TEST_CASE("duplicating every observation keeps the moment matrices and halves xi") {
  std::mt19937_64 gen(3);
  const Dataset small = testutil::random_dataset(gen, 10);
  const auto n = 10;
  Vector a(2 * n), y(2 * n), w(2 * n), x(2 * n), z(2 * n);
  a << small.a(), small.a();
  y << small.y(), small.y();
  w << small.w().col(0), small.w().col(0);
  x << small.x().col(0), small.x().col(0);
  z << small.z().col(0), small.z().col(0);
  const Dataset doubled = testutil::make_dataset(a, y, w, x, z);
  const OutcomeBridge bridge = linear_outcome_bridge(small);
  Matrix u1 = proxy_instruments(small);
  u1.conservativeResize(n, 5);
  u1.col(4) = small.z().col(0).array().square();
  Matrix u2(2 * n, 5);
  u2 << u1, u1;
  const SgmmIngredients g1 = sgmm_ingredients(small, bridge, basis_from_matrix(u1));
  const SgmmIngredients g2 = sgmm_ingredients(doubled, bridge, basis_from_matrix(u2));
  CHECK((g1.upsilon - g2.upsilon).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((g1.b - g2.b).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((g1.omega - g2.omega).cwiseAbs().maxCoeff() < 1e-9 * g1.omega.cwiseAbs().maxCoeff());
  for (int i = 0; i < n; ++i) {
    CHECK(g2.xi[i] == doctest::Approx(0.5 * g1.xi[i]).epsilon(1e-9));
    CHECK(g2.xi[i + n] == doctest::Approx(0.5 * g1.xi[i]).epsilon(1e-9));
  }
}

TEST_CASE("select_k grid and tie rules") {
  const Dataset ds = scenario_data(Scenario::I, 400, 5);
  const OutcomeBridge bridge = linear_outcome_bridge(ds);
  const SieveSpec spec = default_power_spec(ds);
  const SelectionDiagnostics single = select_k(ds, bridge, spec, 4);
  CHECK(single.k_grid == std::vector<int>{4});
  CHECK(single.k_star == 4);
  const SelectionDiagnostics d = select_k(ds, bridge, spec, 12);
  CHECK(d.k_grid.size() == 9);
  CHECK(d.k_grid.front() == 4);
  double best = std::numeric_limits<double>::infinity();
  int arg = 0;
  for (std::size_t i = 0; i < d.k_grid.size(); ++i) {
    CHECK(d.scores[i] == d.bias_terms[i] + d.variance_terms[i]);
    if (d.scores[i] < best) {
      best = d.scores[i];
      arg = d.k_grid[i];
    }
  }
  CHECK(d.k_star == arg);
  CHECK_THROWS_AS(select_k(ds, bridge, spec, 3), Error);
  try {
    select_k(ds, bridge, spec, 13);
    FAIL("kmax above the term count");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::KTooLarge);
  }
}

TEST_CASE("select_k is deterministic and the loss curve is sorted") {
  const Dataset ds = scenario_data(Scenario::II, 400, 6);
  const OutcomeBridge bridge = linear_outcome_bridge(ds);
  const SelectionDiagnostics a = select_k(ds, bridge, default_power_spec(ds), 12);
  const SelectionDiagnostics b = select_k(ds, bridge, default_power_spec(ds), 12);
  CHECK(a.scores == b.scores);
  std::ostringstream out;
  write_loss_curve(a, out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "K,bias_term,variance_term,score,chosen");
  int prev = 0, chosen = 0, rows = 0;
  while (std::getline(in, line)) {
    const int k = std::stoi(line.substr(0, line.find(',')));
    CHECK(k > prev);
    prev = k;
    chosen += line.back() == '1';
    ++rows;
  }
  CHECK(rows == 9);
  CHECK(chosen == 1);
}

TEST_CASE("Scenario I mostly selects the four-moment instrument set") {
  std::map<int, int> hist;
  for (std::uint64_t r = 0; r < 40; ++r) {
    const Dataset ds = scenario_data(Scenario::I, 400, derive_seed(77, r));
    ++hist[select_k(ds, linear_outcome_bridge(ds), default_power_spec(ds), 12).k_star];
  }
  CHECK(hist[4] >= 30);
}
