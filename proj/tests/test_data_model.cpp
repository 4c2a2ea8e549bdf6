#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "proxigmm/dataset.hpp"
#include "proxigmm/error.hpp"
#include "test_util.hpp"

using namespace proxigmm;

namespace {

VariableRoles basic_roles() {
  VariableRoles r;
  r.outcome = "Y";
  r.treatment = "A";
  r.proxies_z = {"Z"};
  r.proxies_w = {"W"};
  r.covariates = {"X"};
  return r;
}

ErrorCode code_of(const std::string& csv, const VariableRoles& roles = basic_roles()) {
  std::istringstream in(csv);
  try {
    read_csv(in, roles);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("load_csv assigns columns by role") {
  std::istringstream in("Z,A,Y,W,X\n0.5,1,2.0,3,-1\n1e-3,0,+4,5.5,2\n7,1,8,9,10\n");
  const Dataset ds = read_csv(in, basic_roles());
  CHECK(ds.n() == 3);
  CHECK(ds.dim_z() == 1);
  CHECK(ds.dim_w() == 1);
  CHECK(ds.dim_x() == 1);
  CHECK(ds.a()[0] == 1.0);
  CHECK(ds.z()(1, 0) == 1e-3);
  CHECK(ds.y()[1] == 4.0);
  CHECK(ds.w()(1, 0) == 5.5);
  CHECK(ds.x()(2, 0) == 10.0);
}

TEST_CASE("load_csv error contracts") {
  CHECK(code_of("A,Y,W,X,Z\n") == ErrorCode::EmptyData);
  CHECK(code_of("A,Y,W,X,Z\n2,1,1,1,1\n") == ErrorCode::NonBinaryTreatment);
  CHECK(code_of("A,Y,W,X\n1,1,1,1\n") == ErrorCode::MissingColumn);
  CHECK(code_of("A,Y,W,X,Z\n1,,1,1,1\n") == ErrorCode::NonFiniteValue);
  CHECK(code_of("A,Y,W,X,Z\n1,nan,1,1,1\n") == ErrorCode::NonFiniteValue);
  CHECK(code_of("A,Y,W,X,Z\n1,inf,1,1,1\n") == ErrorCode::NonFiniteValue);
  CHECK(code_of("A,Y,W,X,Z\n1,1,1,1\n") == ErrorCode::MalformedCsv);
  CHECK(category(ErrorCode::MissingColumn) == ErrorCategory::data);
}

TEST_CASE("error messages name the row and column") {
  std::istringstream in("A,Y,W,X,Z\n1,1,1,1,1\n0,1,abc,1,1\n");
  try {
    read_csv(in, basic_roles());
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 2") != std::string::npos);
    CHECK(msg.find("W") != std::string::npos);
  }
}

TEST_CASE("missing column message names the column") {
  VariableRoles r = basic_roles();
  r.proxies_z = {"pafi1"};
  std::istringstream in("A,Y,W,X,Z\n1,1,1,1,1\n");
  try {
    read_csv(in, r);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("pafi1") != std::string::npos);
  }
}

TEST_CASE("roles must be disjoint and nonempty except covariates") {
  VariableRoles r = basic_roles();
  r.covariates = {};
  CHECK_NOTHROW(r.validate());
  r.proxies_w = {};
  CHECK_THROWS_AS(r.validate(), Error);
  r = basic_roles();
  r.covariates = {"Z"};
  CHECK_THROWS_AS(r.validate(), Error);
}

TEST_CASE("write_csv then read_csv round-trips bit-exactly") {
  std::mt19937_64 gen(42);
  std::uniform_real_distribution<double> ud(-1e6, 1e6);
  const int n = 200;
  Vector a(n), y(n), w(n), x(n), z(n);
  for (int i = 0; i < n; ++i) {
    a[i] = i % 2;
    y[i] = ud(gen) * std::pow(10.0, (i % 40) - 20);
    w[i] = ud(gen);
    x[i] = std::nextafter(1.0 / 3.0, 1.0) * i;
    z[i] = i == 0 ? std::numeric_limits<double>::denorm_min() : -ud(gen) / 7.0;
  }
  const Dataset ds = testutil::make_dataset(a, y, w, x, z);
  std::stringstream buf;
  write_csv(ds, buf);
  const Dataset back = read_csv(buf, roles_of(ds));
  CHECK(back.n() == ds.n());
  for (Eigen::Index i = 0; i < n; ++i) {
    CHECK(back.a()[i] == ds.a()[i]);
    CHECK(back.y()[i] == ds.y()[i]);
    CHECK(back.w()(i, 0) == ds.w()(i, 0));
    CHECK(back.x()(i, 0) == ds.x()(i, 0));
    CHECK(back.z()(i, 0) == ds.z()(i, 0));
  }
}

TEST_CASE("transform_column printed formulas") {
  CHECK(misspecify(2.0, Misspecification::minor) == doctest::Approx(2.4).epsilon(1e-15));
  CHECK(misspecify(-4.0, Misspecification::significant) == 3.0);
  CHECK(misspecify(0.0, Misspecification::moderate) == 0.0);
  CHECK(misspecify(1.7, Misspecification::correct) == 1.7);
}

TEST_CASE("transform_column leaves other columns untouched and is not a no-op") {
  std::mt19937_64 gen(3);
  const Dataset ds = testutil::random_dataset(gen, 50);
  const Dataset once = transform_column(ds, "W", Misspecification::minor);
  const Dataset twice = transform_column(once, "W", Misspecification::minor);
  CHECK((once.a().array() == ds.a().array()).all());
  CHECK((once.y().array() == ds.y().array()).all());
  CHECK((once.x().array() == ds.x().array()).all());
  CHECK((once.z().array() == ds.z().array()).all());
  for (Eigen::Index i = 0; i < 50; ++i) {
    CHECK(once.w()(i, 0) == misspecify(ds.w()(i, 0), Misspecification::minor));
    if (ds.w()(i, 0) != 0.0) CHECK(twice.w()(i, 0) != once.w()(i, 0));
  }
  CHECK_THROWS_AS(transform_column(ds, "Z", Misspecification::minor), Error);
  try {
    transform_column(ds, "nope", Misspecification::minor);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownColumn);
  }
}

TEST_CASE("Dataset invariants") {
  Vector a(2), v(2);
  a << 0, 1;
  v << 1, 2;
  CHECK_NOTHROW(testutil::make_dataset(a, v, v, v, v));
  Vector bad(2);
  bad << 0, 0.5;
  CHECK_THROWS_AS(testutil::make_dataset(bad, v, v, v, v), Error);
  Vector short_v(1);
  short_v << 1;
  CHECK_THROWS_AS(testutil::make_dataset(a, short_v, v, v, v), Error);
  Vector nan_v(2);
  nan_v << 1, std::nan("");
  CHECK_THROWS_AS(testutil::make_dataset(a, v, nan_v, v, v), Error);
  ColumnNames dup;
  dup.w = {"X"};
  dup.x = {"X"};
  dup.z = {"Z"};
  CHECK_THROWS_AS(Dataset(a, v, Matrix(v), Matrix(v), Matrix(v), dup), Error);
}
