#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace proxigmm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Column names of the observable blocks O = (A, Y, W, X, Z).
struct ColumnNames {
  std::string treatment = "A";
  std::string outcome = "Y";
  std::vector<std::string> w;
  std::vector<std::string> x;
  std::vector<std::string> z;
};

/// Maps CSV headers onto variable roles. Covariates may be empty.
struct VariableRoles {
  std::string outcome;
  std::string treatment;
  std::vector<std::string> proxies_z;
  std::vector<std::string> proxies_w;
  std::vector<std::string> covariates;

  void validate() const;
};

/// Immutable container of N complete observations.
///
/// Invariants checked on construction: all blocks share one row count n >= 1,
/// every treatment value is exactly 0 or 1, every entry is finite, and column
/// names are unique across blocks.
class Dataset {
 public:
  Dataset(Vector a, Vector y, Matrix w, Matrix x, Matrix z, ColumnNames names);

  std::size_t n() const { return static_cast<std::size_t>(a_.size()); }
  std::size_t dim_w() const { return static_cast<std::size_t>(w_.cols()); }
  std::size_t dim_x() const { return static_cast<std::size_t>(x_.cols()); }
  std::size_t dim_z() const { return static_cast<std::size_t>(z_.cols()); }

  const Vector& a() const { return a_; }
  const Vector& y() const { return y_; }
  const Matrix& w() const { return w_; }
  const Matrix& x() const { return x_; }
  const Matrix& z() const { return z_; }
  const ColumnNames& names() const { return names_; }

  /// Copy with the outcome replaced; used for equivariance checks.
  Dataset with_outcome(Vector y) const;
  /// Copy with the W block replaced (same shape and names).
  Dataset with_w(Matrix w) const;

 private:
  Vector a_;
  Vector y_;
  Matrix w_;
  Matrix x_;
  Matrix z_;
  ColumnNames names_;
};

Dataset load_csv(const std::filesystem::path& path, const VariableRoles& roles);
Dataset read_csv(std::istream& in, const VariableRoles& roles);

/// Writes header `A,Y,W...,X...,Z...` using shortest round-trip formatting, so
/// reading the file back reproduces every value bit-for-bit.
void write_csv(const Dataset& ds, std::ostream& out);
void write_csv(const Dataset& ds, const std::filesystem::path& path);

/// Roles matching the header produced by write_csv.
VariableRoles roles_of(const Dataset& ds);

enum class Misspecification { correct, minor, moderate, significant };

Misspecification parse_misspecification(const std::string& s);
std::string to_string(Misspecification level);

/// minor: W + 0.1 W^2, moderate: W + 0.5 W^2, significant: |W|^(1/2) + 1.
/// `correct` is the identity.
double misspecify(double w, Misspecification level);

/// Replaces one W-block column by its transformed values.
Dataset transform_column(const Dataset& ds, const std::string& name, Misspecification level);

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);

}  // namespace proxigmm
