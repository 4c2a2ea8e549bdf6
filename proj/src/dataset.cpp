#include "proxigmm/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "proxigmm/error.hpp"

namespace proxigmm {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

void check_unique(const ColumnNames& names) {
  std::unordered_set<std::string> seen;
  auto add = [&](const std::string& s) {
    if (!seen.insert(s).second) fail(ErrorCode::InvalidArgument, "duplicate column name '" + s + "'");
  };
  add(names.treatment);
  add(names.outcome);
  for (const auto& s : names.w) add(s);
  for (const auto& s : names.x) add(s);
  for (const auto& s : names.z) add(s);
}

void check_finite(const Matrix& m, const std::vector<std::string>& names) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      if (!std::isfinite(m(i, j)))
        fail(ErrorCode::NonFiniteValue, "row " + std::to_string(i + 1) + ", column '" + names[j] + "'");
}

}  // namespace

void VariableRoles::validate() const {
  if (outcome.empty()) fail(ErrorCode::InvalidArgument, "outcome role is empty");
  if (treatment.empty()) fail(ErrorCode::InvalidArgument, "treatment role is empty");
  if (proxies_z.empty()) fail(ErrorCode::InvalidArgument, "treatment proxies (Z) role is empty");
  if (proxies_w.empty()) fail(ErrorCode::InvalidArgument, "outcome proxies (W) role is empty");
  std::unordered_set<std::string> seen;
  auto add = [&](const std::string& s) {
    if (!seen.insert(s).second) fail(ErrorCode::InvalidArgument, "column '" + s + "' assigned to more than one role");
  };
  add(outcome);
  add(treatment);
  for (const auto& s : proxies_z) add(s);
  for (const auto& s : proxies_w) add(s);
  for (const auto& s : covariates) add(s);
}

Dataset::Dataset(Vector a, Vector y, Matrix w, Matrix x, Matrix z, ColumnNames names)
    : a_(std::move(a)), y_(std::move(y)), w_(std::move(w)), x_(std::move(x)), z_(std::move(z)),
      names_(std::move(names)) {
  const auto n = a_.size();
  if (n < 1) fail(ErrorCode::EmptyData, "dataset has no observations");
  if (y_.size() != n || w_.rows() != n || x_.rows() != n || z_.rows() != n)
    fail(ErrorCode::DimensionMismatch, "blocks do not share a common row count");
  if (static_cast<std::size_t>(w_.cols()) != names_.w.size() ||
      static_cast<std::size_t>(x_.cols()) != names_.x.size() ||
      static_cast<std::size_t>(z_.cols()) != names_.z.size())
    fail(ErrorCode::DimensionMismatch, "column name lists do not match block widths");
  check_unique(names_);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(a_[i]))
      fail(ErrorCode::NonFiniteValue, "row " + std::to_string(i + 1) + ", column '" + names_.treatment + "'");
    if (a_[i] != 0.0 && a_[i] != 1.0)
      fail(ErrorCode::NonBinaryTreatment,
           "row " + std::to_string(i + 1) + ", column '" + names_.treatment + "' has value " + format_double(a_[i]));
    if (!std::isfinite(y_[i]))
      fail(ErrorCode::NonFiniteValue, "row " + std::to_string(i + 1) + ", column '" + names_.outcome + "'");
  }
  check_finite(w_, names_.w);
  check_finite(x_, names_.x);
  check_finite(z_, names_.z);
}

Dataset Dataset::with_outcome(Vector y) const { return Dataset(a_, std::move(y), w_, x_, z_, names_); }

Dataset Dataset::with_w(Matrix w) const { return Dataset(a_, y_, std::move(w), x_, z_, names_); }

Dataset read_csv(std::istream& in, const VariableRoles& roles) {
  roles.validate();
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::EmptyData, "file has no header row");
  std::vector<std::string> header;
  for (auto f : split_fields(line)) header.emplace_back(f);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < header.size(); ++j) index.emplace(header[j], j);

  auto locate = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) fail(ErrorCode::MissingColumn, "column '" + name + "' not found in header");
    return it->second;
  };
  const std::size_t ja = locate(roles.treatment);
  const std::size_t jy = locate(roles.outcome);
  std::vector<std::size_t> jw, jx, jz;
  for (const auto& s : roles.proxies_w) jw.push_back(locate(s));
  for (const auto& s : roles.covariates) jx.push_back(locate(s));
  for (const auto& s : roles.proxies_z) jz.push_back(locate(s));

  std::vector<std::vector<double>> rows;
  std::size_t row = 0;
  std::vector<double> values(header.size());
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto fields = split_fields(line);
    if (fields.size() != header.size())
      fail(ErrorCode::MalformedCsv, "row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                                        " fields, header has " + std::to_string(header.size()));
    auto parse = [&](std::size_t j) {
      std::string_view f = fields[j];
      if (!f.empty() && f.front() == '+') f.remove_prefix(1);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v))
        fail(ErrorCode::NonFiniteValue, "row " + std::to_string(row) + ", column '" + header[j] +
                                            "' has value '" + std::string(fields[j]) + "'");
      return v;
    };
    std::vector<double> r;
    r.reserve(2 + jw.size() + jx.size() + jz.size());
    r.push_back(parse(ja));
    if (r.back() != 0.0 && r.back() != 1.0)
      fail(ErrorCode::NonBinaryTreatment, "row " + std::to_string(row) + ", column '" + roles.treatment +
                                              "' has value '" + std::string(fields[ja]) + "'");
    r.push_back(parse(jy));
    for (auto j : jw) r.push_back(parse(j));
    for (auto j : jx) r.push_back(parse(j));
    for (auto j : jz) r.push_back(parse(j));
    rows.push_back(std::move(r));
  }
  if (rows.empty()) fail(ErrorCode::EmptyData, "file has a header but no data rows");

  const auto n = static_cast<Eigen::Index>(rows.size());
  Vector a(n), y(n);
  Matrix w(n, jw.size()), x(n, jx.size()), z(n, jz.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[i];
    std::size_t c = 0;
    a[i] = r[c++];
    y[i] = r[c++];
    for (std::size_t j = 0; j < jw.size(); ++j) w(i, j) = r[c++];
    for (std::size_t j = 0; j < jx.size(); ++j) x(i, j) = r[c++];
    for (std::size_t j = 0; j < jz.size(); ++j) z(i, j) = r[c++];
  }
  ColumnNames names{roles.treatment, roles.outcome, roles.proxies_w, roles.covariates, roles.proxies_z};
  return Dataset(std::move(a), std::move(y), std::move(w), std::move(x), std::move(z), std::move(names));
}

Dataset load_csv(const std::filesystem::path& path, const VariableRoles& roles) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::MalformedCsv, "cannot open '" + path.string() + "'");
  return read_csv(in, roles);
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

void write_csv(const Dataset& ds, std::ostream& out) {
  const auto& nm = ds.names();
  out << nm.treatment << ',' << nm.outcome;
  for (const auto& s : nm.w) out << ',' << s;
  for (const auto& s : nm.x) out << ',' << s;
  for (const auto& s : nm.z) out << ',' << s;
  out << '\n';
  for (std::size_t i = 0; i < ds.n(); ++i) {
    out << format_double(ds.a()[i]) << ',' << format_double(ds.y()[i]);
    for (Eigen::Index j = 0; j < ds.w().cols(); ++j) out << ',' << format_double(ds.w()(i, j));
    for (Eigen::Index j = 0; j < ds.x().cols(); ++j) out << ',' << format_double(ds.x()(i, j));
    for (Eigen::Index j = 0; j < ds.z().cols(); ++j) out << ',' << format_double(ds.z()(i, j));
    out << '\n';
  }
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::InvalidArgument, "cannot write '" + path.string() + "'");
  write_csv(ds, out);
}

VariableRoles roles_of(const Dataset& ds) {
  const auto& nm = ds.names();
  return VariableRoles{nm.outcome, nm.treatment, nm.z, nm.w, nm.x};
}

Misspecification parse_misspecification(const std::string& s) {
  if (s == "correct") return Misspecification::correct;
  if (s == "minor") return Misspecification::minor;
  if (s == "moderate") return Misspecification::moderate;
  if (s == "significant") return Misspecification::significant;
  fail(ErrorCode::InvalidArgument, "unknown misspecification level '" + s + "'");
}

std::string to_string(Misspecification level) {
  switch (level) {
    case Misspecification::correct: return "correct";
    case Misspecification::minor: return "minor";
    case Misspecification::moderate: return "moderate";
    case Misspecification::significant: return "significant";
  }
  return "correct";
}

double misspecify(double w, Misspecification level) {
  switch (level) {
    case Misspecification::correct: return w;
    case Misspecification::minor: return w + 0.1 * w * w;
    case Misspecification::moderate: return w + 0.5 * w * w;
    case Misspecification::significant: return std::sqrt(std::abs(w)) + 1.0;
  }
  return w;
}

Dataset transform_column(const Dataset& ds, const std::string& name, Misspecification level) {
  const auto& wn = ds.names().w;
  auto it = std::find(wn.begin(), wn.end(), name);
  if (it == wn.end()) fail(ErrorCode::UnknownColumn, "'" + name + "' is not an outcome-proxy (W) column");
  const auto j = static_cast<Eigen::Index>(it - wn.begin());
  Matrix w = ds.w();
  for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = misspecify(w(i, j), level);
  return ds.with_w(std::move(w));
}

}  // namespace proxigmm
