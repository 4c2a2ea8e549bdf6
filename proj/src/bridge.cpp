#include "proxigmm/bridge.hpp"

#include <cmath>

#include "proxigmm/error.hpp"

namespace proxigmm {

namespace {

void check_dims(std::size_t w, std::size_t dw, std::size_t x, std::size_t dx) {
  if (w != dw || x != dx) fail(ErrorCode::DimensionMismatch, "bridge argument dimensions do not match the model");
}

std::vector<std::string> linear_names(const ColumnNames& names) {
  std::vector<std::string> out{"(Intercept)"};
  for (const auto& w : names.w) out.push_back(w);
  out.push_back(names.treatment);
  for (const auto& x : names.x) out.push_back(x);
  return out;
}

void linear_features(std::span<const double> w, double a, std::span<const double> x, std::span<double> out) {
  std::size_t j = 0;
  out[j++] = 1.0;
  for (double v : w) out[j++] = v;
  out[j++] = a;
  for (double v : x) out[j++] = v;
}

Vector features_of(const OutcomeBridge& b, std::span<const double> w, double a, std::span<const double> x) {
  check_dims(w.size(), b.dim_w, x.size(), b.dim_x);
  Vector f(static_cast<Eigen::Index>(b.p()));
  b.features(w, a, x, std::span<double>(f.data(), b.p()));
  return f;
}

}  // namespace

OutcomeBridge linear_outcome_bridge(const ColumnNames& names) {
  OutcomeBridge b;
  b.features = linear_features;
  b.param_names = linear_names(names);
  b.dim_w = names.w.size();
  b.dim_x = names.x.size();
  return b;
}

OutcomeBridge linear_outcome_bridge(const Dataset& ds) { return linear_outcome_bridge(ds.names()); }

OutcomeBridge interaction_outcome_bridge(const Dataset& ds) {
  OutcomeBridge b = linear_outcome_bridge(ds);
  const std::size_t base = b.p();
  for (const auto& w : ds.names().w) b.param_names.push_back(ds.names().treatment + ":" + w);
  b.features = [base](std::span<const double> w, double a, std::span<const double> x, std::span<double> out) {
    linear_features(w, a, x, out.first(base));
    for (std::size_t j = 0; j < w.size(); ++j) out[base + j] = a * w[j];
  };
  return b;
}

OutcomeBridge exponential_outcome_bridge(const Dataset& ds) {
  OutcomeBridge b = linear_outcome_bridge(ds);
  b.link = BridgeLink::exponential;
  return b;
}

double h_eval(const OutcomeBridge& b, const Vector& gamma, std::span<const double> w, double a,
              std::span<const double> x) {
  if (static_cast<std::size_t>(gamma.size()) != b.p())
    fail(ErrorCode::DimensionMismatch, "gamma has the wrong length for this bridge");
  const double index = features_of(b, w, a, x).dot(gamma);
  return b.link == BridgeLink::identity ? index : std::exp(index);
}

Vector h_grad(const OutcomeBridge& b, const Vector& gamma, std::span<const double> w, double a,
              std::span<const double> x) {
  if (static_cast<std::size_t>(gamma.size()) != b.p())
    fail(ErrorCode::DimensionMismatch, "gamma has the wrong length for this bridge");
  Vector f = features_of(b, w, a, x);
  if (b.link == BridgeLink::exponential) f *= std::exp(f.dot(gamma));
  return f;
}

double h_contrast(const OutcomeBridge& b, const Vector& gamma, std::span<const double> w,
                  std::span<const double> x) {
  return h_eval(b, gamma, w, 1.0, x) - h_eval(b, gamma, w, 0.0, x);
}

BridgeEvaluation evaluate_bridge(const OutcomeBridge& b, const Dataset& ds, const Vector& gamma,
                                 std::optional<double> a_override) {
  if (ds.dim_w() != b.dim_w || ds.dim_x() != b.dim_x)
    fail(ErrorCode::DimensionMismatch, "bridge does not match the dataset's W/X blocks");
  if (static_cast<std::size_t>(gamma.size()) != b.p())
    fail(ErrorCode::DimensionMismatch, "gamma has the wrong length for this bridge");
  const auto n = static_cast<Eigen::Index>(ds.n());
  const auto p = static_cast<Eigen::Index>(b.p());
  BridgeEvaluation ev{Vector(n), Matrix(n, p)};
  std::vector<double> w(ds.dim_w()), x(ds.dim_x()), f(b.p());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = ds.w()(i, j);
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = ds.x()(i, j);
    b.features(w, a_override ? *a_override : ds.a()[i], x, f);
    double index = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) index += f[static_cast<std::size_t>(j)] * gamma[j];
    const double scale = b.link == BridgeLink::identity ? 1.0 : std::exp(index);
    ev.h[i] = b.link == BridgeLink::identity ? index : scale;
    for (Eigen::Index j = 0; j < p; ++j) ev.grad(i, j) = scale * f[static_cast<std::size_t>(j)];
  }
  return ev;
}

TreatmentBridge treatment_bridge(const ColumnNames& names) {
  TreatmentBridge t;
  t.param_names.push_back("(Intercept)");
  for (const auto& z : names.z) t.param_names.push_back(z);
  t.param_names.push_back(names.treatment);
  for (const auto& x : names.x) t.param_names.push_back(x);
  t.dim_z = names.z.size();
  t.dim_x = names.x.size();
  return t;
}

TreatmentBridge treatment_bridge(const Dataset& ds) { return treatment_bridge(ds.names()); }

namespace {

double q_index(const TreatmentBridge& t, const Vector& theta, std::span<const double> z, double a,
               std::span<const double> x, Vector* v_out) {
  check_dims(z.size(), t.dim_z, x.size(), t.dim_x);
  if (static_cast<std::size_t>(theta.size()) != t.p())
    fail(ErrorCode::DimensionMismatch, "theta has the wrong length for this bridge");
  Vector v(static_cast<Eigen::Index>(t.p()));
  Eigen::Index j = 0;
  v[j++] = 1.0;
  for (double e : z) v[j++] = e;
  v[j++] = a;
  for (double e : x) v[j++] = e;
  const double sign = a == 1.0 ? -1.0 : 1.0;
  if (v_out) *v_out = sign * v;
  return sign * v.dot(theta);
}

}  // namespace

double q_eval(const TreatmentBridge& t, const Vector& theta, std::span<const double> z, double a,
              std::span<const double> x) {
  return 1.0 + std::exp(q_index(t, theta, z, a, x, nullptr));
}

Vector q_grad(const TreatmentBridge& t, const Vector& theta, std::span<const double> z, double a,
              std::span<const double> x) {
  Vector sv;
  const double e = std::exp(q_index(t, theta, z, a, x, &sv));
  return e * sv;
}

TrueBridgeParams true_bridge_params(const DgpCoefficients& c) {
  if (c.wu == 0.0 || c.zu == 0.0)
    fail(ErrorCode::DegenerateConfounding, "beta_wu and beta_zu must be nonzero for the bridge closed forms");
  const double ry = c.yu / c.wu;
  const double ra = c.au / c.zu;
  TrueBridgeParams out{Vector(4), Vector(4)};
  out.gamma << c.y0 - c.w0 * ry, c.yw + ry, c.ya, c.yx - c.wx * ry;
  out.theta << c.a0 - 0.5 * ra * ra - c.z0 * ra, ra, ra * ra - c.za * ra, c.ax - c.zx * ra;
  return out;
}

nlohmann::json named_vector_json(const std::vector<std::string>& names, const Vector& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    const std::string name = static_cast<std::size_t>(j) < names.size() ? names[static_cast<std::size_t>(j)]
                                                                         : "param" + std::to_string(j);
    arr.push_back({{"name", name}, {"value", v[j]}});
  }
  return arr;
}

}  // namespace proxigmm
