#include "proxigmm/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <ostream>

#include <omp.h>

#include "proxigmm/error.hpp"
#include "proxigmm/rng.hpp"

namespace proxigmm {

namespace {

enum Stream : std::uint32_t { kX = 0, kU = 1, kA = 2, kE1 = 3, kE2 = 4, kE3 = 5 };

ReplicationRecord run_arm(const StudyArm& arm, const Dataset& ds, int rep, int k_bar) {
  ReplicationRecord rec;
  rec.rep = rep;
  rec.label = arm.label;
  try {
    MethodContext ctx{linear_outcome_bridge(ds),
                      arm.sieve == SieveFamily::power ? default_power_spec(ds) : default_bspline_spec(ds), k_bar, {}};
    const EstimateReport r = run_method(arm.method, ds, ctx);
    if (!std::isfinite(r.tau_hat) || !std::isfinite(r.se_tau)) fail(ErrorCode::NoConvergence, "non-finite estimate");
    rec.converged = true;
    rec.tau_hat = r.tau_hat;
    rec.se_tau = r.se_tau;
    rec.ci95 = r.ci95;
    rec.reject = wald_test(r.tau_hat, r.se_tau, 0.0).reject_at_5pct;
    rec.k = r.k;
  } catch (const Error& e) {
    rec.failure = e.what();
  }
  return rec;
}

std::vector<ReplicationRecord> run_replication(const StudyConfig& cfg, int rep) {
  Dataset ds = generate(cfg.scenario, derive_seed(cfg.base_seed, static_cast<std::uint64_t>(rep)));
  if (cfg.misspec != Misspecification::correct) ds = transform_column(ds, ds.names().w.front(), cfg.misspec);
  std::vector<ReplicationRecord> out;
  out.reserve(cfg.arms.size());
  for (const auto& arm : cfg.arms) out.push_back(run_arm(arm, ds, rep, cfg.k_bar));
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

}  // namespace

Scenario parse_scenario(const std::string& s) {
  if (s == "I" || s == "1" || s == "i") return Scenario::I;
  if (s == "II" || s == "2" || s == "ii") return Scenario::II;
  fail(ErrorCode::InvalidArgument, "unknown scenario '" + s + "' (expected I or II)");
}

std::string to_string(Scenario s) { return s == Scenario::I ? "I" : "II"; }

NoiseConvention parse_noise_convention(const std::string& s) {
  if (s == "sd" || s == "standard_deviation") return NoiseConvention::standard_deviation;
  if (s == "squared") return NoiseConvention::squared;
  fail(ErrorCode::InvalidArgument, "unknown noise convention '" + s + "' (expected sd or squared)");
}

std::string to_string(NoiseConvention c) { return c == NoiseConvention::standard_deviation ? "sd" : "squared"; }

std::array<double, 3> ScenarioConfig::noise_sd(double x) const {
  if (scenario == Scenario::I) return {1.0, 1.0, 1.0};
  const double s2 = 1.0 / std::sqrt(0.3 + x * x);
  const double s3 = 1.0 / std::sqrt(0.5 + 0.8 * x * x);
  if (noise == NoiseConvention::squared) return {1.0, s2 * s2, s3 * s3};
  return {1.0, s2, s3};
}

GeneratedData generate_with_latent(const ScenarioConfig& cfg, std::uint64_t seed) {
  if (cfg.n < 1) fail(ErrorCode::InvalidArgument, "sample size must be at least 1");
  const auto n = static_cast<Eigen::Index>(cfg.n);
  const CounterRng rng(seed);
  const DgpCoefficients& c = cfg.coefficients;
  Vector a(n), y(n), u(n);
  Matrix w(n, 1), x(n, 1), z(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    const double xi = rng.normal(kX, idx);
    const double ui = rng.normal(kU, idx);
    const double logit = c.a0 + c.ax * xi + c.au * ui;
    const double prob = 1.0 / (1.0 + std::exp(-logit));
    const double ai = rng.uniform(kA, idx) < prob ? 1.0 : 0.0;
    const auto sd = cfg.noise_sd(xi);
    const double zi = c.z0 + c.za * ai + c.zx * xi + c.zu * ui + sd[0] * rng.normal(kE1, idx);
    const double wi = c.w0 + c.wx * xi + c.wu * ui + sd[1] * rng.normal(kE2, idx);
    const double yi = c.y0 + cfg.tau0 * ai + c.yw * wi + c.yx * xi + c.yu * ui + sd[2] * rng.normal(kE3, idx);
    a[i] = ai;
    y[i] = yi;
    w(i, 0) = wi;
    x(i, 0) = xi;
    z(i, 0) = zi;
    u[i] = ui;
  }
  ColumnNames names;
  names.w = {"W"};
  names.x = {"X"};
  names.z = {"Z"};
  return GeneratedData{Dataset(a, y, w, x, z, names), u};
}

Dataset generate(const ScenarioConfig& config, std::uint64_t seed) {
  return generate_with_latent(config, seed).data;
}

std::vector<StudyArm> arms_for(const std::vector<Method>& methods) {
  std::vector<StudyArm> arms;
  for (Method m : methods) arms.push_back(StudyArm{to_string(m), m, SieveFamily::power});
  return arms;
}

ReplicationSummary summarize(const std::string& label, const std::vector<ReplicationRecord>& records, double tau0) {
  ReplicationSummary s;
  s.method = label;
  std::vector<const ReplicationRecord*> ok;
  for (const auto& r : records)
    if (r.label == label && r.converged) ok.push_back(&r);
  s.reps_converged = static_cast<int>(ok.size());
  s.degenerate = ok.size() < 2;
  if (ok.empty()) return s;
  const double m = static_cast<double>(ok.size());
  double mean = 0.0, se = 0.0, len = 0.0, cover = 0.0, power = 0.0;
  for (const auto* r : ok) {
    mean += r->tau_hat;
    se += r->se_tau;
    len += r->ci95.length();
    cover += r->ci95.contains(tau0) ? 1.0 : 0.0;
    power += r->reject ? 1.0 : 0.0;
  }
  mean /= m;
  double ss = 0.0;
  for (const auto* r : ok) ss += (r->tau_hat - mean) * (r->tau_hat - mean);
  s.abs_bias = std::abs(mean - tau0);
  s.sd = ok.size() > 1 ? std::sqrt(ss / (m - 1.0)) : 0.0;
  s.rmse = std::sqrt(s.abs_bias * s.abs_bias + s.sd * s.sd);
  s.mean_se = se / m;
  s.mean_ci_length = len / m;
  s.coverage = cover / m;
  s.power = power / m;
  return s;
}

StudyResult run_study(const StudyConfig& cfg) {
  if (cfg.reps < 1) fail(ErrorCode::InvalidArgument, "reps must be at least 1");
  if (cfg.arms.empty()) fail(ErrorCode::InvalidArgument, "no estimators requested");
  std::vector<std::vector<ReplicationRecord>> per_rep(static_cast<std::size_t>(cfg.reps));
  if (cfg.serial) {
    for (int r = 0; r < cfg.reps; ++r) per_rep[static_cast<std::size_t>(r)] = run_replication(cfg, r);
  } else {
    const int threads = cfg.threads > 0 ? cfg.threads : omp_get_max_threads();
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.reps));
#pragma omp parallel for schedule(dynamic) num_threads(threads)
    for (int r = 0; r < cfg.reps; ++r) {
      try {
        per_rep[static_cast<std::size_t>(r)] = run_replication(cfg, r);
      } catch (...) {
        errors[static_cast<std::size_t>(r)] = std::current_exception();
      }
    }
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  StudyResult out;
  out.config = cfg;
  for (auto& v : per_rep)
    for (auto& rec : v) out.records.push_back(std::move(rec));
  for (const auto& arm : cfg.arms) out.summaries.push_back(summarize(arm.label, out.records, cfg.scenario.tau0));
  const auto gmm_arm = std::find_if(cfg.arms.begin(), cfg.arms.end(),
                                    [](const StudyArm& a) { return a.method == Method::gmm_div; });
  if (gmm_arm != cfg.arms.end())
    for (const auto& rec : out.records)
      if (rec.label == gmm_arm->label && rec.converged && rec.k) ++out.k_histogram[*rec.k];
  return out;
}

StudyResult run_study(const ScenarioConfig& scenario, const std::vector<Method>& methods, int reps,
                      std::uint64_t base_seed, int k_bar, int threads) {
  StudyConfig cfg;
  cfg.scenario = scenario;
  cfg.arms = arms_for(methods);
  cfg.reps = reps;
  cfg.base_seed = base_seed;
  cfg.k_bar = k_bar;
  cfg.threads = threads;
  return run_study(cfg);
}

StudyResult run_misspec_study(Misspecification level, std::size_t n, int reps, std::uint64_t base_seed, int k_bar,
                              int threads, NoiseConvention noise) {
  StudyConfig cfg;
  cfg.scenario.scenario = Scenario::II;
  cfg.scenario.n = n;
  cfg.scenario.noise = noise;
  cfg.arms = arms_for({Method::gmm_div, Method::pdr});
  cfg.reps = reps;
  cfg.base_seed = base_seed;
  cfg.k_bar = k_bar;
  cfg.misspec = level;
  cfg.threads = threads;
  return run_study(cfg);
}

StudyResult run_bspline_study(std::size_t n, int reps, std::uint64_t base_seed, int k_bar, int threads,
                              NoiseConvention noise) {
  StudyConfig cfg;
  cfg.scenario.scenario = Scenario::II;
  cfg.scenario.n = n;
  cfg.scenario.noise = noise;
  cfg.arms = {StudyArm{"gmm-div-power", Method::gmm_div, SieveFamily::power},
              StudyArm{"gmm-div-bspline", Method::gmm_div, SieveFamily::bspline}};
  cfg.reps = reps;
  cfg.base_seed = base_seed;
  cfg.k_bar = k_bar;
  cfg.threads = threads;
  return run_study(cfg);
}

void write_summary_csv(const StudyResult& r, std::ostream& out) {
  out << "scenario,n,method,bias,se,rmse,length,cp,power,reps_converged,mean_se,degenerate\n";
  for (const auto& s : r.summaries) {
    out << to_string(r.config.scenario.scenario) << ',' << r.config.scenario.n << ',' << csv_field(s.method) << ','
        << format_double(s.abs_bias) << ',' << format_double(s.sd) << ',' << format_double(s.rmse) << ','
        << format_double(s.mean_ci_length) << ',' << format_double(s.coverage) << ',' << format_double(s.power)
        << ',' << s.reps_converged << ',' << format_double(s.mean_se) << ',' << (s.degenerate ? 1 : 0) << '\n';
  }
}

void write_k_histogram_csv(const StudyResult& r, std::ostream& out) {
  out << "K,count\n";
  for (const auto& [k, count] : r.k_histogram) out << k << ',' << count << '\n';
}

void write_replications_csv(const StudyResult& r, std::ostream& out) {
  out << "method,rep,tau_hat,se_tau,ci_lo,ci_hi,k,converged,failure\n";
  for (const auto& rec : r.records) {
    out << csv_field(rec.label) << ',' << rec.rep << ',';
    if (rec.converged) {
      out << format_double(rec.tau_hat) << ',' << format_double(rec.se_tau) << ',' << format_double(rec.ci95.lo)
          << ',' << format_double(rec.ci95.hi) << ',';
    } else {
      out << ",,,,";
    }
    out << (rec.k ? std::to_string(*rec.k) : std::string()) << ',' << (rec.converged ? 1 : 0) << ','
        << csv_field(rec.failure) << '\n';
  }
}

void write_difference_csv(const StudyResult& r, std::ostream& out) {
  out << "comparison,bias,se,rmse,length,cp,power\n";
  for (std::size_t i = 0; i + 1 < r.summaries.size(); i += 2) {
    const auto& a = r.summaries[i];
    const auto& b = r.summaries[i + 1];
    out << csv_field(b.method + " - " + a.method) << ',' << format_double(b.abs_bias - a.abs_bias) << ','
        << format_double(b.sd - a.sd) << ',' << format_double(b.rmse - a.rmse) << ','
        << format_double(b.mean_ci_length - a.mean_ci_length) << ',' << format_double(b.coverage - a.coverage)
        << ',' << format_double(b.power - a.power) << '\n';
  }
}

}  // namespace proxigmm
