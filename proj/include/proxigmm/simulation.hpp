#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "proxigmm/baselines.hpp"
#include "proxigmm/bridge.hpp"
#include "proxigmm/dataset.hpp"
#include "proxigmm/sieve.hpp"

namespace proxigmm {

enum class Scenario { I, II };

Scenario parse_scenario(const std::string& s);
std::string to_string(Scenario s);

/// How the heteroskedastic noise functions enter the design.
/// `standard_deviation`: e_j | X = x has standard deviation sigma_j(x).
/// `squared`: e_j | X = x has standard deviation sigma_j(x)^2.
enum class NoiseConvention { standard_deviation, squared };

NoiseConvention parse_noise_convention(const std::string& s);
std::string to_string(NoiseConvention c);

struct ScenarioConfig {
  DgpCoefficients coefficients;
  Scenario scenario = Scenario::I;
  std::size_t n = 400;
  double tau0 = 0.5;  // treatment coefficient of Y, which is the average effect
  NoiseConvention noise = NoiseConvention::standard_deviation;

  /// Noise standard deviations of (e1, e2, e3) at covariate value x.
  std::array<double, 3> noise_sd(double x) const;
};

struct GeneratedData {
  Dataset data;
  Vector u;  // latent confounder, for oracle checks only
};

/// One draw of size config.n; columns A, Y, W, X, Z. Deterministic in (config, seed).
Dataset generate(const ScenarioConfig& config, std::uint64_t seed);
GeneratedData generate_with_latent(const ScenarioConfig& config, std::uint64_t seed);

/// One estimator configuration evaluated in every replication.
struct StudyArm {
  std::string label;
  Method method = Method::gmm_div;
  SieveFamily sieve = SieveFamily::power;
};

std::vector<StudyArm> arms_for(const std::vector<Method>& methods);

struct StudyConfig {
  ScenarioConfig scenario;
  std::vector<StudyArm> arms;
  int reps = 500;
  std::uint64_t base_seed = 1;
  int k_bar = 12;
  Misspecification misspec = Misspecification::correct;
  /// 0 uses the OpenMP default.
  int threads = 0;
  /// Run the plain loop instead of the OpenMP loop.
  bool serial = false;
};

struct ReplicationRecord {
  int rep = 0;
  std::string label;
  bool converged = false;
  double tau_hat = 0.0;
  double se_tau = 0.0;
  Interval ci95;
  bool reject = false;
  std::optional<int> k;
  std::string failure;
};

struct ReplicationSummary {
  std::string method;
  double abs_bias = 0.0;
  double sd = 0.0;
  double rmse = 0.0;
  double mean_se = 0.0;
  double mean_ci_length = 0.0;
  double coverage = 0.0;
  double power = 0.0;
  int reps_converged = 0;
  bool degenerate = false;  // fewer than two converged replications
};

struct StudyResult {
  StudyConfig config;
  std::vector<ReplicationRecord> records;  // ordered by (rep, arm)
  std::vector<ReplicationSummary> summaries;  // ordered as config.arms
  std::map<int, int> k_histogram;  // of the first gmm-div arm
};

/// Metrics for one estimator from its per-replication records.
ReplicationSummary summarize(const std::string& label, const std::vector<ReplicationRecord>& records, double tau0);

StudyResult run_study(const StudyConfig& config);
StudyResult run_study(const ScenarioConfig& scenario, const std::vector<Method>& methods, int reps,
                      std::uint64_t base_seed, int k_bar = 12, int threads = 0);

/// Scenario II with the W column transformed before estimation; GMM and PDR.
StudyResult run_misspec_study(Misspecification level, std::size_t n, int reps, std::uint64_t base_seed,
                              int k_bar = 12, int threads = 0,
                              NoiseConvention noise = NoiseConvention::standard_deviation);

/// Scenario II, the sieve estimator with power series and with B-splines
/// on identical data.
StudyResult run_bspline_study(std::size_t n, int reps, std::uint64_t base_seed, int k_bar = 12, int threads = 0,
                              NoiseConvention noise = NoiseConvention::standard_deviation);

void write_summary_csv(const StudyResult& r, std::ostream& out);
void write_k_histogram_csv(const StudyResult& r, std::ostream& out);
void write_replications_csv(const StudyResult& r, std::ostream& out);
/// Differences between consecutive arm pairs (second minus first), for the B-spline comparison.
void write_difference_csv(const StudyResult& r, std::ostream& out);

}  // namespace proxigmm
