#include "proxigmm/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "proxigmm/baselines.hpp"
#include "proxigmm/error.hpp"
#include "proxigmm/rng.hpp"
#include "proxigmm/selection.hpp"
#include "proxigmm/simulation.hpp"

namespace proxigmm {

namespace {

namespace fs = std::filesystem;

enum class OutputFormat { json, csv };

struct DataOptions {
  std::string data;
  std::string outcome = "Y";
  std::string treatment = "A";
  std::string proxies_z = "Z";
  std::string proxies_w = "W";
  std::string covariates = "X";
  std::string sieve = "power";
  std::string structure = "tensor";
  std::string sieve_config;
  int z_degree = -1;
  int x_degree = -1;
  int knots = -1;
  int kmax = 12;
};

struct StudyOptions {
  std::string scenario = "I";
  std::size_t n = 400;
  int reps = 500;
  std::uint64_t seed = 1;
  int kmax = 12;
  std::string methods = "all";
  std::string noise = "sd";
  std::string level = "significant";
  std::string data_out;
};

std::vector<std::string> split_names(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

OutputFormat parse_format(const std::string& s) {
  if (s == "json") return OutputFormat::json;
  if (s == "csv") return OutputFormat::csv;
  fail(ErrorCode::InvalidArgument, "--format must be json or csv");
}

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (flag < 0) fail(ErrorCode::InvalidArgument, "--threads must be positive");
  if (const char* env = std::getenv("PROXIGMM_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1 || v > 4096)
      fail(ErrorCode::InvalidArgument, std::string("PROXIGMM_THREADS must be a positive integer, got '") + env + "'");
    return static_cast<int>(v);
  }
  return 0;
}

std::ofstream open_output(const fs::path& dir, const std::string& name) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::InvalidArgument, "cannot create --out-dir '" + dir.string() + "': " + ec.message());
  std::ofstream f(dir / name, std::ios::binary);
  if (!f) fail(ErrorCode::InvalidArgument, "cannot write '" + (dir / name).string() + "'");
  return f;
}

Dataset load_data(const DataOptions& o) {
  if (o.data.empty()) fail(ErrorCode::InvalidArgument, "--data is required");
  VariableRoles roles;
  roles.outcome = o.outcome;
  roles.treatment = o.treatment;
  roles.proxies_z = split_names(o.proxies_z);
  roles.proxies_w = split_names(o.proxies_w);
  roles.covariates = split_names(o.covariates);
  roles.validate();
  return load_csv(o.data, roles);
}

SieveSpec sieve_for(const DataOptions& o, const Dataset& ds) {
  if (!o.sieve_config.empty()) {
    std::ifstream f(o.sieve_config);
    if (!f) fail(ErrorCode::InvalidArgument, "cannot read --sieve-config '" + o.sieve_config + "'");
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::InvalidArgument, std::string("--sieve-config is not valid JSON: ") + e.what());
    }
    SieveSpec spec = sieve_from_json(j);
    spec.fitted = false;
    return spec;
  }
  const SieveFamily family = parse_sieve_family(o.sieve);
  const SieveStructure structure = parse_sieve_structure(o.structure);
  BlockSieve z{1, 0};
  BlockSieve x = family == SieveFamily::power ? BlockSieve{2, 0} : BlockSieve{3, 1};
  if (o.z_degree >= 0) z.degree = o.z_degree;
  if (o.x_degree >= 0) x.degree = o.x_degree;
  if (o.knots >= 0) x.knots = o.knots;
  return make_sieve_spec(ds, family, structure, z, x);
}

void add_data_options(CLI::App* cmd, DataOptions& o) {
  cmd->add_option("--data", o.data, "Input CSV file")->required();
  cmd->add_option("--outcome", o.outcome, "Outcome column")->capture_default_str();
  cmd->add_option("--treatment", o.treatment, "Binary treatment column")->capture_default_str();
  cmd->add_option("--proxies-z", o.proxies_z, "Treatment proxy columns (comma separated)")->capture_default_str();
  cmd->add_option("--proxies-w", o.proxies_w, "Outcome proxy columns (comma separated)")->capture_default_str();
  cmd->add_option("--covariates", o.covariates, "Covariate columns (comma separated, may be empty)")
      ->capture_default_str();
  cmd->add_option("--sieve", o.sieve, "Sieve family: power or bspline")->capture_default_str();
  cmd->add_option("--structure", o.structure, "Sieve structure: tensor or additive")->capture_default_str();
  cmd->add_option("--sieve-config", o.sieve_config, "JSON sieve description (overrides --sieve/--structure)");
  cmd->add_option("--z-degree", o.z_degree, "Degree of each Z variable");
  cmd->add_option("--x-degree", o.x_degree, "Degree of each X variable");
  cmd->add_option("--knots", o.knots, "Interior knots per X variable (bspline)");
  cmd->add_option("--kmax", o.kmax, "Largest number of moments considered")->capture_default_str();
}

void write_summary(const StudyResult& r, OutputFormat fmt, std::ostream& out) {
  if (fmt == OutputFormat::csv) {
    write_summary_csv(r, out);
    return;
  }
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : r.summaries)
    arr.push_back({{"method", s.method},
                   {"bias", s.abs_bias},
                   {"se", s.sd},
                   {"rmse", s.rmse},
                   {"length", s.mean_ci_length},
                   {"cp", s.coverage},
                   {"power", s.power},
                   {"reps_converged", s.reps_converged},
                   {"mean_se", s.mean_se},
                   {"degenerate", s.degenerate}});
  out << nlohmann::json{{"scenario", to_string(r.config.scenario.scenario)},
                        {"n", r.config.scenario.n},
                        {"summaries", arr}}
             .dump(2)
      << '\n';
}

void emit_study(const StudyResult& r, const std::string& out_dir, OutputFormat fmt, std::ostream& out,
                bool differences) {
  if (!out_dir.empty()) {
    auto s = open_output(out_dir, "summary.csv");
    write_summary_csv(r, s);
    auto h = open_output(out_dir, "k_histogram.csv");
    write_k_histogram_csv(r, h);
    auto p = open_output(out_dir, "replications.csv");
    write_replications_csv(r, p);
    if (differences) {
      auto d = open_output(out_dir, "differences.csv");
      write_difference_csv(r, d);
    }
  }
  write_summary(r, fmt, out);
  if (differences && fmt == OutputFormat::csv) write_difference_csv(r, out);
}

StudyConfig study_config(const StudyOptions& o, int threads) {
  if (o.reps < 1) fail(ErrorCode::InvalidArgument, "--reps must be at least 1");
  if (o.n < 10) fail(ErrorCode::InvalidArgument, "--n must be at least 10");
  if (o.kmax < 4) fail(ErrorCode::InvalidArgument, "--kmax must be at least 4 (the number of bridge parameters)");
  StudyConfig cfg;
  cfg.scenario.scenario = parse_scenario(o.scenario);
  cfg.scenario.n = o.n;
  cfg.scenario.noise = parse_noise_convention(o.noise);
  cfg.reps = o.reps;
  cfg.base_seed = o.seed;
  cfg.k_bar = o.kmax;
  cfg.threads = threads;
  return cfg;
}

void add_study_options(CLI::App* cmd, StudyOptions& o, int& threads, std::string& out_dir, std::string& format) {
  cmd->add_option("--n", o.n, "Sample size per replication")->capture_default_str();
  cmd->add_option("--reps", o.reps, "Number of replications")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Base seed")->capture_default_str();
  cmd->add_option("--kmax", o.kmax, "Largest number of moments considered")->capture_default_str();
  cmd->add_option("--noise", o.noise, "Noise convention: sd or squared")->capture_default_str();
  cmd->add_option("--threads", threads, "Worker threads (default: PROXIGMM_THREADS or all cores)");
  cmd->add_option("--out-dir", out_dir, "Directory for CSV outputs");
  cmd->add_option("--format", format, "Summary format on stdout: csv or json")->capture_default_str();
}

int exit_code_for(const Error& e) {
  switch (e.category()) {
    case ErrorCategory::config: return kExitConfig;
    case ErrorCategory::data: return kExitData;
    case ErrorCategory::numeric: return kExitNumeric;
  }
  return kExitNumeric;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint GMM estimation of proximal bridge functions and the average treatment effect"};
  app.require_subcommand(1);

  int threads = 0;
  std::string out_dir;
  std::string format = "csv";

  StudyOptions sim;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo study of the estimators");
  add_study_options(simulate, sim, threads, out_dir, format);
  simulate->add_option("--scenario", sim.scenario, "Scenario I or II")->capture_default_str();
  simulate->add_option("--methods,--method", sim.methods, "Comma-separated methods or 'all'")->capture_default_str();
  simulate->add_option("--data-out", sim.data_out, "Also write the first replication's data to this CSV");

  StudyOptions mis;
  auto* misspec = app.add_subcommand("misspec", "Scenario II with a transformed outcome proxy");
  mis.n = 800;
  add_study_options(misspec, mis, threads, out_dir, format);
  misspec->add_option("--level", mis.level, "correct, minor, moderate or significant")->capture_default_str();

  StudyOptions bsp;
  auto* bspline = app.add_subcommand("bspline-study", "Power series versus B-spline sieve under Scenario II");
  bsp.n = 800;
  add_study_options(bspline, bsp, threads, out_dir, format);

  DataOptions est;
  std::string est_methods = "gmm-div";
  std::string est_format = "json";
  std::string est_out_dir;
  auto* estimate = app.add_subcommand("estimate", "Estimate the average treatment effect from a CSV file");
  add_data_options(estimate, est);
  estimate->add_option("--method,--methods", est_methods, "Comma-separated methods or 'all'")->capture_default_str();
  estimate->add_option("--out-dir", est_out_dir, "Directory for report.json and loss_curve.csv");
  estimate->add_option("--format", est_format, "json or csv")->capture_default_str();

  DataOptions sel;
  std::string sel_out_dir;
  auto* select = app.add_subcommand("select-k", "Loss curve of the moment-selection criterion");
  add_data_options(select, sel);
  select->add_option("--out-dir", sel_out_dir, "Directory for loss_curve.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (simulate->parsed()) {
      const OutputFormat fmt = parse_format(format);
      StudyConfig cfg = study_config(sim, resolve_threads(threads));
      cfg.arms = arms_for(parse_methods(sim.methods));
      if (!sim.data_out.empty()) {
        std::ofstream f(sim.data_out, std::ios::binary);
        if (!f) fail(ErrorCode::InvalidArgument, "cannot write --data-out '" + sim.data_out + "'");
        write_csv(generate(cfg.scenario, derive_seed(cfg.base_seed, 0)), f);
      }
      emit_study(run_study(cfg), out_dir, fmt, out, false);
      return kExitOk;
    }
    if (misspec->parsed()) {
      const OutputFormat fmt = parse_format(format);
      const StudyConfig base = study_config(mis, resolve_threads(threads));
      const StudyResult r = run_misspec_study(parse_misspecification(mis.level), base.scenario.n, base.reps,
                                              base.base_seed, base.k_bar, base.threads, base.scenario.noise);
      emit_study(r, out_dir, fmt, out, false);
      return kExitOk;
    }
    if (bspline->parsed()) {
      const OutputFormat fmt = parse_format(format);
      const StudyConfig base = study_config(bsp, resolve_threads(threads));
      const StudyResult r =
          run_bspline_study(base.scenario.n, base.reps, base.base_seed, base.k_bar, base.threads, base.scenario.noise);
      emit_study(r, out_dir, fmt, out, true);
      return kExitOk;
    }
    if (estimate->parsed()) {
      const OutputFormat fmt = parse_format(est_format);
      const Dataset ds = load_data(est);
      const auto methods = parse_methods(est_methods);
      MethodContext ctx{linear_outcome_bridge(ds), fit_sieve(sieve_for(est, ds), ds), est.kmax, {}};
      if (est.kmax < static_cast<int>(ctx.bridge.p()))
        fail(ErrorCode::InvalidArgument, "--kmax must be at least " + std::to_string(ctx.bridge.p()));
      std::vector<EstimateReport> reports;
      for (Method m : methods) reports.push_back(run_method(m, ds, ctx));
      nlohmann::json j{{"n", ds.n()}, {"estimates", nlohmann::json::array()}};
      for (const auto& r : reports) {
        nlohmann::json rj = to_json(r);
        if (r.selection) {
          rj["k_star"] = r.selection->k_star;
          nlohmann::json curve = nlohmann::json::array();
          for (std::size_t i = 0; i < r.selection->k_grid.size(); ++i) {
            const double s = r.selection->scores[i];
            curve.push_back({{"K", r.selection->k_grid[i]},
                             {"bias_term", r.selection->bias_terms[i]},
                             {"variance_term", r.selection->variance_terms[i]},
                             {"score", std::isfinite(s) ? nlohmann::json(s) : nlohmann::json(nullptr)}});
          }
          rj["loss_curve"] = curve;
        }
        j["estimates"].push_back(rj);
      }
      if (!est_out_dir.empty()) {
        auto f = open_output(est_out_dir, "report.json");
        f << j.dump(2) << '\n';
        for (const auto& r : reports)
          if (r.selection) {
            auto c = open_output(est_out_dir, "loss_curve.csv");
            write_loss_curve(*r.selection, c);
          }
      }
      if (fmt == OutputFormat::json) {
        out << j.dump(2) << '\n';
      } else {
        out << "method,tau_hat,se_tau,ci_lo,ci_hi,k\n";
        for (const auto& r : reports)
          out << r.method << ',' << format_double(r.tau_hat) << ',' << format_double(r.se_tau) << ','
              << format_double(r.ci95.lo) << ',' << format_double(r.ci95.hi) << ','
              << (r.k ? std::to_string(*r.k) : std::string()) << '\n';
      }
      return kExitOk;
    }
    if (select->parsed()) {
      const Dataset ds = load_data(sel);
      const OutcomeBridge bridge = linear_outcome_bridge(ds);
      const SelectionDiagnostics d = select_k(ds, bridge, fit_sieve(sieve_for(sel, ds), ds), sel.kmax);
      if (!sel_out_dir.empty()) {
        auto f = open_output(sel_out_dir, "loss_curve.csv");
        write_loss_curve(d, f);
      }
      write_loss_curve(d, out);
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitConfig;
}

}  // namespace proxigmm
