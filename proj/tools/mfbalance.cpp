// mfbalance: trace generation, series analysis, simulation and sweeps.
//
// Exit codes: 0 ok, 2 config/input error, 3 calibration failure,
// 4 degenerate data, 5 every sweep run failed.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "mfbalance.hpp"

namespace mb = mfbalance;

namespace {

enum Exit { kOk = 0, kInput = 2, kCalibration = 3, kDegenerate = 4, kSweepFailed = 5 };

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("mfbalance");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("MFBALANCE_LOG")) {
    const std::string lvl = env;
    if (lvl == "error")
      spdlog::set_level(spdlog::level::err);
    else if (lvl == "warn")
      spdlog::set_level(spdlog::level::warn);
    else if (lvl == "info")
      spdlog::set_level(spdlog::level::info);
    else if (lvl == "debug")
      spdlog::set_level(spdlog::level::debug);
    else
      spdlog::warn("MFBALANCE_LOG='{}' not one of error,warn,info,debug; using warn", lvl);
  }
}

std::vector<double> parse_doubles(const std::string& spec, const char* what) {
  std::vector<double> out;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw mb::ParameterError(std::string(what) + ": cannot parse '" + tok + "'");
    }
  }
  return out;
}

std::vector<double> read_series(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw mb::ParameterError("cannot open input file '" + path + "'");
  std::vector<double> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(line, &used));
      if (line.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(line);
    } catch (const std::exception&) {
      throw mb::ParameterError(path + " line " + std::to_string(lineno) + ": not a number");
    }
  }
  return out;
}

template <class F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const mb::CalibrationError& e) {
    spdlog::error("{}", e.what());
    return kCalibration;
  } catch (const mb::DegenerateInputError& e) {
    spdlog::error("{}", e.what());
    return kDegenerate;
  } catch (const mb::ParameterError& e) {
    spdlog::error("{}", e.what());
    return kInput;
  } catch (const mb::InvariantError& e) {
    spdlog::error("{}", e.what());
    return kInput;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kInput;
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw mb::ParameterError("cannot write '" + path + "'");
  return out;
}

int cmd_generate(const std::string& config, const std::string& out_path, std::optional<std::uint64_t> seed) {
  auto cfg = mb::load_sim_config(config);
  if (seed) cfg.seed = *seed;
  cfg.validate();
  const auto rules = cfg.rule_set();
  spdlog::info("generating {} slots at H={} dh={}", cfg.traffic.n_slots, cfg.traffic.target_H, cfg.traffic.target_dh);
  const auto trace = mb::make_trace(cfg, rules);
  auto out = open_out(out_path);
  mb::write_trace_csv(out, trace);
  std::printf("H=%.4f dh=%.4f\n", trace.achieved_H, trace.achieved_dh);
  if (trace.saturated) spdlog::warn("dh target above reach; accepted saturated dh={:.3f}", trace.achieved_dh);
  return kOk;
}

int cmd_analyze(const std::string& input, const std::string& qgrid_spec, const std::string& scales_spec) {
  const auto series = read_series(input);
  if (series.size() < 1024) throw mb::ParameterError("analyze: need at least 1024 values, got " + std::to_string(series.size()));
  const mb::QGrid qgrid = qgrid_spec.empty() ? mb::QGrid{} : mb::QGrid(parse_doubles(qgrid_spec, "--qgrid"));
  mb::ScalePlan plan;
  const auto scales = scales_spec.empty() ? std::vector<double>{} : parse_doubles(scales_spec, "--scales");
  if (scales.empty()) {
    plan = mb::ScalePlan::log_spaced(series.size());
  } else if (scales.size() == 1) {
    plan = mb::ScalePlan::log_spaced(series.size(), static_cast<std::size_t>(scales[0]));
  } else {
    for (double s : scales) {
      if (!(s >= 1.0) || s != std::floor(s)) throw mb::ParameterError("--scales: window sizes must be positive integers");
      plan.scales.push_back(static_cast<std::size_t>(s));
    }
    plan.validate(series.size());
  }
  const auto est = mb::mfdfa(series, qgrid, plan);
  std::printf("q,h_q,r2\n");
  for (double q : qgrid.qs()) std::printf("%g,%.6f,%.6f\n", q, est.hq.at(q), est.fit_quality.at(q));
  std::printf("H=%.4f dh=%.4f\n", est.H, est.dh);
  if (est.low_confidence) spdlog::warn("estimate flagged low confidence");
  return kOk;
}

int cmd_simulate(const std::string& config, const std::string& out_path, std::optional<std::uint64_t> seed,
                 const std::string& method, const std::string& audit_path) {
  auto cfg = mb::load_sim_config(config);
  if (seed) cfg.seed = *seed;
  if (!method.empty()) cfg.method = mb::run_method_from_string(method);
  const auto result = mb::run_detailed(cfg);
  if (!out_path.empty()) {
    auto out = open_out(out_path);
    mb::write_report_csv(out, result.reports);
  } else {
    mb::write_report_csv(std::cout, result.reports);
  }
  if (!audit_path.empty()) {
    auto audit = open_out(audit_path);
    for (const auto& [m, records] : result.audit)
      for (const auto& rec : records) {
        auto line = rec;
        line["method"] = mb::to_string(m);
        audit << line.dump() << '\n';
      }
  }
  std::cout << mb::render_table(result.reports);
  return kOk;
}

int cmd_sweep(const std::string& config, const std::string& grid_path, const std::string& out_path, int jobs,
              const std::string& method) {
  auto base = mb::load_sim_config(config);
  if (!method.empty()) base.method = mb::run_method_from_string(method);
  const auto grid = mb::load_scenario_grid(grid_path, base);
  spdlog::info("sweep: {} H x {} dh x {} lambda x {} seeds, {} jobs", grid.H_values.size(), grid.dh_values.size(),
               grid.lambda_values.size(), grid.seeds.size(), jobs);
  const auto reports = mb::sweep(grid, jobs);
  if (!out_path.empty()) {
    auto out = open_out(out_path);
    mb::write_report_csv(out, reports);
  }
  std::cout << mb::render_table(reports);
  const auto failed = std::count_if(reports.begin(), reports.end(), [](const mb::RunReport& r) { return r.error.has_value(); });
  if (failed > 0) spdlog::warn("{} of {} runs failed", failed, reports.size());
  return failed == static_cast<long>(reports.size()) ? kSweepFailed : kOk;
}

int cmd_report(const std::string& input) {
  std::ifstream in(input);
  if (!in) throw mb::ParameterError("cannot open report file '" + input + "'");
  const auto reports = mb::read_report_csv(in);
  std::cout << mb::render_table(reports);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Multifractality-aware NIDS load balancing simulator"};
  app.require_subcommand(1, 1);

  std::string config, out, grid, method, audit, input, qgrid, scales;
  std::uint64_t seed_value = 0;
  int jobs = 1;

  auto* gen = app.add_subcommand("generate", "synthesize a packet trace");
  gen->add_option("--config", config, "simulation config (JSON)")->required();
  gen->add_option("--out", out, "trace CSV path")->required();
  auto* gen_seed = gen->add_option("--seed", seed_value, "master seed override");

  auto* ana = app.add_subcommand("analyze", "MF-DFA of a one-column series");
  ana->add_option("input", input, "file with one number per line")->required();
  ana->add_option("--qgrid", qgrid, "comma-separated q values (default -5..5 without 0)");
  ana->add_option("--scales", scales, "comma-separated window sizes, or a single count of log-spaced scales");

  auto* sim = app.add_subcommand("simulate", "run one configured scenario");
  sim->add_option("--config", config, "simulation config (JSON)")->required();
  sim->add_option("--out", out, "report CSV path (stdout when omitted)");
  auto* sim_seed = sim->add_option("--seed", seed_value, "master seed override");
  sim->add_option("--method", method, "sm, pm or both")->check(CLI::IsMember({"sm", "pm", "both"}, CLI::ignore_case));
  sim->add_option("--audit", audit, "rule audit JSON-lines path");

  auto* swp = app.add_subcommand("sweep", "run a scenario grid");
  swp->add_option("--config", config, "base simulation config (JSON)")->required();
  swp->add_option("--grid", grid, "grid JSON with H_values, dh_values, lambda_values, seeds")->required();
  swp->add_option("--out", out, "report CSV path");
  swp->add_option("--jobs", jobs, "parallel runs")->check(CLI::PositiveNumber);
  swp->add_option("--method", method, "sm, pm or both")->check(CLI::IsMember({"sm", "pm", "both"}, CLI::ignore_case));

  auto* rep = app.add_subcommand("report", "render a report CSV as a side-by-side table");
  rep->add_option("input", input, "report CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInput;
  }

  std::optional<std::uint64_t> seed;
  if ((gen_seed->count() > 0 && gen->parsed()) || (sim_seed->count() > 0 && sim->parsed())) seed = seed_value;

  if (gen->parsed()) return guarded([&] { return cmd_generate(config, out, seed); });
  if (ana->parsed()) return guarded([&] { return cmd_analyze(input, qgrid, scales); });
  if (sim->parsed()) return guarded([&] { return cmd_simulate(config, out, seed, method, audit); });
  if (swp->parsed()) return guarded([&] { return cmd_sweep(config, grid, out, jobs, method); });
  if (rep->parsed()) return guarded([&] { return cmd_report(input); });
  return kInput;
}
