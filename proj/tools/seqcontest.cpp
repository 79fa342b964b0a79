#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "seqcontest/cli.hpp"

namespace cli = seqcontest::cli;

int main(int argc, char** argv) {
  CLI::App app{"Sequential lottery contests: equilibrium solver, lab-protocol simulator and analysis"};
  app.set_version_flag("--version", SEQCONTEST_VERSION);
  app.require_subcommand(1);

  cli::SolveOptions solve;
  std::string solve_format = "text";
  std::string solve_out;
  auto* solve_cmd = app.add_subcommand("solve", "Subgame-perfect equilibrium for a move sequence");
  solve_cmd->add_option("--seq", solve.sequence, "Move sequence, e.g. 1,1,1")->required();
  solve_cmd->add_option("--prize", solve.prize, "Prize V")->capture_default_str();
  solve_cmd->add_option("--endowment", solve.endowment, "Endowment")->capture_default_str();
  auto* jow_opt = solve_cmd->add_option("--jow", solve.jow, "Joy of winning w")->capture_default_str();
  solve_cmd->add_option("--calibrate-from", solve.calibrate_from,
                        "Calibrate w from an observed simultaneous-contest mean investment")
      ->excludes(jow_opt);
  solve_cmd->add_option("--format", solve_format, "Output format")
      ->check(CLI::IsMember({"text", "json", "csv"}))
      ->capture_default_str();
  solve_cmd->add_option("--out", solve_out, "Write to this file instead of stdout");

  cli::SimulateOptions simulate;
  std::string sim_format = "csv";
  std::string sim_config, sim_out = "out";
  auto* sim_cmd = app.add_subcommand("simulate", "Run the lab protocol with programmatic agents");
  sim_cmd->add_option("--config", sim_config, "Simulation config (JSON)")->required();
  sim_cmd->add_option("--seed", simulate.seed, "Override the master seed");
  sim_cmd->add_option("--replications", simulate.replications, "Override the replication count");
  sim_cmd->add_option("--out", sim_out, "Output directory")->capture_default_str();
  sim_cmd->add_option("--format", sim_format, "Log format")
      ->check(CLI::IsMember({"csv", "json"}))
      ->capture_default_str();

  cli::AnalyzeOptions analyze;
  std::vector<std::string> logs, tests;
  std::string analyze_out = "analysis";
  auto* an_cmd = app.add_subcommand("analyze", "Summaries, trend regressions, Wald and trend tests on logs");
  an_cmd->add_option("logs", logs, "Session logs (.csv or .json)")->required();
  an_cmd->add_option("--last-rounds", analyze.last_rounds, "Use only each log's final k rounds")
      ->check(CLI::PositiveNumber);
  an_cmd->add_option("--tests", tests, "Subset of: summary trend wald jt");
  an_cmd->add_option("--jt-alpha", analyze.jt_alpha, "Threshold reported for the trend test")->capture_default_str();
  an_cmd->add_option("--out", analyze_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::kExitInput;
  }

  if (*solve_cmd) {
    solve.format = solve_format == "json" ? cli::SolveFormat::Json
                   : solve_format == "csv" ? cli::SolveFormat::Csv
                                           : cli::SolveFormat::Text;
    if (!solve_out.empty()) solve.out = solve_out;
    return cli::cmd_solve(solve, std::cout, std::cerr);
  }
  if (*sim_cmd) {
    simulate.config = sim_config;
    simulate.out = sim_out;
    simulate.format = sim_format == "json" ? seqcontest::LogFormat::Json : seqcontest::LogFormat::Csv;
    return cli::cmd_simulate(simulate, std::cout, std::cerr);
  }
  for (const auto& l : logs) analyze.logs.emplace_back(l);
  if (!tests.empty()) analyze.tests = {tests.begin(), tests.end()};
  analyze.out = analyze_out;
  return cli::cmd_analyze(analyze, std::cout, std::cerr);
}
