#pragma once

// Command implementations behind the seqcontest executable. Each command
// returns a process exit code: 0 success, 2 bad input (usage, config,
// schema), 3 I/O failure.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqcontest/behavior.hpp"
#include "seqcontest/equilibrium.hpp"
#include "seqcontest/io.hpp"
#include "seqcontest/simulate.hpp"
#include "seqcontest/stats.hpp"

#ifndef SEQCONTEST_VERSION
#define SEQCONTEST_VERSION "1.0.0"
#endif

namespace seqcontest::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitIo = 3;

inline int exit_code_for(const Error& e) { return e.code() == ErrorCode::IoFailure ? kExitIo : kExitInput; }

/// One manifest per command invocation, listing every file it produced.
struct RunManifest {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> outputs;
  std::string started_utc;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"schema", 1},
                        {"command", command},
                        {"config", config_path},
                        {"versions", {{"seqcontest", SEQCONTEST_VERSION}}},
                        {"outputs", outputs},
                        {"started_utc", started_utc},
                        {"wall_seconds", wall_seconds}};
    j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
    return j;
  }
};

inline std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

inline std::string fixed(double v, int digits = 2) {
  if (std::isnan(v)) return "n/a";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << v;
  return out.str();
}

// ---------------------------------------------------------------------------
// solve

enum class SolveFormat { Text, Json, Csv };

struct SolveOptions {
  std::string sequence;
  double prize = 240.0;
  double endowment = 240.0;
  double jow = 0.0;
  std::optional<double> calibrate_from;
  SolveFormat format = SolveFormat::Text;
  std::optional<std::filesystem::path> out;
};

inline int cmd_solve(const SolveOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    ContestSpec spec;
    spec.sequence = MoveSequence::parse(opt.sequence);
    spec.prize = opt.prize;
    spec.endowment = opt.endowment;
    spec.joy_of_winning = opt.jow;
    std::optional<JowCalibration> calibration;
    if (opt.calibrate_from) {
      calibration = calibrate_jow(*opt.calibrate_from, spec.sequence.players(), spec.prize);
      spec.joy_of_winning = calibration->joy_of_winning;
    }
    spec.check();
    const EquilibriumSolution sol = solve_spne(spec);

    std::ostringstream text;
    if (opt.format == SolveFormat::Json) {
      nlohmann::json j = to_json(sol);
      if (calibration) {
        j["calibrated_from"] = *opt.calibrate_from;
        j["calibration_clamped"] = calibration->clamped;
      }
      text << j.dump(2) << "\n";
    } else if (opt.format == SolveFormat::Csv) {
      text << "stage,players,investment,investment_normalized\n";
      for (std::size_t t = 0; t < sol.sequence.stage_count(); ++t) {
        text << t + 1 << ',' << sol.sequence.at(t) << ',' << io::format_number(sol.scaled_stage_investments[t])
             << ',' << io::format_number(sol.stage_investments[t]) << "\n";
      }
      text << "aggregate," << sol.sequence.players() << ',' << io::format_number(sol.scaled_aggregate) << ','
           << io::format_number(sol.aggregate) << "\n";
    } else {
      if (calibration) {
        text << "joy of winning calibrated from mean " << fixed(*opt.calibrate_from) << ": w = "
             << fixed(calibration->joy_of_winning) << (calibration->clamped ? " (clamped at 0)" : "") << "\n";
      }
      text << "sequence " << sol.sequence.to_string() << ", prize " << fixed(sol.prize) << ", w "
           << fixed(sol.joy_of_winning) << "\n";
      const auto players = sol.player_investments();
      for (std::size_t i = 0; i < players.size(); ++i) text << "x" << i + 1 << " = " << fixed(players[i]) << "\n";
      text << "X = " << fixed(sol.scaled_aggregate) << "\n";
    }
    if (opt.out) io::write_file_atomic(*opt.out, text.str());
    else out << text.str();
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

// ---------------------------------------------------------------------------
// simulate: config parsing

struct SimulationPlan {
  std::string name = "session";
  std::uint64_t seed = 0;
  int replications = 1;
  std::vector<SessionConfig> sessions;
};

namespace detail {

inline ResponseModel model_from(const nlohmann::json& j, const std::map<std::string, ResponseModel>& named) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (const auto it = named.find(name); it != named.end()) return it->second;
    return response_preset(name);
  }
  if (j.is_object()) return j.get<ResponseModel>();
  throw Error(ErrorCode::ConfigInvalid, "a response model is a preset name or an object");
}

inline BehaviorPolicy policy_from(const nlohmann::json& j, const MoveSequence& treatment,
                                  const std::map<std::string, ResponseModel>& named) {
  if (!j.is_object() || !j.contains("kind")) throw Error(ErrorCode::ConfigInvalid, "policy needs a 'kind'");
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "spne") return SpnePolicy{};
  if (kind == "jow_spne") return JowSpnePolicy{j.at("jow").get<double>()};
  if (kind == "fixed") return FixedPolicy{j.at("amount").get<double>()};
  if (kind == "imitator") return Imitator{j.value("fallback", 0.0)};
  if (kind == "responder") {
    ResponseModel m = model_from(j.at("model"), named);
    if (j.contains("noise_sd")) m.noise_sd = j.at("noise_sd").get<double>();
    if (m.noise_sd < 0.0) throw Error(ErrorCode::ConfigInvalid, "noise_sd must be nonnegative");
    return EmpiricalResponder{m};
  }
  if (kind == "optimizing_leader") {
    ResponseModelSet models;
    if (j.contains("models")) {
      const auto& jm = j.at("models");
      models.second = model_from(jm.at("second"), named);
      if (jm.contains("third")) models.third = model_from(jm.at("third"), named);
    } else {
      models = default_models(treatment);
    }
    return OptimizingLeader{models, j.value("jow", 0.0)};
  }
  throw Error(ErrorCode::ConfigInvalid, "unknown policy kind '" + kind + "'");
}

}  // namespace detail

/// Parses and fully validates a simulation config before anything runs.
inline SimulationPlan parse_simulation_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  try {
    if (j.value("schema", 1) != 1) throw Error(ErrorCode::ConfigInvalid, "unsupported config schema");
    SimulationPlan plan;
    plan.name = j.value("name", std::string("session"));
    plan.seed = j.value("seed", std::uint64_t{0});
    plan.replications = j.value("replications", 1);
    if (plan.replications < 1) throw Error(ErrorCode::ConfigInvalid, "replications must be at least 1");

    std::map<std::string, ResponseModel> named;
    if (j.contains("response_models")) {
      const auto& rm = j.at("response_models");
      if (rm.is_string()) {
        named = load_response_models((base_dir / rm.get<std::string>()).string());
      } else {
        for (const auto& [name, value] : rm.items()) named[name] = value.get<ResponseModel>();
      }
    }

    const int rounds = j.value("rounds", kDefaultRounds);
    const double prize = j.value("prize", 240.0);
    const double endowment = j.value("endowment", 240.0);
    const bool rounding = j.value("integer_rounding", false);
    if (!j.contains("sessions") || !j.at("sessions").is_array() || j.at("sessions").empty()) {
      throw Error(ErrorCode::ConfigInvalid, "config needs a nonempty 'sessions' array");
    }
    std::uint64_t index = 0;
    for (const auto& js : j.at("sessions")) {
      SessionConfig c;
      c.spec.sequence = MoveSequence::validate(js.at("treatment").get<std::vector<int>>());
      c.spec.prize = js.value("prize", prize);
      c.spec.endowment = js.value("endowment", endowment);
      c.spec.joy_of_winning = js.value("jow", 0.0);
      c.groups = js.at("groups").get<int>();
      c.rounds = js.value("rounds", rounds);
      c.integer_rounding = js.value("integer_rounding", rounding);
      c.seed = js.value("seed", splitmix64(plan.seed + index));
      std::vector<BehaviorPolicy> stage_policies;
      if (js.contains("policy")) {
        stage_policies.assign(c.spec.sequence.stage_count(), detail::policy_from(js.at("policy"), c.spec.sequence, named));
      } else {
        for (const auto& jp : js.at("policies")) stage_policies.push_back(detail::policy_from(jp, c.spec.sequence, named));
      }
      c.policies = per_stage_policies(c.spec.sequence, stage_policies);
      validate_config(c);
      // Surface role errors (e.g. a leader policy in a later stage) now.
      for (std::size_t slot = 0; slot < c.policies.size(); ++slot)
        resolve_policy(c.policies[slot], c.spec, c.spec.sequence.stage_of(static_cast<int>(slot)));
      plan.sessions.push_back(std::move(c));
      ++index;
    }
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("config does not match the schema: ") + e.what());
  }
}

inline SimulationPlan load_simulation_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("malformed config: ") + e.what());
  }
  return parse_simulation_config(j, path.parent_path());
}

inline std::string treatment_tag(const MoveSequence& seq) {
  std::string tag;
  for (std::size_t t = 0; t < seq.stage_count(); ++t) tag += (t ? "-" : "") + std::to_string(seq.at(t));
  return tag;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;  // overrides the config's master seed
  std::optional<int> replications;
  std::filesystem::path out = "out";
  LogFormat format = LogFormat::Csv;
};

inline int cmd_simulate(const SimulateOptions& opt, std::ostream& out, std::ostream& err) {
  const auto start = std::chrono::steady_clock::now();
  RunManifest manifest{"simulate", opt.config.string(), std::nullopt, {}, utc_now(), 0.0};
  SimulationPlan plan;
  try {
    if (!std::filesystem::exists(opt.config)) throw Error(ErrorCode::ConfigInvalid, "config not found: " + opt.config.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(io::read_file(opt.config));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ConfigInvalid, std::string("malformed config: ") + e.what());
    }
    if (opt.seed) j["seed"] = *opt.seed;
    if (opt.replications) j["replications"] = *opt.replications;
    plan = parse_simulation_config(j, opt.config.parent_path());
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
  manifest.seed = plan.seed;

  try {
    std::filesystem::create_directories(opt.out);
    const auto logs = run_batch(plan.sessions, plan.replications);
    const std::string ext = opt.format == LogFormat::Csv ? ".csv" : ".json";
    for (std::size_t i = 0; i < logs.size(); ++i) {
      const auto& log = logs[i];
      const auto file = opt.out / (plan.name + "_" + std::to_string(i / static_cast<std::size_t>(plan.replications) + 1) +
                                   "_" + treatment_tag(log.spec.sequence) + "_rep" + std::to_string(log.replication) + ext);
      export_log(log, opt.format, file);
      manifest.outputs.push_back(file.string());
      out << file.string() << ": " << log.records.size() << " records\n";
    }
    manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto manifest_path = opt.out / (plan.name + "_manifest.json");
    io::write_file_atomic(manifest_path, manifest.to_json().dump(2) + "\n");
    out << "manifest: " << manifest_path.string() << "\n";
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOptions {
  std::vector<std::filesystem::path> logs;
  std::optional<int> last_rounds;
  std::set<std::string> tests{"summary", "trend", "wald", "jt"};
  std::filesystem::path out = "analysis";
  double jt_alpha = 0.05;
};

struct TestRow {
  std::string test, treatment, target;
  double estimate = 0.0, se = 0.0, statistic = 0.0, p_value = 1.0;
};

inline int cmd_analyze(const AnalyzeOptions& opt, std::ostream& out, std::ostream& err) {
  const auto start = std::chrono::steady_clock::now();
  for (const auto& t : opt.tests) {
    if (t != "summary" && t != "trend" && t != "wald" && t != "jt") {
      err << "error: unknown test '" << t << "' (expected summary, trend, wald, jt)\n";
      return kExitInput;
    }
  }
  if (opt.logs.empty()) {
    err << "error: no log files given\n";
    return kExitInput;
  }
  std::map<MoveSequence, std::vector<SessionLog>> by_treatment;
  try {
    for (const auto& path : opt.logs) {
      SessionLog log = import_log(path);
      by_treatment[log.spec.sequence].push_back(std::move(log));
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }

  std::ostringstream summary_csv, tests_csv, report;
  std::vector<TestRow> rows;
  summary_csv << "treatment,variable,mean,se,spne,observations,clusters,rounds\n";
  report << "Treatment summary" << (opt.last_rounds ? " (last " + std::to_string(*opt.last_rounds) + " rounds)" : " (all rounds)")
         << "\n";
  report << std::left << std::setw(10) << "treatment" << std::setw(6) << "var" << std::right << std::setw(10) << "SPNE"
         << std::setw(10) << "mean" << std::setw(10) << "(se)" << std::setw(8) << "N" << std::setw(10) << "clusters"
         << "\n";

  try {
    for (const auto& [seq, logs] : by_treatment) {
      ContestSpec spec = logs.front().spec;
      spec.joy_of_winning = 0.0;
      const auto spne = solve_spne(spec);
      const auto predicted = spne.player_investments();
      const auto summary = stats::treatment_summary(logs, opt.last_rounds);
      const std::string tag = seq.to_string();

      // Simulated logs store investments on the 2^-20 grid, so the Wald
      // hypotheses are the predictions carried onto that grid.
      struct Cell {
        const stats::SummaryCell* summary;
        double prediction, on_grid;
      };
      std::vector<Cell> cells;
      double aggregate_on_grid = 0.0;
      for (std::size_t i = 0; i < summary.players.size(); ++i) {
        cells.push_back({&summary.players[i], predicted[i], snap_to_grid(predicted[i])});
        aggregate_on_grid += cells.back().on_grid;
      }
      cells.push_back({&summary.aggregate, spne.scaled_aggregate, aggregate_on_grid});

      for (const auto& [cell, prediction, on_grid] : cells) {
        const auto clusters = cell->sample.cluster_count();
        if (opt.tests.count("summary")) {
          summary_csv << treatment_tag(seq) << ',' << cell->label << ',' << io::format_number(cell->mean) << ','
                      << (std::isnan(cell->se) ? "" : io::format_number(cell->se)) << ','
                      << io::format_number(prediction) << ',' << summary.observations << ',' << summary.clusters << ','
                      << summary.rounds << "\n";
          report << std::left << std::setw(10) << tag << std::setw(6) << cell->label << std::right << std::setw(10)
                 << fixed(prediction) << std::setw(10) << fixed(cell->mean) << std::setw(10)
                 << ("(" + fixed(cell->se) + ")") << std::setw(8) << summary.observations << std::setw(10)
                 << summary.clusters << "\n";
        }
        if (opt.tests.count("wald") && clusters >= 2) {
          const auto w = stats::wald_mean(cell->sample, on_grid);
          rows.push_back({"wald_vs_spne", treatment_tag(seq), cell->label, w.mean, w.se, w.statistic, w.p_value});
        }
      }
      if (opt.tests.count("trend")) {
        try {
          const auto fit = stats::trend_by_round(logs, stats::TrendTarget::Aggregate);
          const double slope = fit.coefficients(1), se = fit.se(1);
          double stat = 0.0;
          if (se > 0.0) stat = (slope / se) * (slope / se);
          else if (std::abs(slope) > 1e-9 * std::max(1.0, std::abs(fit.coefficients(0))))
            stat = std::numeric_limits<double>::infinity();
          rows.push_back({"trend_by_round", treatment_tag(seq), "X", slope, se, stat, stats::chi2_1_upper_tail(stat)});
        } catch (const Error& e) {
          report << "trend " << tag << ": skipped (" << e.what() << ")\n";
        }
      }
    }

    if (opt.tests.count("jt")) {
      if (by_treatment.size() >= 3) {
        std::vector<std::vector<double>> groups;
        std::string order;
        for (const auto& [seq, logs] : by_treatment) {
          groups.push_back(stats::group_mean_aggregates(logs, opt.last_rounds));
          order += (order.empty() ? "" : " < ") + treatment_tag(seq);
        }
        const auto jt = stats::jonckheere_terpstra(groups);
        rows.push_back({"jonckheere_terpstra", order, "X group means", jt.statistic, std::sqrt(jt.null_variance), jt.z,
                        jt.p_value});
        report << "\nJonckheere-Terpstra trend across " << order << ": J = " << fixed(jt.statistic, 1)
               << ", z = " << fixed(jt.z, 3) << ", p = " << fixed(jt.p_value, 4)
               << (jt.p_value < opt.jt_alpha ? " (below " : " (not below ") << opt.jt_alpha << ")\n";
      } else {
        report << "\nJonckheere-Terpstra: skipped (needs at least three treatments)\n";
      }
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }

  tests_csv << "test,treatment,target,estimate,se,statistic,p_value\n";
  if (!rows.empty()) report << "\nTests\n";
  for (const auto& r : rows) {
    tests_csv << r.test << ',' << r.treatment << ',' << r.target << ',' << io::format_number(r.estimate) << ','
              << io::format_number(r.se) << ',' << io::format_number(r.statistic) << ','
              << io::format_number(r.p_value) << "\n";
    report << std::left << std::setw(22) << r.test << std::setw(26) << r.treatment << std::setw(16) << r.target
           << std::right << " est " << std::setw(10) << fixed(r.estimate, 3) << "  stat " << std::setw(10)
           << fixed(r.statistic, 3) << "  p " << fixed(r.p_value, 4) << "\n";
  }

  try {
    std::filesystem::create_directories(opt.out);
    RunManifest manifest{"analyze", "", std::nullopt, {}, utc_now(), 0.0};
    for (const auto& p : opt.logs) manifest.config_path += (manifest.config_path.empty() ? "" : ";") + p.string();
    const auto write = [&](const std::string& name, const std::string& text) {
      const auto path = opt.out / name;
      io::write_file_atomic(path, text);
      manifest.outputs.push_back(path.string());
    };
    if (opt.tests.count("summary")) write("summary.csv", summary_csv.str());
    write("tests.csv", tests_csv.str());
    write("report.txt", report.str());
    manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    io::write_file_atomic(opt.out / "analyze_manifest.json", manifest.to_json().dump(2) + "\n");
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
  out << report.str();
  return kExitOk;
}

}  // namespace seqcontest::cli
