#pragma once

// Replays the laboratory protocol: fixed matching groups of 3n subjects
// (9 for three-player contests) with fixed roles, random role-complete
// rematching into three contests every round, stage-wise revelation,
// lottery winner draws and payoff accounting.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "seqcontest/behavior.hpp"
#include "seqcontest/core.hpp"
#include "seqcontest/io.hpp"

namespace seqcontest {

inline constexpr int kContestsPerGroup = 3;
inline constexpr int kDefaultRounds = 25;

struct SessionConfig {
  ContestSpec spec;
  int groups = 1;
  int rounds = kDefaultRounds;
  std::vector<BehaviorPolicy> policies;  // one per player slot, precedence order
  bool integer_rounding = false;
  std::uint64_t seed = 0;
};

/// Expands one policy per stage into one policy per player slot.
inline std::vector<BehaviorPolicy> per_stage_policies(const MoveSequence& seq,
                                                      const std::vector<BehaviorPolicy>& stage_policies) {
  if (stage_policies.size() != seq.stage_count()) {
    throw Error(ErrorCode::BadGroupComposition, "need exactly one policy per stage");
  }
  std::vector<BehaviorPolicy> out;
  for (std::size_t t = 0; t < seq.stage_count(); ++t)
    out.insert(out.end(), static_cast<std::size_t>(seq.at(t)), stage_policies[t]);
  return out;
}

struct RoundRecord {
  int group = 0;    // 1-based
  int round = 0;    // 1-based
  int triad = 0;    // 1-based contest within the matching group
  int subject = 0;  // 1-based, unique across the session
  int stage = 0;    // 1-based
  int slot = 0;     // 1-based position within the stage
  std::vector<double> observed;  // investments of all strictly earlier stages
  double investment = 0.0;
  bool won = false;
  double payoff = 0.0;

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

/// Average first-stage investment seen by a later mover (m1), and the
/// average second-stage investment seen from stage 3 on (m2).
inline std::optional<double> observed_stage_mean(const MoveSequence& seq, const RoundRecord& r, int which_stage) {
  if (r.stage <= which_stage) return std::nullopt;
  const int first = seq.first_player(static_cast<std::size_t>(which_stage - 1));
  const int count = seq.at(static_cast<std::size_t>(which_stage - 1));
  double sum = 0.0;
  for (int i = 0; i < count; ++i) sum += r.observed.at(static_cast<std::size_t>(first + i));
  return sum / count;
}

struct SessionLog {
  ContestSpec spec;
  std::uint64_t seed = 0;
  int replication = 0;
  int groups = 0;
  int rounds = 0;
  std::vector<RoundRecord> records;

  friend bool operator==(const SessionLog& a, const SessionLog& b) {
    return a.spec.sequence == b.spec.sequence && a.spec.prize == b.spec.prize &&
           a.spec.endowment == b.spec.endowment && a.spec.joy_of_winning == b.spec.joy_of_winning &&
           a.seed == b.seed && a.replication == b.replication && a.groups == b.groups && a.rounds == b.rounds &&
           a.records == b.records;
  }
};

// ---------------------------------------------------------------------------
// Randomness

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of the stream owned by one matching group of one replication.
inline std::uint64_t derive_stream_seed(std::uint64_t master, std::uint64_t replication, std::uint64_t group) {
  return splitmix64(splitmix64(splitmix64(master) ^ replication) ^ (group + 0x632be59bd9b4e019ULL));
}

using Engine = std::mt19937_64;

inline double uniform01(Engine& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct TriadDraws {
  std::vector<double> normals;  // one standard normal per player slot
  double uniform = 0.0;         // winner draw in [0, 1)
};

inline TriadDraws draw_triad(Engine& rng, int players) {
  std::normal_distribution<double> normal;
  TriadDraws d;
  d.normals.resize(static_cast<std::size_t>(players));
  for (double& z : d.normals) z = normal(rng);
  d.uniform = uniform01(rng);
  return d;
}

// ---------------------------------------------------------------------------
// Play

struct TriadOutcome {
  InvestmentProfile investments;
  std::size_t winner = 0;
  std::vector<double> payoffs;
};

/// Continuous investments are stored on a grid of 2^-20 points. Every
/// payoff and contest total then stays exactly representable, so the
/// accounting identities hold bit for bit.
inline constexpr int kInvestmentGridBits = 20;

inline double snap_to_grid(double x) {
  return std::ldexp(std::nearbyint(std::ldexp(x, kInvestmentGridBits)), -kInvestmentGridBits);
}

inline double apply_rounding(double x, bool integer_rounding, double endowment) {
  // nearbyint honours the default round-half-to-even mode.
  x = integer_rounding ? std::nearbyint(x) : snap_to_grid(x);
  return std::clamp(x, 0.0, endowment);
}

/// Executes the stages in order; each stage's movers see every investment
/// from strictly earlier stages and nothing else.
inline TriadOutcome play_round(const ContestSpec& spec, std::span<const BehaviorPolicy> slot_policies,
                               const TriadDraws& draws, bool integer_rounding = false) {
  const int n = spec.sequence.players();
  if (slot_policies.size() != static_cast<std::size_t>(n) || draws.normals.size() != static_cast<std::size_t>(n)) {
    throw Error(ErrorCode::BadGroupComposition, "triad needs one policy and one draw per player slot");
  }
  TriadOutcome out;
  out.investments.assign(static_cast<std::size_t>(n), 0.0);
  for (std::size_t t = 0; t < spec.sequence.stage_count(); ++t) {
    const int first = spec.sequence.first_player(t);
    const std::span<const double> observed(out.investments.data(), static_cast<std::size_t>(first));
    std::vector<double> stage_moves;
    for (int k = 0; k < spec.sequence.at(t); ++k) {
      const auto slot = static_cast<std::size_t>(first + k);
      const double x = act(slot_policies[slot], spec, t, observed, draws.normals[slot]);
      stage_moves.push_back(apply_rounding(x, integer_rounding, spec.endowment));
    }
    std::copy(stage_moves.begin(), stage_moves.end(), out.investments.begin() + first);
  }
  out.winner = draw_winner(out.investments, draws.uniform);
  out.payoffs = round_payoffs(spec, out.investments, out.winner);
  return out;
}

inline TriadOutcome play_round(const ContestSpec& spec, std::span<const BehaviorPolicy> slot_policies, Engine& rng,
                               bool integer_rounding = false) {
  return play_round(spec, slot_policies, draw_triad(rng, spec.sequence.players()), integer_rounding);
}

// ---------------------------------------------------------------------------
// Parallel helpers

/// Worker cap from SEQCONTEST_THREADS, else the hardware concurrency.
inline unsigned thread_budget() {
  if (const char* env = std::getenv("SEQCONTEST_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  threads = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> workers;
  for (unsigned w = 0; w < threads; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  workers.clear();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Sessions

inline void validate_config(const SessionConfig& config) {
  config.spec.check();
  if (config.groups < 1) throw Error(ErrorCode::BadGroupComposition, "need at least one matching group");
  if (config.rounds < 1) throw Error(ErrorCode::BadGroupComposition, "need at least one round");
  if (config.policies.size() != static_cast<std::size_t>(config.spec.sequence.players())) {
    throw Error(ErrorCode::BadGroupComposition, "need exactly one policy per player slot");
  }
}

inline std::vector<RoundRecord> run_group(const SessionConfig& config, std::span<const BehaviorPolicy> resolved,
                                          int replication, int group) {
  const ContestSpec& spec = config.spec;
  const int n = spec.sequence.players();
  const int subjects_per_group = kContestsPerGroup * n;
  Engine rng(derive_stream_seed(config.seed, static_cast<std::uint64_t>(replication),
                                static_cast<std::uint64_t>(group)));

  std::vector<RoundRecord> records;
  records.reserve(static_cast<std::size_t>(config.rounds * subjects_per_group));
  // members[slot][k]: local id of the k-th subject holding role `slot`.
  std::vector<std::array<int, kContestsPerGroup>> members(static_cast<std::size_t>(n));
  for (int slot = 0; slot < n; ++slot)
    for (int k = 0; k < kContestsPerGroup; ++k) members[static_cast<std::size_t>(slot)][static_cast<std::size_t>(k)] = slot * kContestsPerGroup + k;

  for (int round = 1; round <= config.rounds; ++round) {
    auto matching = members;
    for (auto& role : matching) std::shuffle(role.begin(), role.end(), rng);
    for (int triad = 0; triad < kContestsPerGroup; ++triad) {
      const TriadOutcome outcome = play_round(spec, resolved, rng, config.integer_rounding);
      for (int slot = 0; slot < n; ++slot) {
        const std::size_t t = spec.sequence.stage_of(slot);
        RoundRecord r;
        r.group = group + 1;
        r.round = round;
        r.triad = triad + 1;
        r.subject = group * subjects_per_group + matching[static_cast<std::size_t>(slot)][static_cast<std::size_t>(triad)] + 1;
        r.stage = static_cast<int>(t) + 1;
        r.slot = slot - spec.sequence.first_player(t) + 1;
        r.observed.assign(outcome.investments.begin(), outcome.investments.begin() + spec.sequence.first_player(t));
        r.investment = outcome.investments[static_cast<std::size_t>(slot)];
        r.won = outcome.winner == static_cast<std::size_t>(slot);
        r.payoff = outcome.payoffs[static_cast<std::size_t>(slot)];
        records.push_back(std::move(r));
      }
    }
  }
  return records;
}

/// Groups run on independent streams and are stitched together in group
/// order, so the log does not depend on the thread count.
inline SessionLog run_session(const SessionConfig& config, int replication = 0, unsigned threads = thread_budget()) {
  validate_config(config);
  std::vector<BehaviorPolicy> resolved;
  for (std::size_t slot = 0; slot < config.policies.size(); ++slot)
    resolved.push_back(resolve_policy(config.policies[slot], config.spec,
                                      config.spec.sequence.stage_of(static_cast<int>(slot))));

  std::vector<std::vector<RoundRecord>> shards(static_cast<std::size_t>(config.groups));
  parallel_for(shards.size(), threads, [&](std::size_t g) {
    shards[g] = run_group(config, resolved, replication, static_cast<int>(g));
  });

  SessionLog log{config.spec, config.seed, replication, config.groups, config.rounds, {}};
  for (auto& shard : shards) log.records.insert(log.records.end(), shard.begin(), shard.end());
  return log;
}

/// Every (config, replication) pair, config-major. Replication k uses the
/// streams derived from (config.seed, k).
inline std::vector<SessionLog> run_batch(const std::vector<SessionConfig>& configs, int replications,
                                         unsigned threads = thread_budget()) {
  if (replications < 1) throw Error(ErrorCode::BadGroupComposition, "need at least one replication");
  for (const auto& c : configs) validate_config(c);
  std::vector<SessionLog> logs(configs.size() * static_cast<std::size_t>(replications));
  parallel_for(logs.size(), threads, [&](std::size_t i) {
    const auto rep = static_cast<int>(i % static_cast<std::size_t>(replications));
    logs[i] = run_session(configs[i / static_cast<std::size_t>(replications)], rep, 1);
  });
  return logs;
}

// ---------------------------------------------------------------------------
// Export / import

inline constexpr std::string_view kCsvHeader = "group,round,triad,subject,stage,slot,m1,m2,investment,won,payoff";

inline std::string to_csv(const SessionLog& log) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& r : log.records) {
    const auto m1 = observed_stage_mean(log.spec.sequence, r, 1);
    const auto m2 = observed_stage_mean(log.spec.sequence, r, 2);
    out += std::to_string(r.group) + ',' + std::to_string(r.round) + ',' + std::to_string(r.triad) + ',' +
           std::to_string(r.subject) + ',' + std::to_string(r.stage) + ',' + std::to_string(r.slot) + ',' +
           (m1 ? io::format_number(*m1) : "") + ',' + (m2 ? io::format_number(*m2) : "") + ',' +
           io::format_number(r.investment) + ',' + (r.won ? "1" : "0") + ',' + io::format_number(r.payoff) + '\n';
  }
  return out;
}

inline nlohmann::json to_json(const SessionLog& log) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : log.records) {
    records.push_back({{"group", r.group},
                       {"round", r.round},
                       {"triad", r.triad},
                       {"subject", r.subject},
                       {"stage", r.stage},
                       {"slot", r.slot},
                       {"observed", r.observed},
                       {"investment", r.investment},
                       {"won", r.won},
                       {"payoff", r.payoff}});
  }
  return {{"schema", 1},
          {"treatment", log.spec.sequence.stages()},
          {"prize", log.spec.prize},
          {"endowment", log.spec.endowment},
          {"jow", log.spec.joy_of_winning},
          {"seed", log.seed},
          {"replication", log.replication},
          {"groups", log.groups},
          {"rounds", log.rounds},
          {"records", std::move(records)}};
}

inline SessionLog log_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema").get<int>() != 1) throw Error(ErrorCode::SchemaMismatch, "unsupported log schema");
    SessionLog log;
    log.spec.sequence = MoveSequence::validate(j.at("treatment").get<std::vector<int>>());
    log.spec.prize = j.at("prize").get<double>();
    log.spec.endowment = j.at("endowment").get<double>();
    log.spec.joy_of_winning = j.at("jow").get<double>();
    log.seed = j.at("seed").get<std::uint64_t>();
    log.replication = j.at("replication").get<int>();
    log.groups = j.at("groups").get<int>();
    log.rounds = j.at("rounds").get<int>();
    for (const auto& jr : j.at("records")) {
      RoundRecord r;
      r.group = jr.at("group").get<int>();
      r.round = jr.at("round").get<int>();
      r.triad = jr.at("triad").get<int>();
      r.subject = jr.at("subject").get<int>();
      r.stage = jr.at("stage").get<int>();
      r.slot = jr.at("slot").get<int>();
      r.observed = jr.at("observed").get<std::vector<double>>();
      r.investment = jr.at("investment").get<double>();
      r.won = jr.at("won").get<bool>();
      r.payoff = jr.at("payoff").get<double>();
      log.records.push_back(std::move(r));
    }
    return log;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaMismatch, std::string("log JSON does not match the schema: ") + e.what());
  }
}

/// CSV logs do not carry the contest parameters; the treatment is rebuilt
/// from the stage/slot columns and prize/endowment default to the lab's.
inline SessionLog log_from_csv(const std::string& text) {
  std::stringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::EmptyLog, "empty CSV log");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw Error(ErrorCode::SchemaMismatch, "unexpected CSV header: " + line);

  SessionLog log;
  std::map<int, int> stage_width;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = io::split_csv_line(line);
    if (f.size() != 11) throw Error(ErrorCode::SchemaMismatch, "expected 11 columns: " + line);
    RoundRecord r;
    r.group = static_cast<int>(io::parse_integer(f[0]));
    r.round = static_cast<int>(io::parse_integer(f[1]));
    r.triad = static_cast<int>(io::parse_integer(f[2]));
    r.subject = static_cast<int>(io::parse_integer(f[3]));
    r.stage = static_cast<int>(io::parse_integer(f[4]));
    r.slot = static_cast<int>(io::parse_integer(f[5]));
    r.investment = io::parse_number(f[8]);
    r.won = io::parse_integer(f[9]) != 0;
    r.payoff = io::parse_number(f[10]);
    if (r.stage < 1 || r.slot < 1) throw Error(ErrorCode::SchemaMismatch, "stage and slot are 1-based");
    stage_width[r.stage] = std::max(stage_width[r.stage], r.slot);
    log.groups = std::max(log.groups, r.group);
    log.rounds = std::max(log.rounds, r.round);
    log.records.push_back(std::move(r));
  }
  if (log.records.empty()) throw Error(ErrorCode::EmptyLog, "CSV log has no records");
  std::vector<int> stages;
  for (int t = 1; t <= static_cast<int>(stage_width.size()); ++t) {
    if (!stage_width.count(t)) throw Error(ErrorCode::SchemaMismatch, "stage numbers are not contiguous");
    stages.push_back(stage_width[t]);
  }
  log.spec.sequence = MoveSequence::validate(stages);

  // Rebuild each record's observations from its contest's earlier stages.
  std::map<std::tuple<int, int, int>, std::vector<double>> profiles;
  const int n = log.spec.sequence.players();
  for (const auto& r : log.records) {
    auto& profile = profiles[{r.group, r.round, r.triad}];
    profile.resize(static_cast<std::size_t>(n), 0.0);
    profile[static_cast<std::size_t>(log.spec.sequence.first_player(static_cast<std::size_t>(r.stage - 1)) + r.slot - 1)] = r.investment;
  }
  for (auto& r : log.records) {
    const auto& profile = profiles[{r.group, r.round, r.triad}];
    r.observed.assign(profile.begin(), profile.begin() + log.spec.sequence.first_player(static_cast<std::size_t>(r.stage - 1)));
  }
  return log;
}

enum class LogFormat { Csv, Json };

inline void export_log(const SessionLog& log, LogFormat format, const std::filesystem::path& path) {
  io::write_file_atomic(path, format == LogFormat::Csv ? to_csv(log) : to_json(log).dump(1) + "\n");
}

inline SessionLog import_log(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  if (path.extension() == ".json") {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::SchemaMismatch, std::string("malformed JSON log: ") + e.what());
    }
    return log_from_json(j);
  }
  return log_from_csv(text);
}

}  // namespace seqcontest
