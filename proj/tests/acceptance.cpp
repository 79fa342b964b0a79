// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "oracles.hpp"
#include "seqcontest/behavior.hpp"
#include "seqcontest/equilibrium.hpp"
#include "seqcontest/simulate.hpp"
#include "seqcontest/stats.hpp"

using namespace seqcontest;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [miss] " << what << ";";
    }
  }
  void note(const std::string& what) { detail << " " << what << ";"; }
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

ContestSpec make_spec(std::vector<int> stages, double prize = 240.0, double jow = 0.0) {
  ContestSpec s;
  s.sequence = MoveSequence::validate(stages);
  s.prize = prize;
  s.joy_of_winning = jow;
  return s;
}

std::vector<std::vector<int>> compositions(int n) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  std::function<void(int)> rec = [&](int left) {
    if (left == 0) {
      out.push_back(cur);
      return;
    }
    for (int k = 1; k <= left; ++k) {
      cur.push_back(k);
      rec(left - k);
      cur.pop_back();
    }
  };
  rec(n);
  return out;
}

const std::vector<std::vector<int>> kThreePlayer{{3}, {1, 2}, {2, 1}, {1, 1, 1}};

// Published risk-neutral predictions (players then aggregate).
const std::map<std::vector<int>, std::vector<double>> kTable1{
    {{3}, {53.33, 53.33, 53.33, 160.0}},
    {{1, 2}, {90.0, 45.0, 45.0, 180.0}},
    {{2, 1}, {67.5, 67.5, 45.0, 180.0}},
    {{1, 1, 1}, {86.18, 63.10, 40.01, 189.29}},
};

// Same cells as computed to two decimals from exact arithmetic.
const std::map<std::vector<int>, std::vector<double>> kTable1Exact{
    {{3}, {53.33, 53.33, 53.33, 160.0}},
    {{1, 2}, {90.0, 45.0, 45.0, 180.0}},
    {{2, 1}, {67.5, 67.5, 45.0, 180.0}},
    {{1, 1, 1}, {86.19, 63.09, 40.00, 189.28}},
};

// Published joy-of-winning adjusted predictions.
const std::map<std::vector<int>, std::vector<double>> kTable2{
    {{1, 2}, {134.90, 67.45, 67.45, 269.80}},
    {{2, 1}, {101.17, 101.17, 67.45, 269.80}},
    {{1, 1, 1}, {129.17, 94.58, 59.97, 283.72}},
};

std::vector<double> cells_of(const EquilibriumSolution& sol) {
  auto v = sol.player_investments();
  v.push_back(sol.scaled_aggregate);
  return v;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

void criterion1(Outcome& o) {
  for (const auto& seq : kThreePlayer) {
    const auto got = cells_of(solve_spne(make_spec(seq)));
    const auto& pub = kTable1.at(seq);
    const auto& exact = kTable1Exact.at(seq);
    for (std::size_t i = 0; i < got.size(); ++i) {
      const std::string cell = MoveSequence::validate(seq).to_string() + " cell " + std::to_string(i + 1) + " = " +
                               fmt(got[i]);
      o.check(std::abs(got[i] - pub[i]) <= 0.02, cell + " vs published " + fmt(pub[i], 2));
      o.check(std::abs(got[i] - exact[i]) <= 0.02, cell + " vs " + fmt(exact[i], 2));
    }
  }
  const auto s111 = solve_spne(make_spec({1, 1, 1}));
  o.note("(1,1,1) x = " + fmt(s111.scaled_stage_investments[0]) + "/" + fmt(s111.scaled_stage_investments[1]) + "/" +
         fmt(s111.scaled_stage_investments[2]) + ", X = " + fmt(s111.scaled_aggregate));
}

void criterion2(Outcome& o) {
  const auto cal = calibrate_jow(79.94, 3, 240.0);
  o.check(std::abs(cal.joy_of_winning - 119.73) <= 0.01 && !cal.clamped, "w = " + fmt(cal.joy_of_winning));
  o.note("w = " + fmt(cal.joy_of_winning));
  double worst = 0.0;
  for (const auto& [seq, pub] : kTable2) {
    const auto got = cells_of(solve_spne(make_spec(seq, 240.0, cal.joy_of_winning)));
    for (std::size_t i = 0; i < got.size(); ++i) {
      worst = std::max(worst, std::abs(got[i] - pub[i]));
      o.check(std::abs(got[i] - pub[i]) <= 0.05, MoveSequence::validate(seq).to_string() + " cell " +
                                                      std::to_string(i + 1) + " = " + fmt(got[i]) + " vs " +
                                                      fmt(pub[i], 2));
    }
  }
  o.note("max cell deviation " + fmt(worst));
}

/// Exhaustive check of a returned first-mover investment at step 0.01. For
/// (2,1) the grid maximizes one leader's payoff with the other leader held
/// at the returned value, so a symmetric solution must be its own best reply.
double grid_cross_check(const MoveSequence& seq, const ResponseModelSet& models, double w, double x) {
  if (seq.stages() == std::vector<int>{2, 1}) {
    const auto payoff = [&](double own) {
      const double r = eval_response(models.second, 0.5 * (own + x), std::nullopt, 240.0);
      const double total = own + x + r;
      return (240.0 + w) * (total > 0 ? own / total : 1.0 / 3.0) - own;
    };
    return oracle::grid_argmax(payoff, 0.0, 240.0, 0.01);
  }
  return oracle::grid_argmax(first_mover_objective(seq, models, 240.0, w), 0.0, 240.0, 0.01);
}

void criterion3(Outcome& o) {
  const std::vector<std::vector<int>> order{{1, 2}, {2, 1}, {1, 1, 1}};
  const std::vector<double> with_w{72.03, 83.11, 68.48};
  const std::vector<double> without_w{48.06, 55.45, 45.69};
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto seq = MoveSequence::validate(order[k]);
    const auto models = default_models(seq);
    for (const auto& [w, target] : {std::pair{119.73, with_w[k]}, std::pair{0.0, without_w[k]}}) {
      const double x = optimal_first_mover(seq, models, 240.0, w).investment;
      const double grid = grid_cross_check(seq, models, w, x);
      const std::string tag = seq.to_string() + " w=" + fmt(w, 2);
      o.note(tag + ": " + fmt(x) + " (published " + fmt(target, 2) + ", grid " + fmt(grid, 2) + ")");
      o.check(std::abs(x - target) <= 0.05, tag + " off the published value");
      o.check(std::abs(x - grid) <= 0.02, tag + " disagrees with the step-0.01 grid");
    }
  }
}

void criterion4(Outcome& o) {
  const double x3 = solve_spne(make_spec({3})).aggregate;
  const double x12 = solve_spne(make_spec({1, 2})).aggregate;
  const double x21 = solve_spne(make_spec({2, 1})).aggregate;
  const double x111 = solve_spne(make_spec({1, 1, 1})).aggregate;
  o.check(x3 < x12, "X(3) < X(1,2)");
  o.check(std::abs(x12 - x21) <= 1e-12, "X(1,2) = X(2,1)");
  o.check(x21 < x111, "X(2,1) < X(1,1,1)");
  o.note("|X(1,2) - X(2,1)| = " + std::to_string(std::abs(x12 - x21)));
  int sequences = 0;
  for (const auto& c : kThreePlayer) {
    if (c.size() < 2) continue;
    const auto sol = solve_spne(make_spec(c));
    ++sequences;
    for (std::size_t t = 1; t < c.size(); ++t)
      o.check(sol.stage_investments[t - 1] > sol.stage_investments[t],
              MoveSequence::validate(c).to_string() + " stage " + std::to_string(t + 1) + " not below stage " +
                  std::to_string(t));
  }
  o.note("stage ordering strict in " + std::to_string(sequences) + " sequential treatments");
  const double d = std::abs(solve_spne(make_spec({1, 1})).aggregate - solve_spne(make_spec({2})).aggregate);
  o.check(d <= 1e-12, "X(1,1) = X(2)");
}

void criterion5(Outcome& o) {
  for (const auto& seq : kThreePlayer) {
    const auto spec = make_spec(seq);
    const auto grid = oracle_grid_spne(spec, 1.0);
    const auto exact = solve_spne(spec);
    std::string row = spec.sequence.to_string() + " grid";
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const double diff = std::abs(grid.scaled_stage_investments[t] - exact.scaled_stage_investments[t]);
      row += " " + fmt(grid.scaled_stage_investments[t], 0) + "/" + fmt(exact.scaled_stage_investments[t], 2);
      o.check(diff <= 1.0, spec.sequence.to_string() + " stage " + std::to_string(t + 1) + " off by " + fmt(diff, 3));
    }
    o.note(row);
  }
}

void criterion6(Outcome& o) {
  const std::vector<double> prizes{1.0, 240.0, 359.73, 1000.0};
  double worst = 0.0;
  int count = 0;
  for (int n = 1; n <= 6; ++n)
    for (const auto& c : compositions(n)) {
      ++count;
      const auto base = solve_spne(make_spec(c, 1.0));
      for (double v : prizes) {
        // Effective prize v reached both as V alone and as V + w.
        for (const auto& spec : {make_spec(c, v), make_spec(c, v * 0.6, v * 0.4)}) {
          const auto sol = solve_spne(spec);
          auto got = sol.scaled_stage_investments;
          auto want = base.scaled_stage_investments;
          got.push_back(sol.scaled_aggregate);
          want.push_back(base.scaled_aggregate);
          for (std::size_t i = 0; i < got.size(); ++i) {
            const double expected = v * want[i];
            const double err = expected == 0.0 ? std::abs(got[i]) : std::abs(got[i] - expected) / std::abs(expected);
            worst = std::max(worst, err);
          }
        }
      }
    }
  o.check(worst < 1e-9, "relative error " + std::to_string(worst));
  o.note(std::to_string(count) + " sequences, max relative error " + std::to_string(worst));
}

SessionConfig spne_session(const std::vector<int>& seq, int groups, int rounds, std::uint64_t seed) {
  SessionConfig c;
  c.spec = make_spec(seq);
  c.groups = groups;
  c.rounds = rounds;
  c.policies.assign(static_cast<std::size_t>(c.spec.sequence.players()), SpnePolicy{});
  c.seed = seed;
  return c;
}

const std::vector<int> kLabGroups{9, 10, 9, 9};

void criterion7(Outcome& o) {
  const std::vector<std::size_t> expected_counts{2025, 2250, 2025, 2025};
  std::vector<SessionConfig> lab;
  for (std::size_t k = 0; k < kThreePlayer.size(); ++k)
    lab.push_back(spne_session(kThreePlayer[k], kLabGroups[k], kDefaultRounds, 20240501));
  const auto logs = run_batch(lab, 1);
  std::string counts;
  for (std::size_t k = 0; k < logs.size(); ++k) {
    counts += (k ? "/" : "") + std::to_string(logs[k].records.size());
    o.check(logs[k].records.size() == expected_counts[k], "record count " + std::to_string(logs[k].records.size()));
  }
  o.note("records " + counts);

  std::size_t triads = 0, violations = 0;
  for (const auto& log : logs) {
    std::map<std::tuple<int, int, int>, std::pair<double, std::vector<double>>> by_triad;
    for (const auto& r : log.records) {
      auto& [payoff, investments] = by_triad[{r.group, r.round, r.triad}];
      payoff += r.payoff;
      investments.push_back(r.investment);
    }
    for (const auto& [key, v] : by_triad) {
      ++triads;
      double invested = 0.0;
      for (double x : v.second) invested += x;
      const double target = 3.0 * log.spec.endowment + log.spec.prize - invested;
      if (v.first != target) ++violations;
    }
  }
  o.check(violations == 0, std::to_string(violations) + " triads break payoff conservation");
  o.note("conservation exact in " + std::to_string(triads - violations) + "/" + std::to_string(triads) + " triads");

  // 100,050 triad-rounds per treatment: 1,334 groups x 25 rounds x 3 contests.
  std::vector<SessionConfig> big;
  for (const auto& seq : kThreePlayer) big.push_back(spne_session(seq, 1334, kDefaultRounds, 99));
  const auto big_logs = run_batch(big, 1);
  double worst_sigma = 0.0;
  for (const auto& log : big_logs) {
    const auto p = win_probabilities(solve_spne(log.spec).player_investments());
    std::vector<double> wins(p.size(), 0.0);
    double n = 0.0;
    for (const auto& r : log.records) {
      const auto idx = static_cast<std::size_t>(stats::player_index(log.spec.sequence, r) - 1);
      if (idx == 0) n += 1.0;
      if (r.won) wins[idx] += 1.0;
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double sigma = std::sqrt(p[i] * (1 - p[i]) / n);
      const double dev = std::abs(wins[i] / n - p[i]) / sigma;
      worst_sigma = std::max(worst_sigma, dev);
      o.check(dev <= 3.0, log.spec.sequence.to_string() + " player " + std::to_string(i + 1) + " off by " +
                              fmt(dev, 2) + " sigma");
    }
  }
  o.note("win rates over 100050 triad-rounds per treatment, worst " + fmt(worst_sigma, 2) + " sigma");
}

void criterion8(Outcome& o) {
  Eigen::VectorXd y{{1.0, 2.0, 2.0, 5.0}};
  Eigen::MatrixXd design{{1.0, 0.0}, {1.0, 1.0}, {1.0, 2.0}, {1.0, 3.0}};
  const std::vector<stats::ClusterId> clusters{1, 1, 2, 2};
  const auto fit = stats::cluster_ols(y, design, clusters);
  const double coef_err = std::max(std::abs(fit.coefficients(0) - 0.7), std::abs(fit.coefficients(1) - 1.2));
  const double se_err =
      std::max(std::abs(fit.se(0) - 0.6123724356957945), std::abs(fit.se(1) - 0.2449489742783178));
  o.check(coef_err <= 1e-10, "fixture coefficients off by " + std::to_string(coef_err));
  o.check(se_err <= 1e-10, "fixture SEs off by " + std::to_string(se_err));
  o.note("OLS fixture max errors " + std::to_string(coef_err) + ", " + std::to_string(se_err));

  // JT: every group-size layout with 3 or 4 groups and N <= 8, each with a
  // tie-free and a tied sample; statistic, null mean and null variance
  // against the exact permutation distribution.
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> small(0, 3);
  std::uniform_real_distribution<double> real(0.0, 1.0);
  int samples = 0;
  double worst = 0.0;
  for (int total = 3; total <= 8; ++total)
    for (const auto& sizes : compositions(total)) {
      if (sizes.size() < 3 || sizes.size() > 4) continue;
      for (int tied = 0; tied < 2; ++tied) {
        std::vector<std::vector<double>> groups;
        for (int m : sizes) {
          groups.emplace_back();
          for (int i = 0; i < m; ++i) groups.back().push_back(tied ? small(rng) : real(rng));
        }
        const auto r = stats::jonckheere_terpstra(groups);
        const auto exact = oracle::jt_exact(groups);
        const double err = std::max({std::abs(r.statistic - oracle::jt_pair_count(groups)),
                                     std::abs(r.null_mean - exact.mean), std::abs(r.null_variance - exact.variance)});
        worst = std::max(worst, err);
        ++samples;
      }
    }
  o.check(worst <= 1e-9, "JT deviates from enumeration by " + std::to_string(worst));
  const auto ordered = oracle::jt_exact({{1, 2}, {3, 4}, {5, 6}});
  o.check(std::abs(ordered.upper_tail - 1.0 / 90.0) < 1e-15, "exact p of the ordered fixture");
  o.check(stats::jonckheere_terpstra({{1, 2}, {3, 4}, {5, 6}}).statistic == 12.0, "ordered fixture J = 12");
  o.note("JT checked on " + std::to_string(samples) + " samples, max deviation " + std::to_string(worst));

  std::vector<SessionConfig> lab;
  for (std::size_t k = 0; k < kThreePlayer.size(); ++k)
    lab.push_back(spne_session(kThreePlayer[k], kLabGroups[k], kDefaultRounds, 5));
  const auto logs = run_batch(lab, 1);
  double worst_mean = 0.0, worst_se = 0.0;
  for (const auto& log : logs) {
    const auto s = stats::treatment_summary(log, 5);
    const auto& pub = kTable1Exact.at(log.spec.sequence.stages());
    for (std::size_t i = 0; i <= s.players.size(); ++i) {
      const auto& cell = i < s.players.size() ? s.players[i] : s.aggregate;
      worst_mean = std::max(worst_mean, std::abs(cell.mean - pub[i]));
      worst_se = std::max(worst_se, std::abs(cell.se));
    }
  }
  o.check(worst_mean <= 0.02, "summary means off by " + fmt(worst_mean));
  o.check(worst_se == 0.0, "summary SE " + std::to_string(worst_se));
  o.note("SPNE-log summaries: max mean deviation " + fmt(worst_mean) + ", max SE " + std::to_string(worst_se));
}

void criterion9(Outcome& o) {
  // Coverage of +-2 clustered SEs for the response intercept when data come
  // from the fitted (1,2) response model: 1,200 observations in 10 clusters.
  const auto model = response_preset("r2_1_2");
  constexpr int replications = 2000;
  constexpr int clusters = 10;
  constexpr int per_cluster = 120;
  constexpr double noise_sd = 40.0;
  std::mt19937_64 rng(20240501);
  std::uniform_real_distribution<double> leader(0.0, 240.0);
  std::normal_distribution<double> noise(0.0, noise_sd);
  const int n = clusters * per_cluster;
  Eigen::VectorXd y(n);
  Eigen::MatrixXd design(n, 3);
  std::vector<stats::ClusterId> ids(static_cast<std::size_t>(n));
  int covered = 0;
  for (int rep = 0; rep < replications; ++rep) {
    for (int i = 0; i < n; ++i) {
      const double m1 = leader(rng);
      design.row(i) << 1.0, m1, m1 * m1;
      y(i) = model.mean(m1) + noise(rng);
      ids[static_cast<std::size_t>(i)] = i / per_cluster;
    }
    const auto fit = stats::cluster_ols(y, design, ids);
    if (std::abs(fit.coefficients(0) - model.beta0) <= 2.0 * fit.se(0)) ++covered;
  }
  const double coverage = static_cast<double>(covered) / replications;
  o.check(coverage >= 0.95, "coverage " + fmt(coverage, 4) + " below 0.95");
  o.note("intercept coverage " + fmt(coverage, 4) + " over " + std::to_string(replications) + " replications");
  o.note("human-subject observations are out of scope and not checked");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::pair<void (*)(Outcome&), double>>> criteria{
      {"equilibrium table, risk neutral", {criterion1, 1.0}},
      {"joy-of-winning calibration and table", {criterion2, 1.0}},
      {"preemptive first movers", {criterion3, 5.0}},
      {"prediction orderings", {criterion4, 0.0}},
      {"grid oracle agreement", {criterion5, 60.0}},
      {"prize homogeneity", {criterion6, 0.0}},
      {"simulator integrity", {criterion7, 120.0}},
      {"statistics oracles", {criterion8, 0.0}},
      {"Monte Carlo coverage", {criterion9, 0.0}},
  };
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const auto& [name, spec] = criteria[k];
    const auto [fn, budget] = spec;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      fn(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " exception: " << e.what() << ";";
    }
    const double elapsed = seconds_since(t0);
    if (budget > 0.0 && elapsed >= budget) {
      o.pass = false;
      o.detail << " [miss] runtime " << fmt(elapsed, 2) << " s exceeds " << fmt(budget, 0) << " s;";
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k + 1 << " (" << name << ", " << fmt(elapsed, 2)
              << " s):" << o.detail.str() << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
