#pragma once

// Subgame-perfect equilibrium of sequential lottery contests via the
// inverse-best-response polynomial ladder, plus joy-of-winning calibration
// and a brute-force backward-induction oracle on a discrete grid.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "json.hpp"
#include "seqcontest/core.hpp"
#include "seqcontest/polynomial.hpp"

namespace seqcontest {

/// f_0, ..., f_T with f_T(X) = X and f_{t-1} = f_t - n_t f_t' X (1 - X).
struct RecursionLadder {
  MoveSequence sequence;
  std::vector<IntPolynomial> polys;  // polys[t] is f_t

  const IntPolynomial& f0() const { return polys.front(); }
};

inline RecursionLadder build_ladder(const MoveSequence& sequence) {
  const std::size_t stages = sequence.stage_count();
  if (stages == 0) throw Error(ErrorCode::EmptySequence, "cannot build a ladder for an empty sequence");
  // X (1 - X) = X - X^2
  const IntPolynomial x_one_minus_x(std::vector<BigInt>{0, 1, -1});

  RecursionLadder ladder{sequence, std::vector<IntPolynomial>(stages + 1)};
  ladder.polys[stages] = IntPolynomial::monomial(1);
  for (std::size_t t = stages; t >= 1; --t) {
    const IntPolynomial& ft = ladder.polys[t];
    ladder.polys[t - 1] = ft - BigInt(sequence.at(t - 1)) * (ft.derivative() * x_one_minus_x);
  }
  return ladder;
}

/// Largest root of f_0 in [0, 1]. Sign changes are bracketed on a uniform
/// grid and refined by bisection. X = 0 is returned only when no positive
/// root exists. Bisection stops once the bracket is narrower than
/// `tolerance` or cannot be split further in long double.
inline double largest_root(const IntPolynomial& f0, std::size_t grid_points = 10000, double tolerance = 0.0) {
  if (f0.degree() < 1) throw Error(ErrorCode::NoRootInUnitInterval, "constant polynomial");
  const auto f = [&](long double x) { return f0.evaluate(x); };
  const auto n = static_cast<long double>(grid_points);

  long double fb = f(1.0L);
  if (fb == 0.0L) return 1.0;
  for (std::size_t i = grid_points; i >= 1; --i) {
    long double b = static_cast<long double>(i) / n;
    long double a = static_cast<long double>(i - 1) / n;
    const long double fa = f(a);
    if (fa == 0.0L && i - 1 > 0) return static_cast<double>(a);
    if ((fa < 0.0L && fb > 0.0L) || (fa > 0.0L && fb < 0.0L)) {
      long double flo = fa;
      while (b - a > tolerance) {
        const long double mid = 0.5L * (a + b);
        if (mid <= a || mid >= b) break;
        const long double fm = f(mid);
        if (fm == 0.0L) return static_cast<double>(mid);
        if ((fm < 0.0L) == (flo < 0.0L)) {
          a = mid;
          flo = fm;
        } else {
          b = mid;
        }
      }
      return static_cast<double>(0.5L * (a + b));
    }
    fb = fa;
  }
  if (f(0.0L) == 0.0L) return 0.0;
  throw Error(ErrorCode::NoRootInUnitInterval, "f0 has no root in [0, 1]");
}

struct EquilibriumSolution {
  MoveSequence sequence;
  double prize = 0.0;
  double joy_of_winning = 0.0;
  double aggregate = 0.0;                    // unit prize
  std::vector<double> stage_investments;     // per player of each stage, unit prize
  double scaled_aggregate = 0.0;             // times effective prize
  std::vector<double> scaled_stage_investments;

  double effective_prize() const noexcept { return prize + joy_of_winning; }

  /// Scaled investment of every player in precedence order.
  std::vector<double> player_investments() const {
    std::vector<double> out;
    for (std::size_t t = 0; t < sequence.stage_count(); ++t)
      out.insert(out.end(), static_cast<std::size_t>(sequence.at(t)), scaled_stage_investments[t]);
    return out;
  }
};

inline EquilibriumSolution solve_spne(const ContestSpec& spec) {
  spec.check();
  const RecursionLadder ladder = build_ladder(spec.sequence);
  const double x_star = largest_root(ladder.f0());

  EquilibriumSolution sol;
  sol.sequence = spec.sequence;
  sol.prize = spec.prize;
  sol.joy_of_winning = spec.joy_of_winning;
  sol.aggregate = x_star;
  const double scale = spec.effective_prize();
  sol.scaled_aggregate = x_star * scale;
  for (std::size_t t = 1; t <= spec.sequence.stage_count(); ++t) {
    const long double diff = ladder.polys[t].evaluate(x_star) - ladder.polys[t - 1].evaluate(x_star);
    const double x = std::max(0.0, static_cast<double>(diff / spec.sequence.at(t - 1)));
    sol.stage_investments.push_back(x);
    sol.scaled_stage_investments.push_back(x * scale);
  }
  return sol;
}

inline nlohmann::json to_json(const EquilibriumSolution& sol) {
  return {
      {"schema", 1},
      {"sequence", sol.sequence.stages()},
      {"prize", sol.prize},
      {"jow", sol.joy_of_winning},
      {"effective_prize", sol.effective_prize()},
      {"aggregate_normalized", sol.aggregate},
      {"aggregate", sol.scaled_aggregate},
      {"stage_investments_normalized", sol.stage_investments},
      {"stage_investments", sol.scaled_stage_investments},
  };
}

struct JowCalibration {
  double joy_of_winning = 0.0;
  bool clamped = false;  // observed mean was below the risk-neutral prediction
};

/// Matches an observed simultaneous-contest mean to the symmetric
/// equilibrium (n - 1)(V + w) / n^2.
inline JowCalibration calibrate_jow(double observed_mean, int players, double prize) {
  if (!(observed_mean > 0.0)) throw Error(ErrorCode::NonPositiveMean, "observed mean must be positive");
  if (players < 2) throw Error(ErrorCode::InvalidPlayerCount, "calibration needs at least two players");
  const double n = players;
  const double w = n * n * observed_mean / (n - 1.0) - prize;
  if (w < 0.0) return {0.0, true};
  return {w, false};
}

/// Backward induction over the game discretized to multiples of
/// `grid_step` on [0, endowment]. Within a stage the simultaneous movers
/// play the smallest symmetric grid equilibrium; best-response ties go to
/// the smaller investment.
inline EquilibriumSolution oracle_grid_spne(const ContestSpec& spec, double grid_step) {
  spec.check();
  const int players = spec.sequence.players();
  if (!(grid_step > 0.0)) throw Error(ErrorCode::InvalidSpec, "grid step must be positive");
  const double steps_real = spec.endowment / grid_step;
  const auto steps = static_cast<std::int64_t>(std::llround(steps_real));
  if (std::abs(steps_real - static_cast<double>(steps)) > 1e-9 * std::max(1.0, steps_real)) {
    throw Error(ErrorCode::InvalidSpec, "grid step must divide the endowment");
  }
  if (players > 3 || steps + 1 > 481) {
    throw Error(ErrorCode::GridTooLarge, "oracle supports n <= 3 and at most 481 grid points per player");
  }

  const std::size_t stages = spec.sequence.stage_count();
  const double prize = spec.effective_prize();
  const auto m = static_cast<int>(steps);

  // later[S]: total grid units invested from the current stage onward given
  // prior total S; choice[t][S]: per-player equilibrium choice at stage t.
  std::vector<std::vector<int>> choice(stages);
  std::vector<int> later;  // for stage t + 1

  for (std::size_t t = stages; t-- > 0;) {
    const int movers = spec.sequence.at(t);
    const int max_prior = spec.sequence.first_player(t) * m;
    std::vector<int> current(static_cast<std::size_t>(max_prior) + 1);
    choice[t].assign(static_cast<std::size_t>(max_prior) + 1, 0);

    for (int prior = 0; prior <= max_prior; ++prior) {
      const auto payoff = [&](int x, int others) {
        const int before = prior + x + others;
        const int total = before + (later.empty() ? 0 : later[static_cast<std::size_t>(before)]);
        if (total == 0) return prize / players;
        return prize * x / total - x * grid_step;
      };
      const auto best_response = [&](int others) {
        int best = 0;
        double best_value = payoff(0, others);
        for (int x = 1; x <= m; ++x) {
          const double v = payoff(x, others);
          if (v > best_value) {
            best_value = v;
            best = x;
          }
        }
        return best;
      };

      int chosen = 0;
      if (movers == 1) {
        chosen = best_response(0);
      } else {
        int best_gap = std::numeric_limits<int>::max();
        for (int y = 0; y <= m; ++y) {
          const int gap = std::abs(best_response((movers - 1) * y) - y);
          if (gap < best_gap) {
            best_gap = gap;
            chosen = y;
            if (gap == 0) break;
          }
        }
      }
      choice[t][static_cast<std::size_t>(prior)] = chosen;
      const int after = prior + movers * chosen;
      current[static_cast<std::size_t>(prior)] =
          movers * chosen + (later.empty() ? 0 : later[static_cast<std::size_t>(after)]);
    }
    later = std::move(current);
  }

  EquilibriumSolution sol;
  sol.sequence = spec.sequence;
  sol.prize = spec.prize;
  sol.joy_of_winning = spec.joy_of_winning;
  int prior = 0;
  for (std::size_t t = 0; t < stages; ++t) {
    const int y = choice[t][static_cast<std::size_t>(prior)];
    prior += spec.sequence.at(t) * y;
    sol.scaled_stage_investments.push_back(y * grid_step);
    sol.stage_investments.push_back(y * grid_step / prize);
  }
  sol.scaled_aggregate = prior * grid_step;
  sol.aggregate = sol.scaled_aggregate / prize;
  return sol;
}

}  // namespace seqcontest
