#pragma once

// Contest primitives: move sequences, the lottery success function,
// winner realization and per-round payoffs.

#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "seqcontest/error.hpp"

namespace seqcontest {

/// Stage structure (n_1, ..., n_T): n_t players invest simultaneously at
/// stage t after observing every investment from earlier stages.
class MoveSequence {
 public:
  MoveSequence() = default;

  static MoveSequence validate(std::span<const int> stages) {
    if (stages.empty()) throw Error(ErrorCode::EmptySequence, "a move sequence needs at least one stage");
    for (int n : stages) {
      if (n < 1) {
        throw Error(ErrorCode::NonPositiveStageCount,
                    "stage count " + std::to_string(n) + " is not positive");
      }
    }
    MoveSequence seq;
    seq.stages_.assign(stages.begin(), stages.end());
    return seq;
  }

  static MoveSequence validate(std::initializer_list<int> stages) {
    return validate(std::span<const int>(stages.begin(), stages.size()));
  }

  /// Parses "1,2" style text.
  static MoveSequence parse(const std::string& text) {
    std::vector<int> stages;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
      std::size_t used = 0;
      int value = 0;
      try {
        value = std::stoi(item, &used);
      } catch (const std::exception&) {
        throw Error(ErrorCode::InvalidSpec, "cannot parse stage count '" + item + "'");
      }
      while (used < item.size() && item[used] == ' ') ++used;
      if (used != item.size()) throw Error(ErrorCode::InvalidSpec, "cannot parse stage count '" + item + "'");
      stages.push_back(value);
    }
    return validate(stages);
  }

  std::size_t stage_count() const noexcept { return stages_.size(); }
  int players() const noexcept { return std::accumulate(stages_.begin(), stages_.end(), 0); }
  int at(std::size_t stage) const { return stages_.at(stage); }
  const std::vector<int>& stages() const noexcept { return stages_; }

  /// Index of the first player (in precedence order) acting at `stage`.
  int first_player(std::size_t stage) const {
    return std::accumulate(stages_.begin(), stages_.begin() + static_cast<std::ptrdiff_t>(stage), 0);
  }

  /// Zero-based stage of a zero-based player index.
  std::size_t stage_of(int player) const {
    int seen = 0;
    for (std::size_t t = 0; t < stages_.size(); ++t) {
      seen += stages_[t];
      if (player < seen) return t;
    }
    throw Error(ErrorCode::InvalidSpec, "player index out of range");
  }

  std::string to_string() const {
    std::string out = "(";
    for (std::size_t t = 0; t < stages_.size(); ++t) {
      if (t) out += ",";
      out += std::to_string(stages_[t]);
    }
    return out + ")";
  }

  friend bool operator==(const MoveSequence&, const MoveSequence&) = default;
  friend auto operator<=>(const MoveSequence& a, const MoveSequence& b) {
    if (a.stages_.size() != b.stages_.size()) return a.stages_.size() <=> b.stages_.size();
    return a.stages_ <=> b.stages_;
  }

 private:
  std::vector<int> stages_;
};

inline MoveSequence validate_sequence(std::span<const int> stages) { return MoveSequence::validate(stages); }

/// Prize, endowment and joy of winning (a preference term: it scales
/// equilibrium play but is never paid out).
struct ContestSpec {
  MoveSequence sequence;
  double prize = 240.0;
  double endowment = 240.0;
  double joy_of_winning = 0.0;

  double effective_prize() const noexcept { return prize + joy_of_winning; }

  void check() const {
    if (sequence.stage_count() == 0) throw Error(ErrorCode::EmptySequence, "contest has no move sequence");
    if (!(prize > 0.0)) throw Error(ErrorCode::InvalidSpec, "prize must be positive");
    if (!(endowment >= 0.0)) throw Error(ErrorCode::InvalidSpec, "endowment must be nonnegative");
    if (!(joy_of_winning >= 0.0)) throw Error(ErrorCode::InvalidSpec, "joy of winning must be nonnegative");
  }
};

/// Investments ordered by player index; player i weakly precedes j for i < j.
using InvestmentProfile = std::vector<double>;

inline std::vector<double> win_probabilities(std::span<const double> profile) {
  double total = 0.0;
  for (double x : profile) {
    if (!(x >= 0.0)) throw Error(ErrorCode::NegativeInvestment, "investments must be nonnegative");
    total += x;
  }
  std::vector<double> p(profile.size());
  if (profile.empty()) return p;
  if (total > 0.0) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = profile[i] / total;
  } else {
    for (double& v : p) v = 1.0 / static_cast<double>(p.size());
  }
  return p;
}

/// Player i wins iff the draw lands in [sum_{j<i} p_j, sum_{j<=i} p_j).
inline std::size_t draw_winner(std::span<const double> profile, double uniform_draw) {
  const auto p = win_probabilities(profile);
  if (p.empty()) throw Error(ErrorCode::InvalidSpec, "empty profile");
  if (!(uniform_draw >= 0.0 && uniform_draw < 1.0)) {
    throw Error(ErrorCode::InputOutOfRange, "uniform draw must lie in [0, 1)");
  }
  double upper = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) last_positive = i;
    upper += p[i];
    if (p[i] > 0.0 && uniform_draw < upper) return i;
  }
  // Cumulative rounding can leave the top interval a hair short of 1.
  return last_positive;
}

inline std::vector<double> round_payoffs(const ContestSpec& spec, std::span<const double> profile,
                                         std::size_t winner) {
  if (winner >= profile.size()) throw Error(ErrorCode::InvalidWinner, "winner index out of range");
  std::vector<double> payoff(profile.size());
  for (std::size_t i = 0; i < profile.size(); ++i) {
    const double x = profile[i];
    if (!(x >= 0.0)) throw Error(ErrorCode::NegativeInvestment, "investments must be nonnegative");
    if (x > spec.endowment) throw Error(ErrorCode::InvestmentExceedsEndowment, "investment above endowment");
    payoff[i] = spec.endowment - x + (i == winner ? spec.prize : 0.0);
  }
  return payoff;
}

}  // namespace seqcontest
