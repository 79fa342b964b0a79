#pragma once

// Analysis pipeline: pooled OLS with cluster-robust (sandwich) covariance,
// Wald tests on means, round trends, the Jonckheere-Terpstra trend test and
// per-treatment summaries of simulated or ingested logs.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "seqcontest/simulate.hpp"

namespace seqcontest::stats {

using ClusterId = std::int64_t;

struct ClusteredSample {
  std::vector<double> values;
  std::vector<ClusterId> clusters;

  void add(double value, ClusterId cluster) {
    values.push_back(value);
    clusters.push_back(cluster);
  }
  std::size_t cluster_count() const { return std::set<ClusterId>(clusters.begin(), clusters.end()).size(); }
};

struct OLSFit {
  Eigen::VectorXd coefficients;
  Eigen::MatrixXd covariance;  // cluster-robust
  Eigen::VectorXd residuals;
  double r_squared = 0.0;
  std::size_t observations = 0;
  std::size_t clusters = 0;

  double se(Eigen::Index k) const { return std::sqrt(std::max(0.0, covariance(k, k))); }
};

/// OLS with covariance G/(G-1) (N-1)/(N-K) (X'X)^-1 [sum_g X_g'u_g u_g'X_g] (X'X)^-1.
inline OLSFit cluster_ols(const Eigen::VectorXd& y, const Eigen::MatrixXd& design,
                          std::span<const ClusterId> clusters) {
  const Eigen::Index n = design.rows();
  const Eigen::Index k = design.cols();
  if (y.size() != n || static_cast<Eigen::Index>(clusters.size()) != n) {
    throw Error(ErrorCode::InvalidSpec, "y, design and clusters must have the same number of rows");
  }
  std::map<ClusterId, std::vector<Eigen::Index>> members;
  for (Eigen::Index i = 0; i < n; ++i) members[clusters[static_cast<std::size_t>(i)]].push_back(i);
  const auto g = static_cast<double>(members.size());
  if (members.size() < 2) throw Error(ErrorCode::TooFewClusters, "clustered inference needs at least two clusters");

  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (k == 0 || qr.rank() < k || n <= k) throw Error(ErrorCode::RankDeficientDesign, "design is not of full column rank");

  OLSFit fit;
  fit.coefficients = qr.solve(y);
  fit.residuals = y - design * fit.coefficients;
  // Residuals at rounding level mean an exact fit; zero them so the
  // covariance is exactly zero rather than noise.
  const double scale = std::max(1.0, y.size() > 0 ? y.cwiseAbs().maxCoeff() : 0.0);
  if (fit.residuals.size() > 0 && fit.residuals.cwiseAbs().maxCoeff() <= 1e-12 * scale) fit.residuals.setZero();
  fit.observations = static_cast<std::size_t>(n);
  fit.clusters = members.size();

  const Eigen::MatrixXd bread = (design.transpose() * design).inverse();
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
  for (const auto& [id, rows] : members) {
    Eigen::VectorXd score = Eigen::VectorXd::Zero(k);
    for (Eigen::Index i : rows) score += design.row(i).transpose() * fit.residuals(i);
    meat += score * score.transpose();
  }
  const double nd = static_cast<double>(n);
  const double factor = g / (g - 1.0) * (nd - 1.0) / (nd - static_cast<double>(k));
  Eigen::MatrixXd cov = factor * bread * meat * bread;
  fit.covariance = 0.5 * (cov + cov.transpose());

  const double ssr = fit.residuals.squaredNorm();
  const double tss = (y.array() - y.mean()).square().sum();
  if (tss > 0.0) fit.r_squared = 1.0 - ssr / tss;
  else fit.r_squared = ssr == 0.0 ? 1.0 : 0.0;
  return fit;
}

inline double chi2_1_upper_tail(double statistic) {
  if (std::isinf(statistic)) return 0.0;
  return std::erfc(std::sqrt(statistic / 2.0));
}

inline double normal_two_sided(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

struct WaldResult {
  double mean = 0.0;
  double se = 0.0;
  double statistic = 0.0;
  double p_value = 1.0;
  bool degenerate = false;  // zero clustered variance
};

/// Wald test of H0: mean = hypothesized with an intercept-only clustered
/// regression and a chi-square(1) reference. With zero variance the
/// statistic is 0 when the mean matches (to 1e-9 relative) and infinite
/// otherwise.
inline WaldResult wald_mean(const ClusteredSample& sample, double hypothesized) {
  // Intercept-only regression in closed form: the coefficient is the sample
  // mean and the cluster scores are within-cluster sums of deviations.
  const std::size_t n = sample.values.size();
  std::map<ClusterId, double> scores;
  double sum = 0.0;
  for (double v : sample.values) sum += v;
  const double mean = n > 0 ? sum / static_cast<double>(n) : 0.0;
  for (std::size_t i = 0; i < n; ++i) scores[sample.clusters[i]] += sample.values[i] - mean;
  const auto g = static_cast<double>(scores.size());
  if (scores.size() < 2) throw Error(ErrorCode::TooFewClusters, "clustered inference needs at least two clusters");
  double meat = 0.0;
  for (const auto& [id, u] : scores) meat += u * u;
  const double variance = g / (g - 1.0) * meat / (static_cast<double>(n) * static_cast<double>(n));

  WaldResult r;
  r.mean = mean;
  r.se = std::sqrt(variance);
  const double diff = r.mean - hypothesized;
  if (r.se == 0.0) {
    r.degenerate = true;
    const bool same = std::abs(diff) <= 1e-9 * std::max(1.0, std::abs(hypothesized));
    r.statistic = same ? 0.0 : std::numeric_limits<double>::infinity();
  } else {
    r.statistic = (diff / r.se) * (diff / r.se);
  }
  r.p_value = chi2_1_upper_tail(r.statistic);
  return r;
}

struct JtResult {
  double statistic = 0.0;
  double null_mean = 0.0;
  double null_variance = 0.0;  // tie-corrected
  double z = 0.0;
  double p_value = 1.0;        // two-sided, normal approximation
};

/// Groups are in hypothesized increasing order; the statistic counts pairs
/// (a in earlier group, b in later group) with a < b, ties counting 1/2.
inline JtResult jonckheere_terpstra(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 3) throw Error(ErrorCode::TooFewGroups, "the trend test needs at least three groups");
  for (const auto& g : groups)
    if (g.empty()) throw Error(ErrorCode::TooFewGroups, "every group needs at least one observation");

  JtResult r;
  for (std::size_t i = 0; i < groups.size(); ++i)
    for (std::size_t j = i + 1; j < groups.size(); ++j)
      for (double a : groups[i])
        for (double b : groups[j]) r.statistic += a < b ? 1.0 : (a == b ? 0.5 : 0.0);

  double n = 0.0;
  double sum_n2 = 0.0, sum_n_var = 0.0, sum_n3 = 0.0, sum_n_pairs = 0.0;
  std::map<double, double> ties;
  for (const auto& g : groups) {
    const double ni = static_cast<double>(g.size());
    n += ni;
    sum_n2 += ni * ni;
    sum_n_var += ni * (ni - 1.0) * (2.0 * ni + 5.0);
    sum_n3 += ni * (ni - 1.0) * (ni - 2.0);
    sum_n_pairs += ni * (ni - 1.0);
    for (double v : g) ties[v] += 1.0;
  }
  double sum_t_var = 0.0, sum_t3 = 0.0, sum_t_pairs = 0.0;
  for (const auto& [v, t] : ties) {
    sum_t_var += t * (t - 1.0) * (2.0 * t + 5.0);
    sum_t3 += t * (t - 1.0) * (t - 2.0);
    sum_t_pairs += t * (t - 1.0);
  }
  r.null_mean = (n * n - sum_n2) / 4.0;
  double var = (n * (n - 1.0) * (2.0 * n + 5.0) - sum_n_var - sum_t_var) / 72.0;
  if (n > 2.0) var += sum_n3 * sum_t3 / (36.0 * n * (n - 1.0) * (n - 2.0));
  if (n > 1.0) var += sum_n_pairs * sum_t_pairs / (8.0 * n * (n - 1.0));
  r.null_variance = std::max(0.0, var);

  const double diff = r.statistic - r.null_mean;
  if (r.null_variance > 1e-12) r.z = diff / std::sqrt(r.null_variance);
  r.p_value = r.null_variance > 1e-12 ? normal_two_sided(r.z) : 1.0;
  return r;
}

// ---------------------------------------------------------------------------
// Log-level analyses

/// Player position (1-based, precedence order) of a record.
inline int player_index(const MoveSequence& seq, const RoundRecord& r) {
  return seq.first_player(static_cast<std::size_t>(r.stage - 1)) + r.slot;
}

inline int last_round(const SessionLog& log) {
  int last = 0;
  for (const auto& r : log.records) last = std::max(last, r.round);
  return last;
}

/// Per-contest aggregate investment (sum over the contest's players).
struct TriadTotal {
  ClusterId cluster = 0;
  int round = 0;
  double total = 0.0;
};

/// Clusters are (log index, matching group) so replications never merge.
inline ClusterId cluster_of(std::size_t log_index, int group) {
  return static_cast<ClusterId>(log_index) * 1'000'000 + group;
}

inline std::vector<TriadTotal> triad_totals(std::span<const SessionLog> logs, std::optional<int> last_k) {
  std::map<std::tuple<std::size_t, int, int, int>, double> sums;
  for (std::size_t li = 0; li < logs.size(); ++li) {
    const int last = last_round(logs[li]);
    for (const auto& r : logs[li].records)
      if (!last_k || r.round > last - *last_k) sums[{li, r.group, r.round, r.triad}] += r.investment;
  }
  std::vector<TriadTotal> out;
  for (const auto& [key, total] : sums)
    out.push_back({cluster_of(std::get<0>(key), std::get<1>(key)), std::get<2>(key), total});
  return out;
}

enum class TrendTarget { Aggregate, Individual };

/// Pooled OLS of investment on the round index, clustered by matching group.
inline OLSFit trend_by_round(std::span<const SessionLog> logs, TrendTarget target = TrendTarget::Aggregate,
                             std::optional<int> stage = std::nullopt) {
  std::vector<double> y, round;
  std::vector<ClusterId> clusters;
  if (target == TrendTarget::Aggregate) {
    for (const auto& t : triad_totals(logs, std::nullopt)) {
      y.push_back(t.total);
      round.push_back(t.round);
      clusters.push_back(t.cluster);
    }
  } else {
    for (std::size_t li = 0; li < logs.size(); ++li)
      for (const auto& r : logs[li].records) {
        if (stage && r.stage != *stage) continue;
        y.push_back(r.investment);
        round.push_back(r.round);
        clusters.push_back(cluster_of(li, r.group));
      }
  }
  if (std::set<double>(round.begin(), round.end()).size() < 2) {
    throw Error(ErrorCode::RankDeficientDesign, "a round trend needs at least two distinct rounds");
  }
  const auto n = static_cast<Eigen::Index>(y.size());
  Eigen::MatrixXd design(n, 2);
  design.col(0).setOnes();
  design.col(1) = Eigen::Map<const Eigen::VectorXd>(round.data(), n);
  return cluster_ols(Eigen::Map<const Eigen::VectorXd>(y.data(), n), design, clusters);
}

inline OLSFit trend_by_round(const SessionLog& log, TrendTarget target = TrendTarget::Aggregate,
                             std::optional<int> stage = std::nullopt) {
  return trend_by_round(std::span<const SessionLog>(&log, 1), target, stage);
}

struct SummaryCell {
  std::string label;  // "x1", "x2", ..., "X"
  double mean = 0.0;
  double se = std::numeric_limits<double>::quiet_NaN();  // NaN with a single cluster
  ClusteredSample sample;
};

struct TreatmentSummary {
  MoveSequence sequence;
  std::vector<SummaryCell> players;  // one per player position
  SummaryCell aggregate;
  std::size_t observations = 0;      // individual records used
  std::size_t clusters = 0;
  int rounds = 0;                    // distinct rounds used
};

namespace detail {

inline void finish_cell(SummaryCell& cell) {
  const auto& v = cell.sample.values;
  double sum = 0.0;
  for (double x : v) sum += x;
  cell.mean = sum / static_cast<double>(v.size());
  if (cell.sample.cluster_count() >= 2) cell.se = wald_mean(cell.sample, cell.mean).se;
}

}  // namespace detail

/// Role and aggregate means with clustered standard errors. All logs must
/// share one treatment; `last_k` keeps each log's final k rounds.
inline TreatmentSummary treatment_summary(std::span<const SessionLog> logs, std::optional<int> last_k = std::nullopt) {
  if (logs.empty()) throw Error(ErrorCode::EmptyLog, "no logs to summarize");
  TreatmentSummary s;
  s.sequence = logs.front().spec.sequence;
  const int n = s.sequence.players();
  s.players.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) s.players[static_cast<std::size_t>(i)].label = "x" + std::to_string(i + 1);
  s.aggregate.label = "X";

  std::set<ClusterId> clusters;
  std::set<int> rounds;
  for (std::size_t li = 0; li < logs.size(); ++li) {
    if (!(logs[li].spec.sequence == s.sequence)) {
      throw Error(ErrorCode::SchemaMismatch, "logs of different treatments cannot be summarized together");
    }
    const int last = last_round(logs[li]);
    for (const auto& r : logs[li].records) {
      if (last_k && r.round <= last - *last_k) continue;
      const int idx = player_index(s.sequence, r);
      if (idx < 1 || idx > n) throw Error(ErrorCode::SchemaMismatch, "record role outside the treatment");
      s.players[static_cast<std::size_t>(idx - 1)].sample.add(r.investment, cluster_of(li, r.group));
      clusters.insert(cluster_of(li, r.group));
      rounds.insert(r.round);
      ++s.observations;
    }
  }
  if (s.observations == 0) throw Error(ErrorCode::EmptyLog, "no records in the selected rounds");
  for (const auto& t : triad_totals(logs, last_k)) s.aggregate.sample.add(t.total, t.cluster);
  for (auto& cell : s.players)
    if (!cell.sample.values.empty()) detail::finish_cell(cell);
  detail::finish_cell(s.aggregate);
  s.clusters = clusters.size();
  s.rounds = static_cast<int>(rounds.size());
  return s;
}

inline TreatmentSummary treatment_summary(const SessionLog& log, std::optional<int> last_k = std::nullopt) {
  return treatment_summary(std::span<const SessionLog>(&log, 1), last_k);
}

/// Matching-group means of contest aggregates, the unit of observation for
/// nonparametric comparisons.
inline std::vector<double> group_mean_aggregates(std::span<const SessionLog> logs, std::optional<int> last_k) {
  std::map<ClusterId, std::pair<double, int>> acc;
  for (const auto& t : triad_totals(logs, last_k)) {
    acc[t.cluster].first += t.total;
    acc[t.cluster].second += 1;
  }
  std::vector<double> out;
  for (const auto& [id, v] : acc) out.push_back(v.first / v.second);
  return out;
}

}  // namespace seqcontest::stats
