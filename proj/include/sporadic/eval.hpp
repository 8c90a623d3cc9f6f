#pragma once

// Column matching up to permutation and sign, angular accuracy, false recovery
// accounting and support/sign accuracy.

#include "sporadic/intersect.hpp"
#include "sporadic/oracle.hpp"

namespace sporadic {

/// Minimum-cost assignment of every row of an n×m cost matrix (n <= m) to a
/// distinct column. Returns the column of each row.
inline std::vector<Index> hungarian(const Matrix& cost) {
  const Index n = cost.rows();
  const Index m = cost.cols();
  if (n > m) throw DimensionError("hungarian expects rows <= cols");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1)), v(static_cast<std::size_t>(m + 1));
  std::vector<Index> p(static_cast<std::size_t>(m + 1), 0), way(static_cast<std::size_t>(m + 1), 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(m + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= m; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        if (used[uj]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[uj];
        if (cur < minv[uj]) {
          minv[uj] = cur;
          way[uj] = j0;
        }
        if (minv[uj] < delta) {
          delta = minv[uj];
          j1 = j;
        }
      }
      for (Index j = 0; j <= m; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        if (used[uj]) {
          u[static_cast<std::size_t>(p[uj])] += delta;
          v[uj] -= delta;
        } else {
          minv[uj] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> assign(static_cast<std::size_t>(n), -1);
  for (Index j = 1; j <= m; ++j)
    if (p[static_cast<std::size_t>(j)] != 0) assign[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return assign;
}

enum class MatchMode { exact, greedy };

struct Matching {
  std::vector<Index> pi;         ///< estimate column matched to truth column k, or -1
  std::vector<int> theta;        ///< sign per matched k (0 when unmatched)
  std::vector<double> error;     ///< ||d_k - θ_k d̂_{π(k)}||, raw estimate (NaN when unmatched)
  std::vector<double> angular;   ///< |<d_k, d̂_{π(k)}/||d̂||>| (NaN when unmatched)
  std::vector<Index> unmatched;  ///< truth columns without a partner
  std::vector<Index> surplus;    ///< present estimate columns without a partner
  double total_cost = 0;         ///< Σ of squared sign-optimal distances over matched pairs

  Index matched_count() const {
    return static_cast<Index>(std::count_if(pi.begin(), pi.end(), [](Index j) { return j >= 0; }));
  }
};

/// Pairs truth columns with present estimate columns, minimizing the total
/// squared sign-optimal distance.
inline Matching match_columns(const Matrix& D, const DictionaryEstimate& est,
                              MatchMode mode = MatchMode::exact) {
  if (est.size() > 0 && est.dim() != D.rows()) throw DimensionError("estimate has the wrong dimension");
  const Index K = D.cols();
  std::vector<Index> live;
  for (Index j = 0; j < est.size(); ++j)
    if (est.has(j)) live.push_back(j);
  const auto L = static_cast<Index>(live.size());

  Matching m;
  m.pi.assign(static_cast<std::size_t>(K), -1);
  m.theta.assign(static_cast<std::size_t>(K), 0);
  m.error.assign(static_cast<std::size_t>(K), std::numeric_limits<double>::quiet_NaN());
  m.angular.assign(static_cast<std::size_t>(K), std::numeric_limits<double>::quiet_NaN());

  const Matrix E = est.columns(Eigen::all, live);
  const Matrix inner = D.transpose() * E;  // K×L
  const Vector dn = D.colwise().squaredNorm().transpose();
  const Vector en = E.colwise().squaredNorm().transpose();
  Matrix cost(K, L);
  for (Index j = 0; j < L; ++j)
    for (Index k = 0; k < K; ++k)
      cost(k, j) = std::max(0.0, dn(k) + en(j) - 2.0 * std::abs(inner(k, j)));

  std::vector<Index> pair_of(static_cast<std::size_t>(K), -1);  // into live
  if (K > 0 && L > 0) {
    if (mode == MatchMode::exact) {
      if (K <= L) {
        pair_of = hungarian(cost);
      } else {
        const auto back = hungarian(cost.transpose());
        for (Index j = 0; j < L; ++j) pair_of[static_cast<std::size_t>(back[static_cast<std::size_t>(j)])] = j;
      }
    } else {
      std::vector<std::pair<Index, Index>> pairs;
      for (Index k = 0; k < K; ++k)
        for (Index j = 0; j < L; ++j) pairs.emplace_back(k, j);
      std::stable_sort(pairs.begin(), pairs.end(), [&](const auto& a, const auto& b) {
        return cost(a.first, a.second) < cost(b.first, b.second);
      });
      std::vector<char> taken(static_cast<std::size_t>(L), 0);
      for (auto [k, j] : pairs)
        if (pair_of[static_cast<std::size_t>(k)] < 0 && !taken[static_cast<std::size_t>(j)]) {
          pair_of[static_cast<std::size_t>(k)] = j;
          taken[static_cast<std::size_t>(j)] = 1;
        }
    }
  }

  std::vector<char> used(static_cast<std::size_t>(L), 0);
  for (Index k = 0; k < K; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    const Index j = pair_of[uk];
    if (j < 0) {
      m.unmatched.push_back(k);
      continue;
    }
    used[static_cast<std::size_t>(j)] = 1;
    const int t = inner(k, j) < 0 ? -1 : 1;
    m.pi[uk] = live[static_cast<std::size_t>(j)];
    m.theta[uk] = t;
    m.error[uk] = (D.col(k) - t * E.col(j)).norm();
    const double n = std::sqrt(en(j));
    m.angular[uk] = n > 0 ? std::abs(inner(k, j)) / (n * std::sqrt(dn(k))) : 0.0;
    m.total_cost += cost(k, j);
  }
  for (Index j = 0; j < L; ++j)
    if (!used[static_cast<std::size_t>(j)]) m.surplus.push_back(live[static_cast<std::size_t>(j)]);
  return m;
}

inline Matching match_columns(const Dictionary& D, const DictionaryEstimate& est,
                              MatchMode mode = MatchMode::exact) {
  return match_columns(D.matrix(), est, mode);
}

/// Mean |<d_k, d̂_{π(k)}>| over matched pairs, estimates normalized.
inline double angular_accuracy(const Matching& m) {
  double sum = 0;
  Index n = 0;
  for (std::size_t k = 0; k < m.pi.size(); ++k)
    if (m.pi[k] >= 0) {
      sum += m.angular[k];
      ++n;
    }
  if (n == 0) throw ConfigError("angular accuracy needs at least one matched pair");
  return sum / static_cast<double>(n);
}

/// Mean raw L2 column error over matched pairs whose angular value is at least
/// `min_angular` (pairs below it are treated as false recoveries and skipped).
inline double mean_column_error(const Matching& m, double min_angular = 0.0) {
  double sum = 0;
  Index n = 0;
  for (std::size_t k = 0; k < m.pi.size(); ++k)
    if (m.pi[k] >= 0 && m.angular[k] >= min_angular) {
      sum += m.error[k];
      ++n;
    }
  return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// False recovery
// ---------------------------------------------------------------------------

enum class BlockTruth { none, unique, multiple };

struct RecoveryLedger {
  std::vector<BlockTruth> truth;
  std::vector<Index> element;   ///< the shared element for unique blocks, else -1
  std::vector<bool> returned;   ///< algorithm returned a vector

  Index blocks() const { return static_cast<Index>(truth.size()); }

  void add(BlockTruth t, Index element_k, bool got) {
    truth.push_back(t);
    element.push_back(element_k);
    returned.push_back(got);
  }

  /// Blocks with no shared element that returned a vector, plus blocks with a
  /// unique shared element that returned none. Blocks sharing two or more
  /// elements are counted in the total but never as false.
  Index false_recoveries() const {
    Index f = 0;
    for (std::size_t b = 0; b < truth.size(); ++b) {
      if (truth[b] == BlockTruth::none && returned[b]) ++f;
      if (truth[b] == BlockTruth::unique && !returned[b]) ++f;
    }
    return f;
  }

  /// Pairs the support-level truth with the algorithm's per-block outcomes.
  static RecoveryLedger from(const CoverReport& cover, const std::vector<BlockOutcome>& outcomes) {
    if (cover.block_intersection.size() != outcomes.size())
      throw DimensionError("cover report and block outcomes disagree on block count");
    RecoveryLedger l;
    for (std::size_t b = 0; b < outcomes.size(); ++b) {
      const auto& inter = cover.block_intersection[b];
      const auto t = inter.empty() ? BlockTruth::none
                     : inter.size() == 1 ? BlockTruth::unique
                                         : BlockTruth::multiple;
      l.add(t, t == BlockTruth::unique ? inter[0] : -1, outcomes[b].returned);
    }
    return l;
  }
};

inline double false_recovery_rate(const RecoveryLedger& l) {
  if (l.blocks() == 0) throw ConfigError("false recovery rate of an empty ledger");
  return static_cast<double>(l.false_recoveries()) / static_cast<double>(l.blocks());
}

// ---------------------------------------------------------------------------
// Support and sign accuracy
// ---------------------------------------------------------------------------

struct SupportSignReport {
  double precision = 1;       ///< aggregate |Ω̃ ∩ Ω| / |Ω̃|
  double recall = 0;          ///< aggregate |Ω̃ ∩ Ω| / |Ω|
  double sign_rate = 1;       ///< agreement over true-positive entries
  double exact_fraction = 0;  ///< samples with Ω̃_i = Ω_i
  bool precision_undefined = false;  ///< no estimated entries at all; precision reported as 1
  Index true_positives = 0;
  Index estimated_entries = 0;
  Index true_entries = 0;
  Index sign_errors = 0;
  std::vector<double> sample_precision;  ///< 1 for empty Ω̃_i
  std::vector<double> sample_recall;
};

/// `est` and `signs` must use ground-truth column labels (see relabel()).
/// `signs[k]` is aligned with est.members[k]; an empty `signs` skips sign scoring.
inline SupportSignReport support_sign_metrics(const CoefficientMatrix& truth,
                                              const SupportEstimate& est,
                                              const std::vector<std::vector<int>>& signs = {}) {
  if (est.K != truth.K()) throw DimensionError("support estimate and truth disagree on K");
  SupportSignReport r;
  Index exact = 0;
  for (std::size_t row = 0; row < est.samples.size(); ++row) {
    const Index i = est.samples[row];
    if (i < 0 || i >= truth.N()) throw DimensionError("support estimate refers to a missing sample");
    const auto& om = est.omega[row];
    const auto& tr = truth.support(i);
    std::vector<Index> both;
    std::set_intersection(om.begin(), om.end(), tr.begin(), tr.end(), std::back_inserter(both));
    const auto tp = static_cast<Index>(both.size());
    r.true_positives += tp;
    r.estimated_entries += static_cast<Index>(om.size());
    r.true_entries += static_cast<Index>(tr.size());
    r.sample_precision.push_back(om.empty() ? 1.0 : static_cast<double>(tp) / static_cast<double>(om.size()));
    r.sample_recall.push_back(static_cast<double>(tp) / static_cast<double>(tr.size()));
    if (om == tr) ++exact;
  }
  if (r.estimated_entries == 0) {
    r.precision = 1.0;
    r.precision_undefined = true;
  } else {
    r.precision = static_cast<double>(r.true_positives) / static_cast<double>(r.estimated_entries);
  }
  r.recall = r.true_entries ? static_cast<double>(r.true_positives) / static_cast<double>(r.true_entries) : 0.0;
  r.exact_fraction = est.samples.empty() ? 0.0 : static_cast<double>(exact) / static_cast<double>(est.samples.size());

  if (!signs.empty()) {
    if (static_cast<Index>(signs.size()) != est.K) throw DimensionError("one sign list per column is required");
    Index scored = 0;
    for (Index k = 0; k < est.K; ++k) {
      const auto& mem = est.members[static_cast<std::size_t>(k)];
      const auto& sg = signs[static_cast<std::size_t>(k)];
      if (sg.empty()) continue;
      if (sg.size() != mem.size()) throw DimensionError("sign list does not match Ã_k");
      for (std::size_t t = 0; t < mem.size(); ++t) {
        const int x = truth.value(mem[t], k);
        if (x == 0) continue;
        ++scored;
        if (x != sg[t]) ++r.sign_errors;
      }
    }
    r.sign_rate = scored ? 1.0 - static_cast<double>(r.sign_errors) / static_cast<double>(scored) : 1.0;
  }
  return r;
}

/// Rewrites estimate-labelled supports and signs into ground-truth labels using a
/// matching; estimate columns without a partner are dropped.
inline std::pair<SupportEstimate, std::vector<std::vector<int>>> relabel(
    const SupportEstimate& est, const std::vector<std::vector<int>>& signs, const Matching& m) {
  const auto K = static_cast<Index>(m.pi.size());
  std::vector<Index> to_truth(static_cast<std::size_t>(est.K), -1);
  for (Index k = 0; k < K; ++k) {
    const Index j = m.pi[static_cast<std::size_t>(k)];
    if (j >= 0 && j < est.K) to_truth[static_cast<std::size_t>(j)] = k;
  }
  std::vector<std::vector<Index>> omega;
  for (const auto& om : est.omega) {
    std::vector<Index> o;
    for (Index j : om)
      if (to_truth[static_cast<std::size_t>(j)] >= 0) o.push_back(to_truth[static_cast<std::size_t>(j)]);
    omega.push_back(std::move(o));
  }
  auto out = SupportEstimate::from_omega(K, est.samples, std::move(omega));
  std::vector<std::vector<int>> sg;
  if (!signs.empty()) {
    sg.resize(static_cast<std::size_t>(K));
    for (Index j = 0; j < est.K; ++j) {
      const Index k = to_truth[static_cast<std::size_t>(j)];
      if (k < 0 || signs[static_cast<std::size_t>(j)].empty()) continue;
      // members are sorted by sample index in both labelings, so order is kept.
      const int t = m.theta[static_cast<std::size_t>(k)];
      for (int v : signs[static_cast<std::size_t>(j)]) sg[static_cast<std::size_t>(k)].push_back(t * v);
    }
  }
  return {std::move(out), std::move(sg)};
}

}  // namespace sporadic
