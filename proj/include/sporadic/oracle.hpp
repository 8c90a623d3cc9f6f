#pragma once

// Oracle refinement (support detection by projection thresholding, then one
// projected covariance eigenvector per column) and oracle averaging.

#include "sporadic/spectral.hpp"

namespace sporadic {

/// Estimated supports for a set of samples. Column indices refer to the
/// dictionary estimate the supports were computed from.
struct SupportEstimate {
  std::vector<Index> samples;                ///< sample index in Y of each row of `omega`
  std::vector<std::vector<Index>> omega;     ///< Ω̃ per listed sample, sorted
  std::vector<std::vector<Index>> members;   ///< Ã_k as sample indices in Y, ascending
  Index K = 0;

  Index count(Index k) const { return static_cast<Index>(members[static_cast<std::size_t>(k)].size()); }

  /// Builds Ã_k as the transpose of Ω̃.
  static SupportEstimate from_omega(Index K, std::vector<Index> samples,
                                    std::vector<std::vector<Index>> omega) {
    if (samples.size() != omega.size()) throw DimensionError("samples and Ω̃ disagree in length");
    SupportEstimate e;
    e.K = K;
    e.members.resize(static_cast<std::size_t>(K));
    for (std::size_t r = 0; r < omega.size(); ++r) {
      std::sort(omega[r].begin(), omega[r].end());
      for (Index k : omega[r]) {
        if (k < 0 || k >= K) throw ConfigError("support index out of range");
        e.members[static_cast<std::size_t>(k)].push_back(samples[r]);
      }
    }
    for (auto& m : e.members) std::sort(m.begin(), m.end());
    e.samples = std::move(samples);
    e.omega = std::move(omega);
    return e;
  }
};

/// k ∈ Ω̃_i iff ||P_{Ŝ_i} d̂_k|| > tau_support. `samples[r]` names the sample
/// that subspaces[r] belongs to; by default subspace r is sample r.
inline SupportEstimate estimate_supports(const DictionaryEstimate& dhat,
                                         const std::vector<Subspace>& subspaces,
                                         double tau_support = 0.5,
                                         std::vector<Index> samples = {}, int jobs = 1) {
  if (!(tau_support > 0.0 && tau_support < 1.0))
    throw ConfigError("tau_support must lie in (0, 1)");
  if (samples.empty()) {
    samples.resize(subspaces.size());
    std::iota(samples.begin(), samples.end(), Index{0});
  }
  if (samples.size() != subspaces.size())
    throw DimensionError("one sample index per subspace is required");
  std::vector<Index> live;
  for (Index k = 0; k < dhat.size(); ++k)
    if (dhat.has(k)) live.push_back(k);
  const Matrix cols = dhat.columns(Eigen::all, live);

  std::vector<std::vector<Index>> omega(subspaces.size());
  parallel_for(subspaces.size(), jobs, [&](std::size_t r) {
    if (subspaces[r].ambient() != dhat.dim()) throw DimensionError("subspace/dictionary size mismatch");
    const Vector norms = (subspaces[r].basis().transpose() * cols).colwise().norm();
    for (Index c = 0; c < norms.size(); ++c)
      if (norms(c) > tau_support) omega[r].push_back(live[static_cast<std::size_t>(c)]);
  });
  return SupportEstimate::from_omega(dhat.size(), std::move(samples), std::move(omega));
}

struct RefinedDictionary {
  DictionaryEstimate columns;        ///< d̃_k, unit and sign-fixed; absent when N_k = 0
  std::vector<Index> used;           ///< N_k
  std::vector<double> eigengap;      ///< λ1 - λ2 of Ṽ_k^proj (NaN when absent)
  std::vector<bool> low_confidence;  ///< N_k below the floor
  Index floor = 10;
};

/// Mean of y yᵀ over the listed samples.
inline SymMatrix conditional_covariance(const SampleSet& Y, const std::vector<Index>& members) {
  if (members.empty()) throw ConfigError("conditional covariance of an empty sample list");
  Matrix acc = Matrix::Zero(Y.dim(), Y.dim());
  Matrix chunk;
  constexpr Index kRows = 1024;
  const auto n = static_cast<Index>(members.size());
  for (Index start = 0; start < n; start += kRows) {
    const Index len = std::min(kRows, n - start);
    chunk.resize(Y.dim(), len);
    for (Index c = 0; c < len; ++c) chunk.col(c) = Y.sample(members[static_cast<std::size_t>(start + c)]);
    acc.selfadjointView<Eigen::Lower>().rankUpdate(chunk);
  }
  acc /= static_cast<double>(n);
  acc.triangularView<Eigen::StrictlyUpper>() = acc.transpose();
  return SymMatrix(std::move(acc));
}

/// d̃_k = leading eigenvector of Ṽ_k projected away from Σ̂.
inline RefinedDictionary refine(const SampleSet& Y, const SymMatrix& sigma,
                                const SupportEstimate& supp, Index floor = 10, int jobs = 1) {
  if (sigma.dim() != Y.dim()) throw DimensionError("Σ̂ does not match the sample dimension");
  const Index K = supp.K;
  RefinedDictionary r;
  r.floor = floor;
  r.columns = DictionaryEstimate::empty(Y.dim(), K);
  r.used.assign(static_cast<std::size_t>(K), 0);
  r.eigengap.assign(static_cast<std::size_t>(K), std::numeric_limits<double>::quiet_NaN());
  r.low_confidence.assign(static_cast<std::size_t>(K), true);
  std::vector<std::optional<EigenResult>> eig(static_cast<std::size_t>(K));
  parallel_for(static_cast<std::size_t>(K), jobs, [&](std::size_t k) {
    const auto& m = supp.members[k];
    if (m.empty()) return;
    const auto v = frobenius_project_out(conditional_covariance(Y, m), sigma);
    eig[k] = leading_eigenvectors(v, std::min<Index>(2, Y.dim()));
  });
  for (Index k = 0; k < K; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    r.used[uk] = supp.count(k);
    r.low_confidence[uk] = r.used[uk] < floor;
    if (!eig[uk]) continue;
    const auto& e = *eig[uk];
    r.columns.set(k, e.vectors.col(0));
    r.eigengap[uk] = e.values.size() > 1 ? e.values(0) - e.values(1) : e.gap;
  }
  return r;
}

/// sign(<d, y_i>) for each listed sample; an exact zero maps to +1 with a warning.
inline std::vector<int> recover_signs(const Vector& d, const SampleSet& Y,
                                      const std::vector<Index>& members) {
  if (members.empty()) throw ConfigError("recover_signs needs at least one sample");
  std::vector<int> out;
  out.reserve(members.size());
  for (Index i : members) {
    const double p = d.dot(Y.sample(i));
    if (p == 0.0) warn("zero inner product while recovering a sign; using +1");
    out.push_back(p < 0.0 ? -1 : 1);
  }
  return out;
}

struct AveragingResult {
  DictionaryEstimate columns;            ///< d̄_k, not normalized
  std::vector<std::vector<int>> signs;   ///< per k, aligned with supp.members[k]
};

/// d̄_k = (1/|Ã_k|) Σ_{i∈Ã_k} sign(<d̃_k, y_i>) y_i.
inline AveragingResult average_with_signs(const SampleSet& Y, const SupportEstimate& supp,
                                          const DictionaryEstimate& dtil) {
  if (dtil.size() != supp.K) throw DimensionError("refined dictionary and supports disagree on K");
  AveragingResult r;
  r.columns = DictionaryEstimate::empty(Y.dim(), supp.K);
  r.signs.resize(static_cast<std::size_t>(supp.K));
  for (Index k = 0; k < supp.K; ++k) {
    const auto& m = supp.members[static_cast<std::size_t>(k)];
    if (m.empty() || !dtil.has(k)) continue;
    auto sg = recover_signs(dtil.columns.col(k), Y, m);
    Vector acc = Vector::Zero(Y.dim());
    for (std::size_t t = 0; t < m.size(); ++t) acc += sg[t] * Y.sample(m[t]);
    r.columns.set(k, acc / static_cast<double>(m.size()));
    r.signs[static_cast<std::size_t>(k)] = std::move(sg);
  }
  return r;
}

inline DictionaryEstimate average(const SampleSet& Y, const SupportEstimate& supp,
                                  const RefinedDictionary& dtil) {
  return average_with_signs(Y, supp, dtil.columns).columns;
}

/// Averaging with the true supports and coefficients.
inline DictionaryEstimate true_average(const SampleSet& Y, const CoefficientMatrix& X) {
  if (X.N() != Y.count()) throw DimensionError("coefficient and sample counts disagree");
  Matrix acc = Matrix::Zero(Y.dim(), X.K());
  std::vector<Index> n(static_cast<std::size_t>(X.K()), 0);
  for (Index i = 0; i < X.N(); ++i) {
    const auto& sup = X.support(i);
    const auto& sg = X.signs(i);
    for (std::size_t t = 0; t < sup.size(); ++t) {
      acc.col(sup[t]) += sg[t] * Y.sample(i);
      ++n[static_cast<std::size_t>(sup[t])];
    }
  }
  auto out = DictionaryEstimate::empty(Y.dim(), X.K());
  for (Index k = 0; k < X.K(); ++k)
    if (n[static_cast<std::size_t>(k)] > 0)
      out.set(k, acc.col(k) / static_cast<double>(n[static_cast<std::size_t>(k)]));
  return out;
}

}  // namespace sporadic
