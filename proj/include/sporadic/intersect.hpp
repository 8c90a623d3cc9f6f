#pragma once

// Approximate subspace intersection, the l-fold intersection over a block of
// recovered subspaces, and the SSDL driver that turns blocks into candidate
// dictionary columns.

#include "sporadic/spectral.hpp"

#include <optional>
#include <set>

namespace sporadic {

/// ℓ = ⌈log(2K) / log(K/s)⌉.
inline Index choose_ell(Index K, Index s) {
  if (s < 1) throw ConfigError("s must be positive");
  if (s >= K) throw ConfigError("choose_ell needs s < K");
  const double v = std::log(2.0 * static_cast<double>(K)) /
                   std::log(static_cast<double>(K) / static_cast<double>(s));
  // Guard against log round-off pushing exact integers (K=2, s=1) up by one.
  return static_cast<Index>(std::ceil(v - 1e-12));
}

/// ⌈4(α+1) K ℓ log K⌉ rounded up to a multiple of ℓ.
inline Index default_J(Index K, Index ell, double alpha) {
  const double raw = 4.0 * (alpha + 1.0) * static_cast<double>(K) * static_cast<double>(ell) *
                     std::log(static_cast<double>(K));
  const auto j = static_cast<Index>(std::ceil(raw));
  return ((std::max<Index>(j, 1) + ell - 1) / ell) * ell;
}

struct IntersectConfig {
  Index ell = 2;
  Index J = 2;
  double tau = 0.5;
  double dedup_threshold = 0.8;
  double alpha = 1.0;

  void validate() const {
    if (ell < 1) throw ConfigError("ell must be at least 1");
    if (J < 1) throw ConfigError("J must be positive");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0, 1)");
    if (!(dedup_threshold > 0.0 && dedup_threshold < 1.0))
      throw ConfigError("dedup_threshold must lie in (0, 1)");
    if (!(alpha >= 1.0)) throw ConfigError("alpha must be at least 1");
  }

  Index blocks() const { return J / ell; }

  /// ℓ from choose_ell and J from default_J.
  static IntersectConfig defaults_for(Index K, Index s, double alpha = 1.0) {
    IntersectConfig c;
    c.alpha = alpha;
    c.ell = choose_ell(K, s);
    c.J = default_J(K, c.ell, alpha);
    return c;
  }
};

/// A_τ(Sa, Sb): with P = (I - F_b F_bᵀ) F_a, the image under F_a of the right
/// singular vectors of P whose singular value is at most τ. nullopt means {0}.
inline std::optional<Subspace> approx_intersection(const Subspace& a, const Subspace& b, double tau) {
  if (a.ambient() != b.ambient()) throw DimensionError("subspaces live in different spaces");
  const Matrix& fa = a.basis();
  const Matrix& fb = b.basis();
  const Matrix p = fa - fb * (fb.transpose() * fa);
  Eigen::JacobiSVD<Matrix> svd(p, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  std::vector<Index> keep;
  for (Index c = 0; c < sv.size(); ++c)
    if (sv(c) <= tau) keep.push_back(c);
  if (keep.empty()) return std::nullopt;
  Matrix basis = fa * svd.matrixV()(Eigen::all, keep);
  // Re-orthonormalize to absorb round-off before the next fold.
  Eigen::HouseholderQR<Matrix> qr(basis);
  basis = qr.householderQ() * Matrix::Identity(basis.rows(), basis.cols());
  for (Index c = 0; c < basis.cols(); ++c) fix_sign(basis.col(c));
  return Subspace::from_orthonormal(std::move(basis));
}

enum class FoldOutcome { vector, empty, exhausted };

struct FoldResult {
  FoldOutcome outcome = FoldOutcome::exhausted;
  std::optional<Vector> v;
  Index steps = 0;  ///< number of intersections performed
};

/// Folds approx_intersection left to right. Stops with a unit vector as soon as
/// the running intersection is one-dimensional, with nothing when it becomes
/// {0}, and with nothing when the list runs out while the dimension is still >= 2.
inline FoldResult l_fold_intersect_detailed(const std::vector<const Subspace*>& subspaces, double tau) {
  if (subspaces.empty()) throw ConfigError("l_fold_intersect needs at least one subspace");
  FoldResult r;
  auto finish = [&](const Subspace& s) {
    Vector v = s.basis().col(0).normalized();
    fix_sign(v);
    r.outcome = FoldOutcome::vector;
    r.v = std::move(v);
    return r;
  };
  std::optional<Subspace> acc = *subspaces.front();
  if (subspaces.size() == 1 && acc->dim() == 1) return finish(*acc);
  for (std::size_t i = 1; i < subspaces.size(); ++i) {
    acc = approx_intersection(*acc, *subspaces[i], tau);
    ++r.steps;
    if (!acc) {
      r.outcome = FoldOutcome::empty;
      return r;
    }
    if (acc->dim() == 1) return finish(*acc);
  }
  r.outcome = FoldOutcome::exhausted;
  return r;
}

inline std::optional<Vector> l_fold_intersect(const std::vector<Subspace>& subspaces, double tau) {
  std::vector<const Subspace*> ptrs;
  for (const auto& s : subspaces) ptrs.push_back(&s);
  return l_fold_intersect_detailed(ptrs, tau).v;
}

/// Result of one ℓ-block in the SSDL sweep.
struct BlockOutcome {
  Index block = 0;
  FoldOutcome outcome = FoldOutcome::exhausted;
  bool returned = false;
  bool accepted = false;  ///< survived deduplication
  Index candidate = -1;   ///< index into CandidateSet::vectors when accepted
};

struct CandidateSet {
  std::vector<Vector> vectors;  ///< unit vectors, in block order
  std::vector<Index> block;     ///< producing block of each vector
  Index rejected_blocks = 0;    ///< blocks that returned no vector
  Index duplicates = 0;         ///< returned vectors dropped by deduplication
  std::vector<BlockOutcome> outcomes;

  Index size() const { return static_cast<Index>(vectors.size()); }

  /// Candidates as an M×K̂ matrix.
  Matrix matrix(Index M) const {
    Matrix m(M, size());
    for (Index c = 0; c < size(); ++c) m.col(c) = vectors[static_cast<std::size_t>(c)];
    return m;
  }
};

/// Keeps v unless an already accepted u has |<u, v>| >= threshold. Returns the
/// kept positions.
inline std::vector<std::size_t> dedup_indices(const std::vector<Vector>& vs, double threshold) {
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    bool dup = false;
    for (auto k : kept)
      if (std::abs(vs[k].dot(vs[i])) >= threshold) {
        dup = true;
        break;
      }
    if (!dup) kept.push_back(i);
  }
  return kept;
}

inline std::vector<Vector> dedup(const std::vector<Vector>& vs, double threshold) {
  std::vector<Vector> out;
  for (auto i : dedup_indices(vs, threshold)) out.push_back(vs[i]);
  return out;
}

/// Runs the intersection over consecutive disjoint blocks of `subspaces` and
/// deduplicates the returned vectors in block order.
inline CandidateSet ssdl_from_subspaces(const std::vector<Subspace>& subspaces,
                                        const IntersectConfig& cfg, int jobs = 1) {
  cfg.validate();
  if (static_cast<Index>(subspaces.size()) < cfg.J)
    throw ConfigError("need J = " + std::to_string(cfg.J) + " subspaces, got " +
                      std::to_string(subspaces.size()));
  const Index nb = cfg.blocks();
  std::vector<FoldResult> folds(static_cast<std::size_t>(nb));
  parallel_for(folds.size(), jobs, [&](std::size_t b) {
    std::vector<const Subspace*> block;
    for (Index t = 0; t < cfg.ell; ++t)
      block.push_back(&subspaces[b * static_cast<std::size_t>(cfg.ell) + static_cast<std::size_t>(t)]);
    folds[b] = l_fold_intersect_detailed(block, cfg.tau);
  });

  CandidateSet out;
  std::vector<Vector> returned;
  std::vector<Index> from;
  for (Index b = 0; b < nb; ++b) {
    const auto& f = folds[static_cast<std::size_t>(b)];
    BlockOutcome o;
    o.block = b;
    o.outcome = f.outcome;
    o.returned = f.v.has_value();
    if (f.v) {
      returned.push_back(*f.v);
      from.push_back(b);
    } else {
      ++out.rejected_blocks;
    }
    out.outcomes.push_back(o);
  }
  for (auto i : dedup_indices(returned, cfg.dedup_threshold)) {
    auto& o = out.outcomes[static_cast<std::size_t>(from[i])];
    o.accepted = true;
    o.candidate = out.size();
    out.vectors.push_back(returned[i]);
    out.block.push_back(from[i]);
  }
  out.duplicates = static_cast<Index>(returned.size()) - out.size();
  return out;
}

struct SsdlResult {
  SymMatrix sigma;
  std::vector<Subspace> subspaces;  ///< Ŝ_0 .. Ŝ_{J-1}
  CandidateSet candidates;
};

/// Σ̂ from all samples, Ŝ_j for the first J samples, then the block sweep.
inline SsdlResult ssdl(const SampleSet& Y, Index s, const IntersectConfig& cfg,
                       const RecoveryOptions& opt = {}) {
  cfg.validate();
  if (cfg.J > Y.count())
    throw ConfigError("J = " + std::to_string(cfg.J) + " exceeds the sample count N = " +
                      std::to_string(Y.count()));
  SsdlResult r;
  r.sigma = sample_covariance(Y);
  std::vector<Index> idx(static_cast<std::size_t>(cfg.J));
  std::iota(idx.begin(), idx.end(), Index{0});
  r.subspaces = recover_subspaces(Y, r.sigma, idx, s, opt);
  r.candidates = ssdl_from_subspaces(r.subspaces, cfg, opt.jobs);
  return r;
}

/// Ground truth for the block sweep, computed from supports alone.
struct CoverReport {
  bool all = false;
  std::vector<std::vector<Index>> witnesses;  ///< per k, blocks whose intersection is exactly {k}
  std::vector<std::vector<Index>> block_intersection;  ///< per block, the shared support indices
};

inline CoverReport blocks_cover_all(const std::vector<std::vector<Index>>& supports, Index ell,
                                    Index J, Index K) {
  if (ell < 1) throw ConfigError("ell must be at least 1");
  if (J > static_cast<Index>(supports.size()))
    throw ConfigError("J exceeds the number of supports");
  CoverReport r;
  r.witnesses.resize(static_cast<std::size_t>(K));
  const Index nb = J / ell;
  for (Index b = 0; b < nb; ++b) {
    std::vector<Index> acc = supports[static_cast<std::size_t>(b * ell)];
    std::sort(acc.begin(), acc.end());
    for (Index t = 1; t < ell && !acc.empty(); ++t) {
      std::vector<Index> next = supports[static_cast<std::size_t>(b * ell + t)];
      std::sort(next.begin(), next.end());
      std::vector<Index> both;
      std::set_intersection(acc.begin(), acc.end(), next.begin(), next.end(),
                            std::back_inserter(both));
      acc = std::move(both);
    }
    if (acc.size() == 1) {
      if (acc[0] < 0 || acc[0] >= K) throw ConfigError("support index out of range");
      r.witnesses[static_cast<std::size_t>(acc[0])].push_back(b);
    }
    r.block_intersection.push_back(std::move(acc));
  }
  r.all = std::all_of(r.witnesses.begin(), r.witnesses.end(),
                      [](const auto& w) { return !w.empty(); });
  return r;
}

}  // namespace sporadic
