#pragma once

// Correlation-weighted covariances, covariance projection and single subspace
// recovery, plus the closed-form expectation used to test the estimators.

#include "sporadic/problem.hpp"

#include <optional>
#include <sstream>

namespace sporadic {

/// Orthonormal M×d basis of a subspace.
class Subspace {
 public:
  static constexpr double kOrthoTolerance = 1e-8;

  Subspace() = default;

  /// Takes ownership of a basis that must already be orthonormal.
  static Subspace from_orthonormal(Matrix basis) {
    if (basis.cols() < 1 || basis.cols() > basis.rows())
      throw DimensionError("subspace dimension must be in [1, M]");
    const Matrix gram = basis.transpose() * basis;
    const double dev = (gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
    if (!(dev <= kOrthoTolerance))
      throw ConfigError("basis is not orthonormal (max |BᵀB - I| = " + std::to_string(dev) + ")");
    Subspace s;
    s.basis_ = std::move(basis);
    return s;
  }

  /// Orthonormal basis of the column span of `vectors` (rank decided by SVD).
  static Subspace span_of(const Matrix& vectors, double rank_tol = 1e-10) {
    Eigen::JacobiSVD<Matrix> svd(vectors, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    Index r = 0;
    const double cutoff = rank_tol * (sv.size() ? sv(0) : 0.0);
    while (r < sv.size() && sv(r) > cutoff) ++r;
    if (r == 0) throw NumericalError("span of zero vectors is not a subspace");
    Matrix b = svd.matrixU().leftCols(r);
    for (Index c = 0; c < b.cols(); ++c) fix_sign(b.col(c));
    return from_orthonormal(std::move(b));
  }

  const Matrix& basis() const noexcept { return basis_; }
  Index dim() const noexcept { return basis_.cols(); }
  Index ambient() const noexcept { return basis_.rows(); }

  Vector project(const Vector& v) const { return basis_ * (basis_.transpose() * v); }
  Matrix projector() const { return basis_ * basis_.transpose(); }

 private:
  Matrix basis_;
};

/// Real symmetric matrix, symmetrized on construction.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(Matrix a) : a_(std::move(a)) {
    if (a_.rows() != a_.cols()) throw DimensionError("symmetric matrix must be square");
    symmetrize();
  }

  const Matrix& matrix() const noexcept { return a_; }
  Index dim() const noexcept { return a_.rows(); }
  double frobenius_norm() const { return a_.norm(); }

 private:
  void symmetrize() {
    for (Index c = 0; c < a_.cols(); ++c)
      for (Index r = c + 1; r < a_.rows(); ++r) {
        const double m = 0.5 * (a_(r, c) + a_(c, r));
        a_(r, c) = m;
        a_(c, r) = m;
      }
  }

  Matrix a_;
};

inline double frobenius_inner(const SymMatrix& a, const SymMatrix& b) {
  return frobenius_inner(a.matrix(), b.matrix());
}

// ---------------------------------------------------------------------------
// Covariances
// ---------------------------------------------------------------------------

namespace detail {

constexpr Index kChunk = 4096;

/// (1/N) Σ_i w_i y_i y_iᵀ, with w = nullptr meaning all ones. Accumulated in
/// fixed column chunks so the result does not depend on threading.
inline Matrix weighted_gram(const Matrix& y, const Vector* w) {
  const Index M = y.rows();
  const Index N = y.cols();
  Matrix acc = Matrix::Zero(M, M);
  Matrix z;
  for (Index start = 0; start < N; start += kChunk) {
    const Index n = std::min(kChunk, N - start);
    if (w) {
      z = y.middleCols(start, n) * w->segment(start, n).cwiseSqrt().asDiagonal();
      acc.selfadjointView<Eigen::Lower>().rankUpdate(z);
    } else {
      acc.selfadjointView<Eigen::Lower>().rankUpdate(y.middleCols(start, n));
    }
  }
  acc /= static_cast<double>(N);
  acc.triangularView<Eigen::StrictlyUpper>() = acc.transpose();
  return acc;
}

}  // namespace detail

/// Σ̂ = (1/N) Y Yᵀ.
inline SymMatrix sample_covariance(const SampleSet& Y) {
  if (Y.count() < 1) throw ConfigError("sample_covariance needs at least one sample");
  return SymMatrix(detail::weighted_gram(Y.matrix(), nullptr));
}

/// Σ̂_j = (1/N) Σ_{i≠j} <y_j, y_i>² y_i y_iᵀ.
inline SymMatrix weighted_covariance(const SampleSet& Y, Index j) {
  const Index N = Y.count();
  if (N < 2) throw ConfigError("weighted_covariance needs at least two samples");
  if (j < 0 || j >= N) throw ConfigError("sample index " + std::to_string(j) + " out of range");
  Vector w = (Y.matrix().transpose() * Y.sample(j)).array().square();
  w(j) = 0.0;
  return SymMatrix(detail::weighted_gram(Y.matrix(), &w));
}

/// E[<y0, y>² y yᵀ] for a fresh sample y from the model with dictionary D.
///
/// With q = (s-1)/(K-1), c_k = <y0, d_k> and v0 = D Dᵀ y0,
///
///   (K/s) E = 2q v0 v0ᵀ + (1 - 3q) Σ_k c_k² d_k d_kᵀ + q (Σ_k c_k²) D Dᵀ.
///
/// Splitting c_k = x_{0k} + t_k on Ω0 gives the term-by-term version
/// (1 + 2 x_{0k} t_k) + t_k² = c_k², so the coefficients of y0 drop out and
/// Ω0 is only checked for consistency.
inline SymMatrix expected_weighted_covariance(const Dictionary& D, const Vector& y0,
                                              const std::vector<Index>& omega0, Index s,
                                              Index K) {
  const Matrix& d = D.matrix();
  if (D.size() != K) throw DimensionError("dictionary size does not match K");
  if (y0.size() != D.dim()) throw DimensionError("y0 has the wrong dimension");
  if (static_cast<Index>(omega0.size()) != s) throw ConfigError("|Ω0| must equal s");
  if (s < 1 || s > K) throw ConfigError("need 1 <= s <= K");
  std::vector<Index> sorted = omega0;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ConfigError("Ω0 repeats an index");
  for (Index k : omega0)
    if (k < 0 || k >= K) throw ConfigError("Ω0 index out of range");

  const double q = K > 1 ? static_cast<double>(s - 1) / static_cast<double>(K - 1) : 1.0;
  const Vector c = d.transpose() * y0;
  const Vector v0 = d * c;
  const Vector weight = (1.0 - 3.0 * q) * c.array().square().matrix();

  Matrix e = 2.0 * q * v0 * v0.transpose();
  e.noalias() += d * weight.asDiagonal() * d.transpose();
  e.noalias() += q * c.squaredNorm() * (d * d.transpose());
  e *= static_cast<double>(s) / static_cast<double>(K);
  return SymMatrix(std::move(e));
}

/// A - (<A,B>_F / ||B||²_F) B. Throws NumericalError when ||B||_F < 1e-12.
inline SymMatrix frobenius_project_out(const SymMatrix& A, const SymMatrix& B) {
  if (A.dim() != B.dim()) throw DimensionError("covariance projection: size mismatch");
  const double bb = B.matrix().squaredNorm();
  if (!(std::sqrt(bb) >= 1e-12))
    throw NumericalError("degenerate covariance: Frobenius norm below 1e-12");
  const double ratio = frobenius_inner(A, B) / bb;
  return SymMatrix(A.matrix() - ratio * B.matrix());
}

// ---------------------------------------------------------------------------
// Leading eigenvectors
// ---------------------------------------------------------------------------

struct EigenOptions {
  Index full_threshold = 512;  ///< use a full decomposition up to this size
  double tolerance = 1e-8;     ///< relative eigen-residual for block power iteration
  int max_iterations = 1000;
};

struct EigenResult {
  Matrix vectors;  ///< M×s, descending eigenvalue order, sign-fixed columns
  Vector values;   ///< the s leading eigenvalues, descending
  double gap = 0;  ///< λ_s - λ_{s+1} when available, else NaN
  int iterations = 0;
};

namespace detail {

inline EigenResult block_power(const Matrix& a, Index s, const EigenOptions& opt) {
  const Index M = a.rows();
  const Index p = std::min<Index>(M, s + std::max<Index>(8, s / 2));
  const double shift = a.norm();
  Matrix shifted = a;
  shifted.diagonal().array() += shift;

  auto eng = Engine{0x51b5eedULL};
  std::normal_distribution<double> normal;
  Matrix q(M, p);
  for (Index c = 0; c < p; ++c)
    for (Index r = 0; r < M; ++r) q(r, c) = normal(eng);
  q = Eigen::HouseholderQR<Matrix>(q).householderQ() * Matrix::Identity(M, p);

  const double scale = std::max(shift, 1e-300);
  double residual = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= opt.max_iterations; ++it) {
    Matrix z = shifted * q;
    q = Eigen::HouseholderQR<Matrix>(z).householderQ() * Matrix::Identity(M, p);
    const Matrix aq = a * q;
    Eigen::SelfAdjointEigenSolver<Matrix> small(q.transpose() * aq);
    if (small.info() != Eigen::Success) throw NumericalError("Rayleigh-Ritz step failed");
    // Ritz pairs, descending.
    Matrix ritz = q * small.eigenvectors().rowwise().reverse();
    Vector vals = small.eigenvalues().reverse();
    residual = 0;
    for (Index c = 0; c < s; ++c)
      residual = std::max(residual, (a * ritz.col(c) - vals(c) * ritz.col(c)).norm() / scale);
    q = ritz;
    if (residual <= opt.tolerance) {
      EigenResult r;
      r.vectors = ritz.leftCols(s);
      r.values = vals.head(s);
      r.gap = s < p ? vals(s - 1) - vals(s) : std::numeric_limits<double>::quiet_NaN();
      r.iterations = it;
      return r;
    }
  }
  std::ostringstream msg;
  msg << "block power iteration did not converge: size " << M << ", s = " << s
      << ", iterations = " << opt.max_iterations << ", residual = " << residual
      << ", tolerance = " << opt.tolerance;
  throw NumericalError(msg.str());
}

}  // namespace detail

/// The s leading (largest algebraic) eigenvectors of a symmetric matrix.
inline EigenResult leading_eigenvectors(const SymMatrix& A, Index s, const EigenOptions& opt = {}) {
  const Index M = A.dim();
  if (s < 1 || s > M) throw ConfigError("requested eigenvector count out of range");
  EigenResult r;
  if (M <= opt.full_threshold) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(A.matrix());
    if (es.info() != Eigen::Success)
      throw NumericalError("symmetric eigen-solver failed on a " + std::to_string(M) + "x" +
                           std::to_string(M) + " matrix");
    r.vectors = es.eigenvectors().rightCols(s).rowwise().reverse();
    r.values = es.eigenvalues().tail(s).reverse();
    r.gap = s < M ? es.eigenvalues()(M - s) - es.eigenvalues()(M - s - 1)
                  : std::numeric_limits<double>::quiet_NaN();
  } else {
    r = detail::block_power(A.matrix(), s, opt);
  }
  for (Index c = 0; c < s; ++c) fix_sign(r.vectors.col(c));
  return r;
}

// ---------------------------------------------------------------------------
// Subspace recovery
// ---------------------------------------------------------------------------

/// Top-s eigenvectors of the projected weighted covariance Σ̂_j - (<Σ̂_j,Σ̂>/||Σ̂||²) Σ̂.
inline Subspace subspace_from_weighted(const SymMatrix& sigma_j, const SymMatrix& sigma, Index s,
                                       const EigenOptions& opt = {}) {
  if (s >= sigma.dim()) return Subspace::from_orthonormal(Matrix::Identity(sigma.dim(), sigma.dim()));
  return Subspace::from_orthonormal(
      leading_eigenvectors(frobenius_project_out(sigma_j, sigma), s, opt).vectors);
}

inline Subspace recover_subspace(const SampleSet& Y, const SymMatrix& sigma, Index j, Index s,
                                 const EigenOptions& opt = {}) {
  if (sigma.dim() != Y.dim()) throw DimensionError("Σ̂ does not match the sample dimension");
  if (s < 1) throw ConfigError("s must be positive");
  if (s >= Y.dim()) {
    if (Y.count() < 2) throw ConfigError("subspace recovery needs at least two samples");
    return Subspace::from_orthonormal(Matrix::Identity(Y.dim(), Y.dim()));
  }
  return subspace_from_weighted(weighted_covariance(Y, j), sigma, s, opt);
}

enum class CovarianceRoute { automatic, direct, moment };

struct RecoveryOptions {
  int jobs = 1;
  CovarianceRoute route = CovarianceRoute::automatic;
  double memory_budget_bytes = 1.2e9;  ///< cap on the moment operator's size
  Index batch = 256;
  EigenOptions eigen;
};

/// Fourth-moment operator on packed symmetric matrices. With p(A) the packed
/// lower triangle (off-diagonals scaled by √2, so <p(A),p(B)> = <A,B>_F),
///   T = (1/N) Σ_i p(y_i y_iᵀ) p(y_i y_iᵀ)ᵀ,
/// and Σ̂_j = unpack(T p(y_j y_jᵀ)) - (1/N) ||y_j||⁴ y_j y_jᵀ. Building T once
/// costs N·P² (P = M(M+1)/2) and each Σ̂_j then costs P², instead of N·M².
class MomentOperator {
 public:
  explicit MomentOperator(const Matrix& y) : M_(y.rows()), N_(y.cols()) {
    const Index P = packed_size(M_);
    t_ = Matrix::Zero(P, P);
    Matrix chunk;
    constexpr Index kRows = 512;
    for (Index start = 0; start < N_; start += kRows) {
      const Index n = std::min(kRows, N_ - start);
      chunk.resize(P, n);
      for (Index i = 0; i < n; ++i) pack_outer(y.col(start + i), chunk.col(i));
      t_.selfadjointView<Eigen::Lower>().rankUpdate(chunk, 1.0 / static_cast<double>(N_));
    }
    for (Index c = 0; c < P; ++c)
      for (Index r = c + 1; r < P; ++r) t_(c, r) = t_(r, c);
  }

  static Index packed_size(Index M) { return M * (M + 1) / 2; }
  static double bytes_for(Index M) {
    const double P = static_cast<double>(packed_size(M));
    return P * P * 8.0;
  }

  /// Σ̂_j for each j in `idx`.
  std::vector<SymMatrix> weighted(const Matrix& y, const std::vector<Index>& idx) const {
    const Index P = t_.rows();
    const Index b = static_cast<Index>(idx.size());
    Matrix packed(P, b);
    for (Index c = 0; c < b; ++c) pack_outer(y.col(idx[static_cast<std::size_t>(c)]), packed.col(c));
    Matrix out = t_ * packed;
    std::vector<SymMatrix> res;
    res.reserve(idx.size());
    for (Index c = 0; c < b; ++c) {
      const double n2 = y.col(idx[static_cast<std::size_t>(c)]).squaredNorm();
      out.col(c) -= (n2 * n2 / static_cast<double>(N_)) * packed.col(c);
      res.emplace_back(unpack(out.col(c)));
    }
    return res;
  }

  Index dim() const noexcept { return M_; }

 private:
  template <class V, class Out>
  void pack_outer(const V& v, Out&& out) const {
    Index p = 0;
    for (Index c = 0; c < M_; ++c) {
      out(p++) = v(c) * v(c);
      for (Index r = c + 1; r < M_; ++r) out(p++) = std::numbers::sqrt2 * v(r) * v(c);
    }
  }

  template <class V>
  Matrix unpack(const V& packed) const {
    Matrix a(M_, M_);
    Index p = 0;
    for (Index c = 0; c < M_; ++c) {
      a(c, c) = packed(p++);
      for (Index r = c + 1; r < M_; ++r) {
        const double v = packed(p++) / std::numbers::sqrt2;
        a(r, c) = v;
        a(c, r) = v;
      }
    }
    return a;
  }

  Index M_;
  Index N_;
  Matrix t_;
};

/// Which route recover_subspaces will take for `count` subspaces.
inline CovarianceRoute choose_route(Index M, Index N, Index count, const RecoveryOptions& opt) {
  if (opt.route != CovarianceRoute::automatic) return opt.route;
  if (MomentOperator::bytes_for(M) > opt.memory_budget_bytes) return CovarianceRoute::direct;
  const double P = static_cast<double>(MomentOperator::packed_size(M));
  const double direct = static_cast<double>(count) * static_cast<double>(N) * static_cast<double>(M * M);
  const double moment = static_cast<double>(N) * P * P + 2.0 * static_cast<double>(count) * P * P;
  return moment < direct ? CovarianceRoute::moment : CovarianceRoute::direct;
}

/// Ŝ_j for every j in `indices`, in the same order.
inline std::vector<Subspace> recover_subspaces(const SampleSet& Y, const SymMatrix& sigma,
                                               const std::vector<Index>& indices, Index s,
                                               const RecoveryOptions& opt = {}) {
  const Index N = Y.count();
  if (N < 2) throw ConfigError("subspace recovery needs at least two samples");
  if (sigma.dim() != Y.dim()) throw DimensionError("Σ̂ does not match the sample dimension");
  for (Index j : indices)
    if (j < 0 || j >= N) throw ConfigError("sample index " + std::to_string(j) + " out of range");
  std::vector<Subspace> out(indices.size());
  if (indices.empty()) return out;
  if (s >= Y.dim()) {
    for (auto& o : out) o = Subspace::from_orthonormal(Matrix::Identity(Y.dim(), Y.dim()));
    return out;
  }

  const auto route = choose_route(Y.dim(), N, static_cast<Index>(indices.size()), opt);
  if (route == CovarianceRoute::direct) {
    parallel_for(indices.size(), opt.jobs, [&](std::size_t t) {
      out[t] = subspace_from_weighted(weighted_covariance(Y, indices[t]), sigma, s, opt.eigen);
    });
    return out;
  }

  const MomentOperator T(Y.matrix());
  const std::size_t batch = static_cast<std::size_t>(std::max<Index>(opt.batch, 1));
  for (std::size_t start = 0; start < indices.size(); start += batch) {
    const std::size_t n = std::min(batch, indices.size() - start);
    // Pad to a full batch so every batch runs the same kernel shape.
    std::vector<Index> idx(indices.begin() + static_cast<std::ptrdiff_t>(start),
                           indices.begin() + static_cast<std::ptrdiff_t>(start + n));
    idx.resize(batch, idx.front());
    const auto sig = T.weighted(Y.matrix(), idx);
    parallel_for(n, opt.jobs, [&](std::size_t t) {
      out[start + t] = subspace_from_weighted(sig[t], sigma, s, opt.eigen);
    });
  }
  return out;
}

/// ||(I - B₂B₂ᵀ) B₁||₂, the largest sine of a principal angle.
inline double subspace_distance(const Subspace& a, const Subspace& b) {
  if (a.dim() != b.dim() || a.ambient() != b.ambient())
    throw DimensionError("subspace_distance needs subspaces of equal dimension");
  const Matrix r = a.basis() - b.basis() * (b.basis().transpose() * a.basis());
  return std::clamp(spectral_norm(r), 0.0, 1.0);
}

/// Spanning subspace of a sample with known support: span{d_k : k ∈ Ω}.
inline Subspace spanning_subspace(const Dictionary& D, const std::vector<Index>& support) {
  return Subspace::span_of(D.matrix()(Eigen::all, support));
}

}  // namespace sporadic
