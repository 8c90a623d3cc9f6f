#pragma once

// Synthetic instances of the sparse dictionary model Y = D X, and the
// diagnostic that checks a dictionary against the "good dictionary" criteria
// (bounded DDᵀ deviation, low coherence, small 2s-restricted isometry constant).

#include "sporadic/core.hpp"

#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

namespace sporadic {

/// Forces dictionary index `k` into the supports of samples `first` and `second`.
struct OverlapSeed {
  Index k = 0;
  Index first = 0;
  Index second = 0;

  friend bool operator==(const OverlapSeed&, const OverlapSeed&) = default;
};

struct ProblemConfig {
  Index M = 0;  ///< ambient dimension
  Index K = 0;  ///< dictionary size
  Index s = 0;  ///< sparsity
  Index N = 0;  ///< sample count
  std::uint64_t seed = 0;
  std::vector<OverlapSeed> overlap_seeding;

  friend bool operator==(const ProblemConfig&, const ProblemConfig&) = default;

  /// Throws ConfigError unless 1 <= s < M < K, N >= 1 and all seeding indices are in range.
  void validate() const {
    if (M < 1 || K < 1 || s < 1 || N < 1)
      throw ConfigError("M, K, s and N must be positive");
    if (K <= M) throw ConfigError("dictionary must be overcomplete (K > M)");
    if (s >= M) throw ConfigError("sparsity must satisfy s < M");
    std::map<Index, std::vector<Index>> forced;
    for (const auto& o : overlap_seeding) {
      if (o.k < 0 || o.k >= K)
        throw ConfigError("overlap_seeding dictionary index " + std::to_string(o.k) +
                          " out of range [0, K)");
      for (Index i : {o.first, o.second}) {
        if (i < 0 || i >= N)
          throw ConfigError("overlap_seeding sample index " + std::to_string(i) +
                            " out of range [0, N)");
        auto& f = forced[i];
        if (std::find(f.begin(), f.end(), o.k) == f.end()) f.push_back(o.k);
        if (static_cast<Index>(f.size()) > s)
          throw ConfigError("overlap_seeding forces more than s indices into sample " +
                            std::to_string(i));
      }
    }
  }

  /// The technical side condition K / M^{3/2} <= sqrt(K / M), i.e. K <= M².
  bool side_condition_holds() const {
    return static_cast<double>(K) / std::pow(static_cast<double>(M), 1.5) <=
           std::sqrt(static_cast<double>(K) / static_cast<double>(M));
  }
};

/// M×K matrix with unit-norm columns.
class Dictionary {
 public:
  static constexpr double kUnitTolerance = 1e-9;

  Dictionary() = default;

  explicit Dictionary(Matrix columns) : d_(std::move(columns)) {
    for (Index k = 0; k < d_.cols(); ++k) {
      const double n = d_.col(k).norm();
      if (!(std::abs(n - 1.0) <= kUnitTolerance))
        throw ConfigError("dictionary column " + std::to_string(k) +
                          " is not unit norm (norm = " + std::to_string(n) + ")");
    }
  }

  /// Normalizes every column; throws on a zero column.
  static Dictionary normalized(Matrix columns) {
    for (Index k = 0; k < columns.cols(); ++k) {
      const double n = columns.col(k).norm();
      if (n == 0.0) throw NumericalError("cannot normalize a zero dictionary column");
      columns.col(k) /= n;
    }
    return Dictionary(std::move(columns));
  }

  const Matrix& matrix() const noexcept { return d_; }
  Index dim() const noexcept { return d_.rows(); }
  Index size() const noexcept { return d_.cols(); }
  auto column(Index k) const { return d_.col(k); }

  friend bool operator==(const Dictionary& a, const Dictionary& b) {
    return a.d_.rows() == b.d_.rows() && a.d_.cols() == b.d_.cols() && a.d_ == b.d_;
  }

 private:
  Matrix d_;
};

/// An estimated dictionary (D̂, D̃ or D̄). Columns need not be unit norm, and a
/// column may be absent; absent columns are stored as NaN and flagged.
struct DictionaryEstimate {
  Matrix columns;
  std::vector<bool> present;

  DictionaryEstimate() = default;

  /// All-NaN columns are treated as absent.
  explicit DictionaryEstimate(Matrix cols) : columns(std::move(cols)) {
    present.resize(static_cast<std::size_t>(columns.cols()));
    for (Index k = 0; k < columns.cols(); ++k)
      present[static_cast<std::size_t>(k)] = !columns.col(k).array().isNaN().all();
  }

  static DictionaryEstimate empty(Index dim, Index count) {
    DictionaryEstimate e;
    e.columns = Matrix::Constant(dim, count, std::numeric_limits<double>::quiet_NaN());
    e.present.assign(static_cast<std::size_t>(count), false);
    return e;
  }

  Index dim() const noexcept { return columns.rows(); }
  Index size() const noexcept { return columns.cols(); }
  bool has(Index k) const { return present[static_cast<std::size_t>(k)]; }
  Index present_count() const {
    return static_cast<Index>(std::count(present.begin(), present.end(), true));
  }

  void set(Index k, const Vector& v) {
    columns.col(k) = v;
    present[static_cast<std::size_t>(k)] = true;
  }
};

/// K×N sparse coefficient matrix: each column has exactly s entries, all ±1.
class CoefficientMatrix {
 public:
  CoefficientMatrix() = default;

  CoefficientMatrix(Index K, Index s, std::vector<std::vector<Index>> supports,
                    std::vector<std::vector<int>> signs)
      : K_(K), s_(s), supports_(std::move(supports)), signs_(std::move(signs)) {
    if (supports_.size() != signs_.size())
      throw DimensionError("supports and signs disagree on sample count");
    for (std::size_t i = 0; i < supports_.size(); ++i) {
      auto& sup = supports_[i];
      auto& sg = signs_[i];
      if (static_cast<Index>(sup.size()) != s_ || sg.size() != sup.size())
        throw ConfigError("sample " + std::to_string(i) + " does not have exactly s entries");
      // Sort by index, keeping signs aligned.
      std::vector<std::size_t> order(sup.size());
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](auto a, auto b) { return sup[a] < sup[b]; });
      std::vector<Index> s2;
      std::vector<int> g2;
      for (auto o : order) {
        s2.push_back(sup[o]);
        g2.push_back(sg[o]);
      }
      for (std::size_t t = 0; t < s2.size(); ++t) {
        if (s2[t] < 0 || s2[t] >= K_) throw ConfigError("support index out of range");
        if (t > 0 && s2[t] == s2[t - 1]) throw ConfigError("repeated support index");
        if (g2[t] != 1 && g2[t] != -1) throw ConfigError("coefficient values must be ±1");
      }
      sup = std::move(s2);
      sg = std::move(g2);
    }
  }

  /// Reads a dense K×N matrix whose nonzeros must all be exactly ±1.
  static CoefficientMatrix from_dense(const Matrix& x) {
    std::vector<std::vector<Index>> sup(static_cast<std::size_t>(x.cols()));
    std::vector<std::vector<int>> sg(sup.size());
    Index s = -1;
    for (Index i = 0; i < x.cols(); ++i) {
      for (Index k = 0; k < x.rows(); ++k) {
        const double v = x(k, i);
        if (v == 0.0) continue;
        if (v != 1.0 && v != -1.0) throw ConfigError("coefficient values must be ±1");
        sup[static_cast<std::size_t>(i)].push_back(k);
        sg[static_cast<std::size_t>(i)].push_back(v > 0 ? 1 : -1);
      }
      const auto count = static_cast<Index>(sup[static_cast<std::size_t>(i)].size());
      if (s < 0) s = count;
      if (count != s || count == 0)
        throw ConfigError("every coefficient column must have the same nonzero count s >= 1");
    }
    return CoefficientMatrix(x.rows(), std::max<Index>(s, 0), std::move(sup), std::move(sg));
  }

  Index K() const noexcept { return K_; }
  Index s() const noexcept { return s_; }
  Index N() const noexcept { return static_cast<Index>(supports_.size()); }
  const std::vector<Index>& support(Index i) const { return supports_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& signs(Index i) const { return signs_[static_cast<std::size_t>(i)]; }
  const std::vector<std::vector<Index>>& supports() const noexcept { return supports_; }

  /// Coefficient x_{ik}, zero off the support.
  int value(Index i, Index k) const {
    const auto& sup = support(i);
    auto it = std::lower_bound(sup.begin(), sup.end(), k);
    if (it == sup.end() || *it != k) return 0;
    return signs(i)[static_cast<std::size_t>(it - sup.begin())];
  }

  Matrix dense() const {
    Matrix x = Matrix::Zero(K_, N());
    for (Index i = 0; i < N(); ++i)
      for (std::size_t t = 0; t < support(i).size(); ++t)
        x(support(i)[t], i) = signs(i)[t];
    return x;
  }

  friend bool operator==(const CoefficientMatrix&, const CoefficientMatrix&) = default;

 private:
  Index K_ = 0;
  Index s_ = 0;
  std::vector<std::vector<Index>> supports_;
  std::vector<std::vector<int>> signs_;
};

/// Observed samples Y (M×N), optionally tagged with the config that generated them.
class SampleSet {
 public:
  SampleSet() = default;
  explicit SampleSet(Matrix y, std::optional<ProblemConfig> origin = std::nullopt)
      : y_(std::move(y)), origin_(std::move(origin)) {}

  const Matrix& matrix() const noexcept { return y_; }
  Index dim() const noexcept { return y_.rows(); }
  Index count() const noexcept { return y_.cols(); }
  auto sample(Index i) const { return y_.col(i); }
  const std::optional<ProblemConfig>& origin() const noexcept { return origin_; }

  /// Restricts to the first n samples.
  SampleSet head(Index n) const { return SampleSet(y_.leftCols(n), origin_); }

 private:
  Matrix y_;
  std::optional<ProblemConfig> origin_;
};

struct ProblemInstance {
  ProblemConfig config;
  Dictionary D;
  CoefficientMatrix X;
  SampleSet Y;
};

/// Dictionary diagnostics against the good-dictionary criteria with constants B (and C).
struct GoodReport {
  double ddt_deviation = 0;  ///< ||DDᵀ - (K/M) I||_2
  double coherence = 0;      ///< max_{k != m} |<d_k, d_m>|
  double rip_estimate = 0;   ///< lower bound on δ_2s from sampled 2s-subsets
  bool rip_exhaustive = false;
  std::size_t subsets_examined = 0;
  double B = 0;
  double C = 0;
  bool passes_ddt = false;
  bool passes_coherence = false;
  bool passes_rip = false;
  bool passes = false;
  bool side_condition = false;
};

// ---------------------------------------------------------------------------

/// Columns are normalized standard-normal vectors drawn from the dictionary stream.
inline Dictionary gen_dictionary(const ProblemConfig& cfg) {
  cfg.validate();
  if (!cfg.side_condition_holds())
    warn("K / M^{3/2} <= sqrt(K/M) does not hold for this configuration");
  auto eng = make_engine(cfg.seed, Stream::dictionary);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix d(cfg.M, cfg.K);
  for (Index k = 0; k < cfg.K; ++k) {
    double n = 0;
    do {
      for (Index r = 0; r < cfg.M; ++r) d(r, k) = normal(eng);
      n = d.col(k).norm();
    } while (n == 0.0);
    d.col(k) /= n;
  }
  return Dictionary(std::move(d));
}

namespace detail {

/// Draws the remaining indices of an s-subset of [0, K) by partial Fisher-Yates,
/// with `forced` placed first. `perm`/`pos` must be the identity on entry and are
/// restored before returning.
inline std::vector<Index> draw_support(Index K, Index s, const std::vector<Index>& forced,
                                       Engine& eng, std::vector<Index>& perm,
                                       std::vector<Index>& pos) {
  std::vector<std::pair<Index, Index>> swaps;
  swaps.reserve(static_cast<std::size_t>(s));
  auto do_swap = [&](Index a, Index b) {
    std::swap(perm[a], perm[b]);
    pos[perm[a]] = a;
    pos[perm[b]] = b;
    swaps.emplace_back(a, b);
  };
  Index filled = 0;
  for (Index k : forced) do_swap(filled++, pos[k]);
  for (; filled < s; ++filled) {
    std::uniform_int_distribution<Index> pick(filled, K - 1);
    do_swap(filled, pick(eng));
  }
  std::vector<Index> out(perm.begin(), perm.begin() + s);
  for (auto it = swaps.rbegin(); it != swaps.rend(); ++it) {
    std::swap(perm[it->first], perm[it->second]);
    pos[perm[it->first]] = it->first;
    pos[perm[it->second]] = it->second;
  }
  return out;
}

}  // namespace detail

/// Uniform s-subsets with i.i.d. symmetric ±1 values; each sample uses its own stream.
inline CoefficientMatrix gen_coefficients(const ProblemConfig& cfg) {
  cfg.validate();
  std::map<Index, std::vector<Index>> forced;
  for (const auto& o : cfg.overlap_seeding)
    for (Index i : {o.first, o.second}) {
      auto& f = forced[i];
      if (std::find(f.begin(), f.end(), o.k) == f.end()) f.push_back(o.k);
    }

  std::vector<Index> perm(static_cast<std::size_t>(cfg.K));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::vector<Index> pos = perm;
  const std::vector<Index> none;

  std::vector<std::vector<Index>> sup(static_cast<std::size_t>(cfg.N));
  std::vector<std::vector<int>> sg(sup.size());
  for (Index i = 0; i < cfg.N; ++i) {
    auto eng = make_engine(cfg.seed, Stream::coefficients, i);
    auto f = forced.find(i);
    auto& idx = sup[static_cast<std::size_t>(i)];
    idx = detail::draw_support(cfg.K, cfg.s, f == forced.end() ? none : f->second, eng, perm, pos);
    auto& signs = sg[static_cast<std::size_t>(i)];
    signs.resize(idx.size());
    for (auto& v : signs) v = (eng() >> 63) ? 1 : -1;
  }
  return CoefficientMatrix(cfg.K, cfg.s, std::move(sup), std::move(sg));
}

/// Y = D X, computed column by column as signed sums of the support columns.
inline SampleSet synthesize(const Dictionary& D, const CoefficientMatrix& X,
                            std::optional<ProblemConfig> origin = std::nullopt) {
  if (D.size() != X.K())
    throw DimensionError("dictionary has " + std::to_string(D.size()) +
                         " columns but coefficients expect K = " + std::to_string(X.K()));
  Matrix y = Matrix::Zero(D.dim(), X.N());
  for (Index i = 0; i < X.N(); ++i) {
    const auto& sup = X.support(i);
    const auto& sg = X.signs(i);
    for (std::size_t t = 0; t < sup.size(); ++t) y.col(i) += sg[t] * D.column(sup[t]);
  }
  return SampleSet(std::move(y), std::move(origin));
}

inline ProblemInstance generate(const ProblemConfig& cfg) {
  auto D = gen_dictionary(cfg);
  auto X = gen_coefficients(cfg);
  auto Y = synthesize(D, X, cfg);
  return {cfg, std::move(D), std::move(X), std::move(Y)};
}

namespace detail {

inline double binomial(Index n, Index k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  double r = 1;
  for (Index i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(r);
}

/// max(|λ_max - 1|, |λ_min - 1|) of the Gram matrix of the given (sorted) columns.
inline double subset_isometry_defect(const Matrix& d, const std::vector<Index>& cols) {
  const Matrix sub = d(Eigen::all, cols);
  const Matrix gram = sub.transpose() * sub;
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("Gram eigen-solver failed");
  const auto& ev = es.eigenvalues();
  return std::max(std::abs(ev(ev.size() - 1) - 1.0), std::abs(ev(0) - 1.0));
}

inline bool next_combination(std::vector<Index>& c, Index n) {
  const auto k = static_cast<Index>(c.size());
  for (Index i = k - 1; i >= 0; --i) {
    if (c[i] < n - k + i) {
      ++c[i];
      for (Index j = i + 1; j < k; ++j) c[j] = c[j - 1] + 1;
      return true;
    }
  }
  return false;
}

}  // namespace detail

/// Evaluates the good-dictionary criteria. The RIP value is the max defect over
/// `rip_trials` random 2s-subsets, which is a lower bound on δ_2s; when all
/// C(K, 2s) subsets fit in the trial budget they are enumerated and the value is exact.
/// `coherence_constant` defaults to B.
inline GoodReport diagnose_dictionary(const Dictionary& D, Index s, double B,
                                      std::size_t rip_trials, std::uint64_t seed,
                                      std::optional<double> coherence_constant = std::nullopt) {
  const Index M = D.dim();
  const Index K = D.size();
  if (s < 1 || s >= M) throw ConfigError("diagnose_dictionary requires 1 <= s < M");
  if (rip_trials == 0) throw ConfigError("rip_trials must be positive");

  GoodReport r;
  r.B = B;
  r.C = coherence_constant.value_or(B);
  const Matrix& d = D.matrix();
  const double ratio = static_cast<double>(K) / static_cast<double>(M);

  Matrix ddt = d * d.transpose();
  ddt.diagonal().array() -= ratio;
  r.ddt_deviation = spectral_norm_symmetric(ddt);

  Matrix gram = d.transpose() * d;
  gram.diagonal().setZero();
  r.coherence = K > 1 ? gram.cwiseAbs().maxCoeff() : 0.0;

  const Index t = std::min<Index>(2 * s, K);
  const double total = detail::binomial(K, t);
  if (total <= static_cast<double>(rip_trials)) {
    std::vector<Index> c(static_cast<std::size_t>(t));
    std::iota(c.begin(), c.end(), Index{0});
    do {
      r.rip_estimate = std::max(r.rip_estimate, detail::subset_isometry_defect(d, c));
      ++r.subsets_examined;
    } while (detail::next_combination(c, K));
    r.rip_exhaustive = true;
  } else {
    std::vector<Index> perm(static_cast<std::size_t>(K));
    for (std::size_t trial = 0; trial < rip_trials; ++trial) {
      std::iota(perm.begin(), perm.end(), Index{0});
      auto eng = make_engine(seed, Stream::rip, trial);
      for (Index a = 0; a < t; ++a) {
        std::uniform_int_distribution<Index> pick(a, K - 1);
        std::swap(perm[a], perm[pick(eng)]);
      }
      std::vector<Index> c(perm.begin(), perm.begin() + t);
      std::sort(c.begin(), c.end());
      r.rip_estimate = std::max(r.rip_estimate, detail::subset_isometry_defect(d, c));
      ++r.subsets_examined;
    }
  }

  const double logM = std::log(static_cast<double>(M));
  const double sqrtM = std::sqrt(static_cast<double>(M));
  r.passes_ddt = r.ddt_deviation <= B * std::sqrt(static_cast<double>(K)) / sqrtM;
  r.passes_coherence = r.coherence <= r.C * logM / sqrtM;
  r.passes_rip = r.rip_estimate <= B * std::sqrt(static_cast<double>(s)) * logM / sqrtM &&
                 r.rip_estimate < 0.125;
  r.passes = r.passes_ddt && r.passes_coherence && r.passes_rip;
  r.side_condition = static_cast<double>(K) / std::pow(static_cast<double>(M), 1.5) <=
                     std::sqrt(ratio);
  if (!r.side_condition) warn("K / M^{3/2} <= sqrt(K/M) does not hold for this dictionary");
  return r;
}

}  // namespace sporadic
