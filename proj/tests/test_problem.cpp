#include "support.hpp"

#include <bit>
#include <set>

using namespace sporadic;
using sporadic::testing::config;

TEST(ProblemConfig, RejectsBadShapes) {
  EXPECT_THROW(config(8, 8, 2, 10, 1).validate(), ConfigError);
  EXPECT_THROW(config(8, 6, 2, 10, 1).validate(), ConfigError);
  EXPECT_THROW(config(8, 16, 8, 10, 1).validate(), ConfigError);
  EXPECT_THROW(config(8, 16, 2, 0, 1).validate(), ConfigError);
  EXPECT_THROW(config(8, 16, 0, 10, 1).validate(), ConfigError);
  EXPECT_NO_THROW(config(8, 16, 7, 1, 1).validate());
}

TEST(ProblemConfig, RejectsOverlapSeedingOutOfRange) {
  auto c = config(8, 16, 2, 10, 1);
  c.overlap_seeding = {{16, 0, 1}};
  EXPECT_THROW(c.validate(), ConfigError);
  c.overlap_seeding = {{3, 0, 10}};
  EXPECT_THROW(c.validate(), ConfigError);
  c.overlap_seeding = {{3, 0, 1}, {4, 0, 2}, {5, 0, 3}};
  EXPECT_THROW(c.validate(), ConfigError);  // three forced indices into sample 0 with s = 2
  c.overlap_seeding = {{3, 0, 1}, {4, 0, 2}};
  EXPECT_NO_THROW(c.validate());
}

TEST(ProblemConfig, SideConditionWarnsButGenerates) {
  sporadic::testing::WarningCapture w;
  auto c = config(4, 17, 2, 5, 3);  // K > M²
  EXPECT_FALSE(c.side_condition_holds());
  EXPECT_NO_THROW(gen_dictionary(c));
  EXPECT_EQ(w.seen.size(), 1u);
  EXPECT_TRUE(config(4, 16, 2, 5, 3).side_condition_holds());
}

TEST(GenDictionary, UnitColumns) {
  const auto d = gen_dictionary(config(4, 8, 1, 1, 7));
  ASSERT_EQ(d.dim(), 4);
  ASSERT_EQ(d.size(), 8);
  for (Index k = 0; k < 8; ++k) EXPECT_NEAR(d.column(k).norm(), 1.0, 1e-12);
}

TEST(GenDictionary, Deterministic) {
  const auto c = config(4, 8, 1, 1, 7);
  const auto a = gen_dictionary(c);
  const auto b = gen_dictionary(c);
  EXPECT_TRUE(a == b);
  auto c2 = c;
  c2.seed = 8;
  EXPECT_FALSE(a == gen_dictionary(c2));
}

TEST(GenDictionary, DictionaryDoesNotDependOnSparsityOrSampleCount) {
  EXPECT_TRUE(gen_dictionary(config(10, 20, 2, 5, 9)) == gen_dictionary(config(10, 20, 6, 500, 9)));
}

// Marchenko-Pastur: for K/M = 2 the spectrum of DDᵀ fills
// (K/M)(1 ± sqrt(M/K))², so ||DDᵀ - (K/M)I|| / sqrt(K/M) tends to
// 2 + sqrt(M/K) ≈ 2.707. Fifty seeds must stay below 3.
TEST(GenDictionary, DdtDeviationConstantOverSeeds) {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto d = gen_dictionary(config(200, 400, 5, 1, seed));
    const auto r = diagnose_dictionary(d, 5, 1.0, 1, seed);
    worst = std::max(worst, r.ddt_deviation / std::sqrt(2.0));
  }
  EXPECT_GT(worst, 2.4);
  EXPECT_LE(worst, 3.0);
}

TEST(GenCoefficients, ExactCardinalityAndSigns) {
  const auto x = gen_coefficients(config(4, 8, 3, 5, 1));
  ASSERT_EQ(x.N(), 5);
  for (Index i = 0; i < x.N(); ++i) {
    const auto& sup = x.support(i);
    ASSERT_EQ(sup.size(), 3u);
    EXPECT_EQ(std::set<Index>(sup.begin(), sup.end()).size(), 3u);
    for (int v : x.signs(i)) EXPECT_TRUE(v == 1 || v == -1);
  }
}

TEST(GenCoefficients, OverlapSeeding) {
  // Index 1 forced into samples 1 and 2, as in the seeded-overlap setup.
  auto c = config(10, 20, 3, 6, 4);
  c.overlap_seeding = {{1, 1, 2}};
  const auto x = gen_coefficients(c);
  EXPECT_NE(x.value(1, 1), 0);
  EXPECT_NE(x.value(2, 1), 0);
  for (Index i = 0; i < x.N(); ++i) EXPECT_EQ(x.support(i).size(), 3u);
}

TEST(GenCoefficients, Deterministic) {
  auto c = config(10, 40, 4, 200, 11);
  c.overlap_seeding = {{0, 0, 1}, {7, 5, 9}};
  EXPECT_TRUE(gen_coefficients(c) == gen_coefficients(c));
}

TEST(GenCoefficients, SampleStreamsAreIndependentOfN) {
  // Sample i's draw depends only on (seed, i).
  const auto a = gen_coefficients(config(10, 40, 4, 50, 2));
  const auto b = gen_coefficients(config(10, 40, 4, 500, 2));
  for (Index i = 0; i < 50; ++i) {
    EXPECT_EQ(a.support(i), b.support(i));
    EXPECT_EQ(a.signs(i), b.signs(i));
  }
}

TEST(GenCoefficients, InclusionFrequency) {
  const auto x = gen_coefficients(config(20, 100, 10, 10000, 5));
  std::vector<int> count(100, 0);
  long plus = 0;
  long total = 0;
  for (Index i = 0; i < x.N(); ++i) {
    for (Index k : x.support(i)) ++count[static_cast<std::size_t>(k)];
    for (int v : x.signs(i)) {
      plus += v > 0;
      ++total;
    }
  }
  for (int c : count) EXPECT_NEAR(c / 10000.0, 0.1, 0.01);
  EXPECT_NEAR(static_cast<double>(plus) / static_cast<double>(total), 0.5, 0.01);
}

TEST(GenCoefficients, ForcedCompletionIsUniformOverComplement) {
  auto c = config(6, 8, 3, 4000, 13);
  for (Index i = 0; i < c.N; ++i) c.overlap_seeding.push_back({2, i, i});
  const auto x = gen_coefficients(c);
  std::vector<int> count(8, 0);
  for (Index i = 0; i < x.N(); ++i)
    for (Index k : x.support(i)) ++count[static_cast<std::size_t>(k)];
  EXPECT_EQ(count[2], 4000);
  // The other two slots are uniform over 7 indices: 8000/7 each, sd ≈ 30.
  for (int k = 0; k < 8; ++k)
    if (k != 2) EXPECT_NEAR(count[static_cast<std::size_t>(k)], 8000.0 / 7.0, 120.0);
}

// E|Ω_i ∩ Ω_j| = s²/K for independent uniform s-subsets.
TEST(GenCoefficients, PairwiseOverlapMean) {
  const Index K = 50, s = 5;
  const auto x = gen_coefficients(config(20, K, s, 20001, 17));
  std::vector<double> sizes;
  for (Index i = 0; i + 1 < x.N(); i += 2) {
    std::vector<Index> both;
    std::set_intersection(x.support(i).begin(), x.support(i).end(), x.support(i + 1).begin(),
                          x.support(i + 1).end(), std::back_inserter(both));
    sizes.push_back(static_cast<double>(both.size()));
  }
  const double n = static_cast<double>(sizes.size());
  double mean = 0, var = 0;
  for (double v : sizes) mean += v / n;
  for (double v : sizes) var += (v - mean) * (v - mean) / (n - 1);
  EXPECT_NEAR(mean, static_cast<double>(s * s) / static_cast<double>(K), 3.0 * std::sqrt(var / n));
}

TEST(CoefficientMatrix, DenseRoundTrip) {
  const auto x = gen_coefficients(config(6, 12, 3, 20, 3));
  const Matrix d = x.dense();
  EXPECT_EQ((d.array() != 0).count(), 60);
  EXPECT_TRUE(CoefficientMatrix::from_dense(d) == x);
}

TEST(CoefficientMatrix, RejectsInvalidValues) {
  Matrix d = Matrix::Zero(4, 2);
  d(0, 0) = 1;
  d(1, 1) = 0.5;
  EXPECT_THROW(CoefficientMatrix::from_dense(d), ConfigError);
  d(1, 1) = -1;
  d(2, 1) = 1;
  EXPECT_THROW(CoefficientMatrix::from_dense(d), ConfigError);  // unequal sparsity
  EXPECT_THROW(CoefficientMatrix(4, 2, {{0, 0}}, {{1, 1}}), ConfigError);
  EXPECT_THROW(CoefficientMatrix(4, 2, {{0, 1}}, {{1, 2}}), ConfigError);
}

TEST(Dictionary, RejectsNonUnitColumns) {
  Matrix d = Matrix::Identity(3, 4);
  d(0, 3) = 2;
  EXPECT_THROW(Dictionary{d}, ConfigError);
  d(0, 3) = 0.6;
  d(1, 3) = 0.8;
  EXPECT_NO_THROW(Dictionary{d});
  EXPECT_THROW(Dictionary::normalized(Matrix::Zero(3, 1)), NumericalError);
}

TEST(Synthesize, SingleTermSamples) {
  const auto d = gen_dictionary(config(5, 9, 1, 2, 21));
  const CoefficientMatrix x(9, 1, {{4}, {7}}, {{1}, {-1}});
  const auto y = synthesize(d, x);
  EXPECT_EQ(y.sample(0), d.column(4));
  EXPECT_EQ(y.sample(1), -d.column(7));
}

TEST(Synthesize, DimensionMismatch) {
  const auto d = gen_dictionary(config(5, 9, 1, 2, 21));
  const CoefficientMatrix x(10, 1, {{4}}, {{1}});
  EXPECT_THROW(synthesize(d, x), DimensionError);
}

TEST(Synthesize, Reconstruction) {
  const auto inst = generate(config(16, 32, 4, 300, 8));
  const Matrix r = inst.Y.matrix() - inst.D.matrix() * inst.X.dense();
  EXPECT_LT(r.norm(), 1e-9 * inst.Y.matrix().norm());
  ASSERT_TRUE(inst.Y.origin().has_value());
  EXPECT_TRUE(*inst.Y.origin() == inst.config);
}

TEST(Synthesize, SampleNormsNearSqrtS) {
  const auto inst = generate(config(16, 32, 4, 10, 1));
  for (Index i = 0; i < 10; ++i) {
    EXPECT_GE(inst.Y.sample(i).norm(), std::sqrt(4.0) / 2);
    EXPECT_LE(inst.Y.sample(i).norm(), 3 * std::sqrt(4.0) / 2);
  }
}

// ||y||² = xᵀ G_Ω x lies within the extreme eigenvalues of the support Gram.
TEST(Synthesize, NormWithinSupportIsometryBoundsProperty) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto inst = generate(config(12, 30, 3, 25, seed));
    for (Index i = 0; i < inst.X.N(); ++i) {
      const double delta = detail::subset_isometry_defect(inst.D.matrix(), inst.X.support(i));
      const double n2 = inst.Y.sample(i).squaredNorm();
      EXPECT_LE(n2, (1 + delta) * 3 + 1e-9);
      EXPECT_GE(n2, (1 - delta) * 3 - 1e-9);
    }
  }
}

TEST(Diagnose, OrthonormalDictionary) {
  const Dictionary d(Matrix::Identity(6, 6));
  const auto r = diagnose_dictionary(d, 2, 1.0, 50, 0);
  EXPECT_NEAR(r.ddt_deviation, 0.0, 1e-15);
  EXPECT_EQ(r.coherence, 0.0);
  EXPECT_NEAR(r.rip_estimate, 0.0, 1e-15);
  EXPECT_TRUE(r.passes);
}

TEST(Diagnose, DuplicateColumnCoherence) {
  Matrix m = gen_dictionary(config(6, 10, 2, 1, 3)).matrix();
  m.col(9) = m.col(2);
  const auto r = diagnose_dictionary(Dictionary(m), 2, 1.0, 10, 0);
  EXPECT_NEAR(r.coherence, 1.0, 1e-15);
}

TEST(Diagnose, Errors) {
  const auto d = gen_dictionary(config(6, 10, 2, 1, 3));
  EXPECT_THROW(diagnose_dictionary(d, 2, 1.0, 0, 0), ConfigError);
  EXPECT_THROW(diagnose_dictionary(d, 6, 1.0, 10, 0), ConfigError);
}

// Independent δ_2s: squared extreme singular values over all C(12,4) subsets,
// enumerated with bitmasks rather than the library's combination walk.
TEST(Diagnose, ExhaustiveRipMatchesBruteForce) {
  const auto d = gen_dictionary(config(8, 12, 2, 1, 19));
  double brute = 0;
  int subsets = 0;
  for (unsigned mask = 0; mask < (1u << 12); ++mask) {
    if (std::popcount(mask) != 4) continue;
    ++subsets;
    std::vector<Index> cols;
    for (Index k = 0; k < 12; ++k)
      if (mask & (1u << k)) cols.push_back(k);
    Eigen::JacobiSVD<Matrix> svd(d.matrix()(Eigen::all, cols));
    const auto& sv = svd.singularValues();
    brute = std::max({brute, sv(0) * sv(0) - 1.0, 1.0 - sv(3) * sv(3)});
  }
  ASSERT_EQ(subsets, 495);
  const auto r = diagnose_dictionary(d, 2, 1.0, 500, 0);
  EXPECT_TRUE(r.rip_exhaustive);
  EXPECT_EQ(r.subsets_examined, 495u);
  EXPECT_NEAR(r.rip_estimate, brute, 1e-12);

  const auto sampled = diagnose_dictionary(d, 2, 1.0, 100, 0);
  EXPECT_FALSE(sampled.rip_exhaustive);
  EXPECT_LE(sampled.rip_estimate, brute + 1e-12);
}

TEST(Diagnose, RipEstimateMonotoneInTrialsProperty) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto d = gen_dictionary(config(20, 40, 3, 1, seed));
    double prev = 0;
    for (std::size_t trials : {1u, 5u, 20u, 80u, 300u}) {
      const auto r = diagnose_dictionary(d, 3, 1.0, trials, seed);
      EXPECT_GE(r.rip_estimate, prev);
      prev = r.rip_estimate;
    }
  }
}

TEST(Diagnose, PassesIsConjunctionProperty) {
  const auto d = gen_dictionary(config(32, 64, 2, 1, 4));
  for (double B : {0.1, 0.5, 1.0, 2.0, 4.0, 8.0}) {
    const auto r = diagnose_dictionary(d, 2, B, 50, 1);
    EXPECT_GE(r.ddt_deviation, 0);
    EXPECT_GE(r.coherence, 0);
    EXPECT_GE(r.rip_estimate, 0);
    EXPECT_EQ(r.passes, r.passes_ddt && r.passes_coherence && r.passes_rip);
    EXPECT_EQ(r.passes_ddt, r.ddt_deviation <= B * std::sqrt(64.0) / std::sqrt(32.0));
    EXPECT_EQ(r.passes_coherence, r.coherence <= B * std::log(32.0) / std::sqrt(32.0));
  }
}
