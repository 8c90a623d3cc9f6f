#include "support.hpp"

using namespace sporadic;
using sporadic::testing::config;

namespace {

/// Minimum of Σ cost(k, perm(k)) over injective maps rows -> cols, by brute force.
double brute_assignment(const Matrix& cost) {
  std::vector<Index> cols(static_cast<std::size_t>(cost.cols()));
  std::iota(cols.begin(), cols.end(), Index{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0;
    for (Index r = 0; r < cost.rows(); ++r) c += cost(r, cols[static_cast<std::size_t>(r)]);
    best = std::min(best, c);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

double assignment_cost(const Matrix& cost, const std::vector<Index>& a) {
  double c = 0;
  for (std::size_t r = 0; r < a.size(); ++r) c += cost(static_cast<Index>(r), a[r]);
  return c;
}

SupportEstimate truth_supports(const CoefficientMatrix& X) {
  std::vector<Index> samples(static_cast<std::size_t>(X.N()));
  std::iota(samples.begin(), samples.end(), Index{0});
  return SupportEstimate::from_omega(X.K(), samples, X.supports());
}

}  // namespace

TEST(Hungarian, HandBuiltThreeByThree) {
  Matrix c(3, 3);
  c << 4, 1, 3, 2, 0, 5, 3, 2, 2;
  const auto a = hungarian(c);
  EXPECT_DOUBLE_EQ(assignment_cost(c, a), brute_assignment(c));
  EXPECT_DOUBLE_EQ(assignment_cost(c, a), 5.0);
  EXPECT_THROW(hungarian(Matrix::Zero(3, 2)), DimensionError);
}

TEST(Hungarian, MatchesBruteForceProperty) {
  Engine eng(1);
  std::uniform_int_distribution<Index> size(1, 6);
  for (int trial = 0; trial < 200; ++trial) {
    const Index m = size(eng);
    const Index n = std::uniform_int_distribution<Index>(1, m)(eng);
    Matrix c = sporadic::testing::gaussian(n, m, eng).cwiseAbs();
    if (trial % 3 == 0) c = c.array().round();  // ties
    const auto a = hungarian(c);
    std::set<Index> used(a.begin(), a.end());
    EXPECT_EQ(static_cast<Index>(used.size()), n);
    EXPECT_NEAR(assignment_cost(c, a), brute_assignment(c), 1e-12);
  }
}

TEST(MatchColumns, RecoversPermutationAndSigns) {
  const auto D = gen_dictionary(config(6, 10, 2, 1, 3));
  std::vector<Index> perm{3, 7, 0, 9, 1, 2, 8, 4, 6, 5};
  Matrix est(6, 10);
  for (Index j = 0; j < 10; ++j) est.col(j) = (j % 2 ? -1.0 : 1.0) * D.column(perm[static_cast<std::size_t>(j)]);
  const auto m = match_columns(D, DictionaryEstimate(est));
  for (Index j = 0; j < 10; ++j) {
    const auto k = static_cast<std::size_t>(perm[static_cast<std::size_t>(j)]);
    EXPECT_EQ(m.pi[k], j);
    EXPECT_EQ(m.theta[k], j % 2 ? -1 : 1);
    EXPECT_NEAR(m.error[k], 0.0, 1e-12);
  }
  EXPECT_TRUE(m.unmatched.empty());
  EXPECT_TRUE(m.surplus.empty());
  EXPECT_NEAR(angular_accuracy(m), 1.0, 1e-12);
}

TEST(MatchColumns, MissingAndSurplusColumns) {
  const auto D = gen_dictionary(config(6, 10, 2, 1, 3));
  Matrix fewer = D.matrix().leftCols(9);
  const auto m = match_columns(D, DictionaryEstimate(fewer));
  EXPECT_EQ(m.unmatched, std::vector<Index>{9});
  EXPECT_EQ(m.matched_count(), 9);

  Matrix more(6, 11);
  more << D.matrix(), Vector::Unit(6, 0);
  const auto m2 = match_columns(D, DictionaryEstimate(more));
  EXPECT_EQ(m2.surplus.size(), 1u);
  EXPECT_TRUE(m2.unmatched.empty());

  auto absent = DictionaryEstimate(D.matrix());
  absent.columns.col(4).setConstant(std::numeric_limits<double>::quiet_NaN());
  absent = DictionaryEstimate(absent.columns);
  EXPECT_FALSE(absent.has(4));
  const auto m3 = match_columns(D, absent);
  EXPECT_EQ(m3.unmatched, std::vector<Index>{4});
}

TEST(MatchColumns, EmptyEstimate) {
  const auto D = gen_dictionary(config(6, 10, 2, 1, 3));
  const auto m = match_columns(D, DictionaryEstimate(Matrix(6, 0)));
  EXPECT_EQ(m.unmatched.size(), 10u);
  EXPECT_THROW(angular_accuracy(m), ConfigError);
  EXPECT_TRUE(std::isnan(mean_column_error(m)));
}

TEST(MatchColumns, ExactAgreesWithBruteForceForSmallK) {
  Engine eng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const Index K = 2 + trial % 5;
    const Index Kh = 1 + trial % 6;
    const Matrix D = Dictionary::normalized(sporadic::testing::gaussian(4, K, eng)).matrix();
    const Matrix E = sporadic::testing::gaussian(4, Kh, eng);
    const auto m = match_columns(D, DictionaryEstimate(E));
    Matrix cost(K, Kh);
    for (Index k = 0; k < K; ++k)
      for (Index j = 0; j < Kh; ++j)
        cost(k, j) = std::min((D.col(k) - E.col(j)).squaredNorm(), (D.col(k) + E.col(j)).squaredNorm());
    const double best = K <= Kh ? brute_assignment(cost) : brute_assignment(cost.transpose());
    EXPECT_NEAR(m.total_cost, best, 1e-9);
    const auto g = match_columns(D, DictionaryEstimate(E), MatchMode::greedy);
    EXPECT_GE(g.total_cost, m.total_cost - 1e-12);
    EXPECT_EQ(g.matched_count(), std::min(K, Kh));
  }
}

TEST(MatchColumns, CostInvariantUnderRelabelingProperty) {
  Engine eng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix D = Dictionary::normalized(sporadic::testing::gaussian(5, 7, eng)).matrix();
    const Matrix E = D + 0.3 * sporadic::testing::gaussian(5, 7, eng);
    std::vector<Index> p(7);
    std::iota(p.begin(), p.end(), Index{0});
    std::shuffle(p.begin(), p.end(), eng);
    Matrix E2(5, 7);
    for (Index j = 0; j < 7; ++j) E2.col(j) = (eng() & 1 ? -1.0 : 1.0) * E.col(p[static_cast<std::size_t>(j)]);
    EXPECT_NEAR(match_columns(D, DictionaryEstimate(E)).total_cost,
                match_columns(D, DictionaryEstimate(E2)).total_cost, 1e-10);
  }
}

TEST(AngularAccuracy, ClosedForms) {
  const Matrix D = Matrix::Identity(3, 3);
  EXPECT_NEAR(angular_accuracy(match_columns(D, DictionaryEstimate(Matrix(Vector::Unit(3, 1))))), 1.0, 1e-15);

  Matrix one = D.leftCols(1);
  const Matrix orth = D.col(1);
  const auto m = match_columns(Matrix(one), DictionaryEstimate(orth));
  EXPECT_NEAR(angular_accuracy(m), 0.0, 1e-15);

  const Vector d = Vector::Unit(3, 0);
  const Vector pert = (d + 0.1 * Vector::Unit(3, 2)).normalized();
  const auto m2 = match_columns(Matrix(d), DictionaryEstimate(Matrix(pert)));
  EXPECT_NEAR(angular_accuracy(m2), 1.0 / std::sqrt(1.01), 1e-12);
  EXPECT_NEAR(1.0 / std::sqrt(1.01), 0.99504, 1e-5);
}

TEST(AngularAccuracy, NormalizesButErrorUsesRawColumn) {
  const Vector d = Vector::Unit(4, 2);
  const auto m = match_columns(Matrix(d), DictionaryEstimate(Matrix(-2.0 * d)));
  EXPECT_NEAR(m.angular[0], 1.0, 1e-15);
  EXPECT_NEAR(m.error[0], 1.0, 1e-15);
  EXPECT_EQ(m.theta[0], -1);
}

TEST(AngularAccuracy, SquaredErrorIdentityProperty) {
  Engine eng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector a = sporadic::testing::gaussian(6, 1, eng).normalized();
    const Vector b = sporadic::testing::gaussian(6, 1, eng).normalized();
    const auto m = match_columns(Matrix(a), DictionaryEstimate(Matrix(b)));
    EXPECT_NEAR(m.error[0] * m.error[0], 2.0 - 2.0 * m.angular[0], 1e-9);
    EXPECT_GE(m.error[0], 0.0);
    EXPECT_LE(m.error[0], 2.0);
  }
}

TEST(FalseRecovery, Arithmetic) {
  RecoveryLedger l;
  for (int b = 0; b < 25; ++b) l.add(b % 2 ? BlockTruth::unique : BlockTruth::none, b % 2 ? b : -1, b % 2 == 1);
  EXPECT_EQ(false_recovery_rate(l), 0.0);
  l.returned[4] = true;  // a no-element block returning a vector
  EXPECT_NEAR(false_recovery_rate(l), 0.04, 1e-15);
  l.returned[3] = false;  // a unique-element block returning none
  EXPECT_EQ(l.false_recoveries(), 2);
  l.add(BlockTruth::multiple, -1, true);
  EXPECT_EQ(l.false_recoveries(), 2);
  EXPECT_THROW(false_recovery_rate(RecoveryLedger{}), ConfigError);
}

TEST(FalseRecovery, CorrectBlocksNeverRaiseRateProperty) {
  Engine eng(10);
  for (int trial = 0; trial < 50; ++trial) {
    RecoveryLedger l;
    for (int b = 0; b < 10; ++b) {
      const bool unique = eng() & 1;
      l.add(unique ? BlockTruth::unique : BlockTruth::none, unique ? b : -1, eng() & 1);
    }
    const double before = false_recovery_rate(l);
    EXPECT_GE(before, 0.0);
    EXPECT_LE(before, 1.0);
    l.add(BlockTruth::unique, 3, true);
    EXPECT_LE(false_recovery_rate(l), before);
  }
}

TEST(FalseRecovery, LedgerFromCoverAndOutcomes) {
  const std::vector<std::vector<Index>> sup{{1, 2}, {2, 5}, {0, 3}, {4, 6}, {1, 4}, {1, 4}};
  const auto cover = blocks_cover_all(sup, 2, 6, 8);
  std::vector<BlockOutcome> out(3);
  out[0].returned = true;   // unique {2}, found
  out[1].returned = true;   // empty, spurious vector
  out[2].returned = false;  // shares {1,4}, nothing returned
  const auto l = RecoveryLedger::from(cover, out);
  EXPECT_EQ(l.truth[0], BlockTruth::unique);
  EXPECT_EQ(l.element[0], 2);
  EXPECT_EQ(l.truth[1], BlockTruth::none);
  EXPECT_EQ(l.truth[2], BlockTruth::multiple);
  EXPECT_EQ(l.false_recoveries(), 1);
  out.pop_back();
  EXPECT_THROW(RecoveryLedger::from(cover, out), DimensionError);
}

TEST(SupportSignMetrics, ExactEstimates) {
  const auto x = gen_coefficients(config(8, 20, 3, 100, 4));
  const auto est = truth_supports(x);
  std::vector<std::vector<int>> signs(20);
  for (Index k = 0; k < 20; ++k)
    for (Index i : est.members[static_cast<std::size_t>(k)]) signs[static_cast<std::size_t>(k)].push_back(x.value(i, k));
  const auto r = support_sign_metrics(x, est, signs);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
  EXPECT_EQ(r.sign_rate, 1.0);
  EXPECT_EQ(r.exact_fraction, 1.0);
  EXPECT_FALSE(r.precision_undefined);
}

TEST(SupportSignMetrics, EmptyEstimates) {
  const auto x = gen_coefficients(config(8, 20, 3, 10, 4));
  std::vector<Index> samples(10);
  std::iota(samples.begin(), samples.end(), Index{0});
  const auto est = SupportEstimate::from_omega(20, samples, std::vector<std::vector<Index>>(10));
  const auto r = support_sign_metrics(x, est);
  EXPECT_EQ(r.recall, 0.0);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_TRUE(r.precision_undefined);
  EXPECT_EQ(r.sample_precision[0], 1.0);
}

TEST(SupportSignMetrics, OneFlippedSignInThousand) {
  // 1000 samples of sparsity 1 all using column 0.
  std::vector<std::vector<Index>> sup(1000, {0});
  std::vector<std::vector<int>> sg(1000, {1});
  const CoefficientMatrix x(2, 1, sup, sg);
  const auto est = truth_supports(x);
  std::vector<std::vector<int>> signs{std::vector<int>(1000, 1), {}};
  signs[0][500] = -1;
  EXPECT_NEAR(support_sign_metrics(x, est, signs).sign_rate, 0.999, 1e-15);
}

TEST(SupportSignMetrics, RelabelThroughMatching) {
  // Estimate columns are the truth reversed and negated.
  const auto D = gen_dictionary(config(6, 10, 2, 1, 5));
  const auto x = gen_coefficients(config(6, 10, 2, 60, 5));
  Matrix est(6, 10);
  for (Index j = 0; j < 10; ++j) est.col(j) = -D.column(9 - j);
  const auto m = match_columns(D, DictionaryEstimate(est));
  std::vector<std::vector<Index>> omega;
  for (Index i = 0; i < 60; ++i) {
    std::vector<Index> o;
    for (Index k : x.support(i)) o.push_back(9 - k);
    omega.push_back(o);
  }
  std::vector<Index> samples(60);
  std::iota(samples.begin(), samples.end(), Index{0});
  const auto e = SupportEstimate::from_omega(10, samples, omega);
  std::vector<std::vector<int>> signs(10);
  for (Index j = 0; j < 10; ++j)
    for (Index i : e.members[static_cast<std::size_t>(j)]) signs[static_cast<std::size_t>(j)].push_back(-x.value(i, 9 - j));
  const auto [re, rs] = relabel(e, signs, m);
  const auto r = support_sign_metrics(x, re, rs);
  EXPECT_EQ(r.exact_fraction, 1.0);
  EXPECT_EQ(r.sign_rate, 1.0);
}
