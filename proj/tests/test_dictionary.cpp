#include <gtest/gtest.h>

#include <map>
#include <random>

#include "oracles.hpp"

using kmpc::build_dictionary;

TEST(Dictionary, SizesMatchModelDimensions) {
  EXPECT_EQ(build_dictionary(4, 3).size(), 35u);
  EXPECT_EQ(build_dictionary(8, 2).size(), 45u);
  EXPECT_EQ(build_dictionary(3, 0).size(), 1u);
  EXPECT_EQ(build_dictionary(4, 1).size(), 5u);
}

TEST(Dictionary, SizeFormulaAgainstBruteForce) {
  for (int q = 1; q <= 10; ++q) {
    for (int d = 0; d <= 5; ++d) {
      const auto k = static_cast<long>(build_dictionary(static_cast<std::size_t>(q), d).size());
      EXPECT_EQ(k, oracle::count_monomials(q, d)) << "q=" << q << " d=" << d;
      EXPECT_EQ(k, oracle::binomial(q + d, d)) << "q=" << q << " d=" << d;
    }
  }
}

TEST(Dictionary, OrderingConstantThenLinearThenGradedLex) {
  const auto d = build_dictionary(3, 3);
  const auto& e = d.exponents();
  EXPECT_EQ(e[0], (kmpc::Exponent{0, 0, 0}));
  EXPECT_EQ(e[1], (kmpc::Exponent{1, 0, 0}));
  EXPECT_EQ(e[2], (kmpc::Exponent{0, 1, 0}));
  EXPECT_EQ(e[3], (kmpc::Exponent{0, 0, 1}));
  EXPECT_EQ(e[4], (kmpc::Exponent{2, 0, 0}));
  EXPECT_EQ(e[5], (kmpc::Exponent{1, 1, 0}));
  for (std::size_t j = 1; j < e.size(); ++j) {
    const int dj = d.degree(j), dp = d.degree(j - 1);
    EXPECT_LE(dp, dj);
    if (dp == dj) EXPECT_TRUE(e[j - 1] > e[j]) << "entry " << j;
  }
  std::map<kmpc::Exponent, int> seen;
  for (const auto& x : e) EXPECT_EQ(seen[x]++, 0);
}

TEST(Dictionary, RejectsBadArguments) {
  EXPECT_THROW(build_dictionary(0, 2), kmpc::ValidationError);
  EXPECT_THROW(build_dictionary(2, -1), kmpc::ValidationError);
  EXPECT_THROW(kmpc::Dictionary(2, {{1, 0}, {0, 0}}), kmpc::ValidationError);
  EXPECT_THROW(kmpc::Dictionary(2, {{0, 0}, {0, 1}, {1, 0}}), kmpc::ValidationError);
  EXPECT_THROW(kmpc::Dictionary(2, {{0, 0}, {1, 0}}), kmpc::ValidationError);
  EXPECT_THROW(kmpc::Dictionary(2, {{0, 0, 0}}), kmpc::ValidationError);
}

TEST(Dictionary, LiftExamples) {
  const auto d22 = build_dictionary(2, 2);
  Eigen::VectorXd expect(6);
  expect << 1, 0, 0, 0, 0, 0;
  EXPECT_EQ(d22.lift(Eigen::Vector2d(0, 0)), expect);

  const auto d12 = build_dictionary(1, 2);
  EXPECT_EQ(d12.lift(Eigen::VectorXd::Constant(1, 2.0)), Eigen::Vector3d(1, 2, 4));

  const auto d33 = build_dictionary(3, 3);
  const Eigen::VectorXd ones = d33.lift(Eigen::Vector3d(1, 1, 1));
  EXPECT_EQ(ones.size(), 20);
  EXPECT_TRUE((ones.array() == 1.0).all());
}

TEST(Dictionary, LiftRejectsBadInput) {
  const auto d = build_dictionary(2, 2);
  EXPECT_THROW(d.lift(Eigen::Vector3d(1, 2, 3)), kmpc::ValidationError);
  EXPECT_THROW(d.lift(Eigen::Vector2d(1, std::nan(""))), kmpc::ValidationError);
  EXPECT_THROW(d.lift(Eigen::Vector2d(1, INFINITY)), kmpc::ValidationError);
}

TEST(Dictionary, LiftMatchesDirectPowers) {
  std::mt19937_64 rng(3);
  const auto d = build_dictionary(3, 4);
  const Eigen::MatrixXd Z = oracle::random_matrix(3, 10, rng, 2.0);
  const Eigen::MatrixXd ref = oracle::lift_pow(d, Z);
  EXPECT_LE((d.lift_columns(Z) - ref).norm(), 1e-12 * ref.norm());
}

TEST(Dictionary, ProjectExamples) {
  const auto d21 = build_dictionary(2, 1);
  EXPECT_EQ(d21.project(Eigen::Vector3d(1, 3, -4)), Eigen::Vector2d(3, -4));
  const auto d12 = build_dictionary(1, 2);
  EXPECT_EQ(d12.project(Eigen::Vector3d(1, 5, 25)), Eigen::VectorXd::Constant(1, 5.0));
  EXPECT_THROW(build_dictionary(3, 0).project(Eigen::VectorXd::Ones(1)), kmpc::ValidationError);
  EXPECT_THROW(d21.project(Eigen::Vector2d(1, 2)), kmpc::ValidationError);
}

TEST(Dictionary, ProjectLiftIsExactIdentity) {
  std::mt19937_64 rng(11);
  for (int q = 1; q <= 5; ++q) {
    for (int deg = 1; deg <= 4; ++deg) {
      const auto d = build_dictionary(static_cast<std::size_t>(q), deg);
      for (int t = 0; t < 20; ++t) {
        const Eigen::VectorXd z = oracle::random_matrix(q, 1, rng, 10.0);
        EXPECT_EQ(d.project(d.lift(z)), z);
      }
    }
  }
}

TEST(Dictionary, LiftIsMultiplicativelyConsistent) {
  std::mt19937_64 rng(5);
  const auto d = build_dictionary(3, 4);
  std::map<kmpc::Exponent, std::size_t> index;
  for (std::size_t j = 0; j < d.size(); ++j) index[d.exponents()[j]] = j;
  for (int t = 0; t < 10; ++t) {
    const Eigen::VectorXd z = oracle::random_matrix(3, 1, rng, 1.5);
    const Eigen::VectorXd psi = d.lift(z);
    for (std::size_t a = 0; a < d.size(); ++a) {
      for (std::size_t b = 0; b < d.size(); ++b) {
        if (d.degree(a) + d.degree(b) > d.max_degree()) continue;
        kmpc::Exponent sum(3);
        for (int v = 0; v < 3; ++v) sum[v] = d.exponents()[a][v] + d.exponents()[b][v];
        const double lhs = psi(static_cast<Eigen::Index>(a)) * psi(static_cast<Eigen::Index>(b));
        EXPECT_NEAR(lhs, psi(static_cast<Eigen::Index>(index.at(sum))), 1e-12 * (1.0 + std::abs(lhs)));
      }
    }
  }
}

TEST(Dictionary, CustomThinnedBasis) {
  const kmpc::Dictionary d(2, {{0, 0}, {1, 0}, {0, 1}, {2, 0}});
  EXPECT_EQ(d.max_degree(), 2);
  EXPECT_EQ(d.lift(Eigen::Vector2d(3, 2)), Eigen::Vector4d(1, 3, 2, 9));
  EXPECT_FALSE(d == build_dictionary(2, 2));
  EXPECT_TRUE(build_dictionary(2, 2) == build_dictionary(2, 2));
}
