#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "irbridge/alignment.hpp"
#include "irbridge/error.hpp"

namespace irbridge {
namespace {

using Rows = std::vector<std::vector<double>>;

double kernel_ref(const std::vector<double>& x, const std::vector<double>& y, double alpha, double gamma) {
  double dot = 0, sq = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    dot += x[k] * y[k];
    sq += (x[k] - y[k]) * (x[k] - y[k]);
  }
  return alpha * dot + (1 - alpha) * std::exp(-gamma * sq);
}

double mmd_ref(const Rows& s, const Rows& v, double alpha, double gamma) {
  auto mean_k = [&](const Rows& a, const Rows& b) {
    double t = 0;
    for (const auto& x : a)
      for (const auto& y : b) t += kernel_ref(x, y, alpha, gamma);
    return t / static_cast<double>(a.size() * b.size());
  };
  return mean_k(s, s) + mean_k(v, v) - 2 * mean_k(s, v);
}

Matrix<double> to_matrix(const Rows& r) {
  Matrix<double> m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r[0].size()));
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < r[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r[i][j];
  return m;
}

Rows random_rows(std::mt19937_64& rng, int n, int d, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Rows out(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(d)));
  for (auto& r : out)
    for (auto& e : r) e = g(rng);
  return out;
}

TEST(Kernel, HandExamples) {
  const std::vector<double> e1 = {1, 0}, e2 = {0, 1};
  EXPECT_DOUBLE_EQ(composite_kernel<double>(e1, e1, {0.8, 0.005}), 1.0);
  EXPECT_DOUBLE_EQ(composite_kernel<double>(e1, e2, {1.0, 0.005}), 0.0);
  EXPECT_NEAR(composite_kernel<double>(e1, e2, {0.0, 0.5}), 0.367879, 1e-6);
  EXPECT_THROW(composite_kernel<double>(e1, std::vector<double>{1, 0, 0}, {0.8, 0.005}), Error);
}

TEST(Kernel, ConfigValidation) {
  EXPECT_THROW((KernelConfig{1.5, 0.1}.validate()), Error);
  EXPECT_THROW((KernelConfig{0.5, 0.0}.validate()), Error);
  EXPECT_NO_THROW((KernelConfig{0.0, 1.0}.validate()));
}

TEST(Mmd, HandExamples) {
  const Rows s = {{1, 0}}, v = {{0, 1}};
  EXPECT_NEAR(mmd_loss<double>(to_matrix(s), to_matrix(v), {1.0, 0.005}), 2.0, 1e-12);
  EXPECT_NEAR(mmd_loss<double>(to_matrix(s), to_matrix(v), {0.0, 0.5}), 1.264241, 1e-6);
  EXPECT_EQ(mmd_loss<double>(to_matrix(s), to_matrix(s), {0.8, 0.005}), 0.0);
}

TEST(Mmd, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> n_dist(1, 16), d_dist(1, 32);
  std::uniform_real_distribution<double> alpha(0.0, 1.0), gamma(1e-3, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = d_dist(rng);
    const Rows s = random_rows(rng, n_dist(rng), d), v = random_rows(rng, n_dist(rng), d);
    const KernelConfig c{alpha(rng), gamma(rng)};
    const double got = mmd_loss<double>(to_matrix(s), to_matrix(v), c);
    EXPECT_NEAR(got, mmd_ref(s, v, c.alpha, c.gamma), 1e-10);
    EXPECT_NEAR(got, mmd_oracle(s, v, c), 1e-10);
  }
}

TEST(Mmd, LinearKernelIsMeanGap) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix<double> s = to_matrix(random_rows(rng, 7, 5));
    const Matrix<double> v = to_matrix(random_rows(rng, 4, 5));
    const double gap = (s.colwise().mean() - v.colwise().mean()).squaredNorm();
    EXPECT_NEAR(mmd_loss<double>(s, v, {1.0, 0.3}), gap, 1e-10);
  }
}

TEST(Mmd, SymmetryPermutationNonnegativity) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const KernelConfig c{0.6, 0.2};
    Rows s = random_rows(rng, 9, 6), v = random_rows(rng, 5, 6);
    const double base = mmd_loss<double>(to_matrix(s), to_matrix(v), c);
    EXPECT_EQ(base, mmd_loss<double>(to_matrix(v), to_matrix(s), c));
    EXPECT_GE(base, -1e-9);
    std::shuffle(s.begin(), s.end(), rng);
    std::shuffle(v.begin(), v.end(), rng);
    EXPECT_EQ(base, mmd_loss<double>(to_matrix(s), to_matrix(v), c));
    Rows s2 = s;
    std::shuffle(s2.begin(), s2.end(), rng);
    EXPECT_EQ(mmd_loss<double>(to_matrix(s), to_matrix(s2), c), 0.0);
  }
}

TEST(Mmd, EmptyAndMismatchedBatchesRejected) {
  const Matrix<double> a = Matrix<double>::Ones(2, 3);
  try {
    mmd_loss<double>(Matrix<double>(0, 3), a, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyBatch);
  }
  try {
    mmd_loss<double>(a, Matrix<double>::Ones(2, 4), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDimensionMismatch);
  }
}

TEST(Gram, PositiveSemidefinite) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> n_dist(1, 8);
  std::uniform_real_distribution<double> alpha(0.0, 1.0), gamma(1e-3, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix<double> x = to_matrix(random_rows(rng, n_dist(rng), 4));
    const Matrix<double> k = composite_gram<double>(x, x, {alpha(rng), gamma(rng)});
    const Eigen::MatrixXd sym = k;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8);
  }
}

TEST(Gradient, ClosedFormMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const KernelConfig c{0.7, 0.3};
  Matrix<double> s = to_matrix(random_rows(rng, 5, 4)), v = to_matrix(random_rows(rng, 6, 4));
  const auto g = mmd_loss_with_grad<double>(s, v, c);
  EXPECT_NEAR(g.value, mmd_loss<double>(s, v, c), 1e-12);
  const double h = 1e-5;
  double worst = 0;
  for (Matrix<double>* m : {&s, &v}) {
    const Matrix<double>& analytic = m == &s ? g.d_s : g.d_v;
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      const double keep = m->data()[i];
      m->data()[i] = keep + h;
      const double up = mmd_loss<double>(s, v, c);
      m->data()[i] = keep - h;
      const double down = mmd_loss<double>(s, v, c);
      m->data()[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.data()[i];
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8}));
    }
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Gradient, TapeNodeMatchesClosedForm) {
  std::mt19937_64 rng(6);
  const KernelConfig c{0.4, 0.1};
  const Matrix<double> s = to_matrix(random_rows(rng, 3, 5)), v = to_matrix(random_rows(rng, 4, 5));
  Matrix<double> gs = Matrix<double>::Zero(3, 5), gv = Matrix<double>::Zero(4, 5);
  ad::Tape<double> tape;
  ad::Var loss = mmd_loss(tape, tape.parameter(s, &gs), tape.parameter(v, &gv), c);
  tape.backward(loss);
  const auto g = mmd_loss_with_grad<double>(s, v, c);
  EXPECT_NEAR(tape.value(loss)(0, 0), g.value, 1e-12);
  EXPECT_LT((gs - g.d_s).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((gv - g.d_v).cwiseAbs().maxCoeff(), 1e-12);
}

}  // namespace
}  // namespace irbridge
