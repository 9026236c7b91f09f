#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numbers>
#include <random>

#include "mbvs/toybench.hpp"
#include "oracles.hpp"

using namespace mbvs;

namespace {

// Dense multivariate normal log density of Y under N(0, I/tau1 + J/tau0).
double dense_toy(const ToyModel& m) {
  const auto T = static_cast<Eigen::Index>(m.T());
  Eigen::MatrixXd S = Eigen::MatrixXd::Identity(T, T) / m.tau1 + Eigen::MatrixXd::Constant(T, T, 1.0 / m.tau0);
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  const Eigen::MatrixXd L = llt.matrixL();
  return -0.5 * T * std::log(2 * std::numbers::pi) - L.diagonal().array().log().sum() - 0.5 * m.Y.dot(llt.solve(m.Y));
}

}  // namespace

TEST_CASE("exact toy evidence worked values") {
  ToyModel a{1.0, 1.0, Eigen::VectorXd::Zero(1)};
  CHECK(exact_toy_mlik(a) == doctest::Approx(-0.5 * std::log(4 * std::numbers::pi)).epsilon(1e-14));
  CHECK(exact_toy_mlik(a) == doctest::Approx(-1.26551).epsilon(1e-5));
  ToyModel b{1.0, 1.0, Eigen::VectorXd::Zero(2)};
  CHECK(exact_toy_mlik(b) == doctest::Approx(-2.38719).epsilon(1e-5));
}

TEST_CASE("exact toy evidence against dense algebra, permutation invariant") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 30; ++rep) {
    const double tau0 = std::exp(3 * nd(rng)), tau1 = std::exp(nd(rng));
    const auto T = static_cast<Eigen::Index>(1 + rng() % 50);
    ToyModel m{tau0, tau1, Eigen::VectorXd::NullaryExpr(T, [&] { return 2 * nd(rng); })};
    CHECK(exact_toy_mlik(m) == doctest::Approx(dense_toy(m)).epsilon(1e-11));
    CHECK(laplace_toy_mlik(m) == doctest::Approx(exact_toy_mlik(m)).epsilon(1e-9));
    ToyModel p = m;
    std::reverse(p.Y.begin(), p.Y.end());
    std::shuffle(p.Y.begin(), p.Y.end(), rng);
    CHECK(exact_toy_mlik(p) == doctest::Approx(exact_toy_mlik(m)).epsilon(1e-13));
  }
}

TEST_CASE("harmonic mean with one draw is the likelihood at that draw") {
  ToyModel m{0.5, 2.0, Eigen::Vector2d(0.3, -0.4)};
  // with a single draw, the estimator is log p(Y | z1); reconstruct z1 from it
  const double hm = harmonic_mean_mlik(m, 1, 7);
  // log p(Y|z) is quadratic in z with maximum at mean(Y)
  const double ybar = m.Y.mean();
  const double base = -std::log(2 * std::numbers::pi / m.tau1) - 0.5 * m.tau1 * (m.Y.array() - ybar).square().sum();
  CHECK(hm <= base + 1e-12);
  // deterministic per seed
  CHECK(harmonic_mean_mlik(m, 1, 7) == hm);
  CHECK(harmonic_mean_mlik(m, 1000, 7) != harmonic_mean_mlik(m, 1000, 8));
}

TEST_CASE("harmonic mean converges for an informative prior") {
  auto m = simulate_toy(0.1, 1.0, 2, 3);
  const double exact = exact_toy_mlik(m);
  std::vector<double> err3, err5;
  for (std::uint64_t s = 0; s < 20; ++s) {
    err3.push_back(std::abs(harmonic_mean_mlik(m, 1000, 100 + s) - exact));
    err5.push_back(std::abs(harmonic_mean_mlik(m, 100000, 100 + s) - exact));
  }
  std::sort(err3.begin(), err3.end());
  std::sort(err5.begin(), err5.end());
  CHECK(err5[10] < err3[10]);
}

TEST_CASE("toy comparison layout") {
  ToyCompareSettings s;
  s.W = 20000;
  s.tau0 = {10.0, 0.001, 0.1};
  auto rows = toy_compare(s);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].tau0 == 0.001);
  CHECK(rows[1].tau0 == 0.1);
  CHECK(rows[2].tau0 == 10.0);
  double worst = 0.0;
  std::size_t worst_row = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].harmonic.size() == 5);
    CHECK(std::abs(rows[i].laplace - rows[i].exact) < 1e-6);
    for (double h : rows[i].harmonic) {
      if (std::abs(h - rows[i].exact) > worst) {
        worst = std::abs(h - rows[i].exact);
        worst_row = i;
      }
    }
  }
  CHECK(worst_row == 0);
}

TEST_CASE("latent structure table") {
  auto data = oracle::small_dataset(150, 3, 61);
  std::vector<LatentStructureSpec> structures = {LatentStructureSpec::rw1(), LatentStructureSpec::ou(),
                                                 LatentStructureSpec::ar(1)};
  auto table = latent_structure_comparison(
      data, {{"FULL", ModelVector::full(3)}, {"NULL", ModelVector(3)}}, structures, LaplaceSettings{});
  REQUIRE(table.rows.size() == 2);
  CHECK(table.structures == std::vector<std::string>{"ig+rw1", "ig+ou", "ig+ar1"});
  for (const auto& row : table.rows) {
    REQUIRE(row.log_mlik.size() == 3);
    double best = -INFINITY;
    int arg = -1;
    for (std::size_t j = 0; j < 3; ++j) {
      REQUIRE(row.log_mlik[j].has_value());
      if (*row.log_mlik[j] > best) {
        best = *row.log_mlik[j];
        arg = static_cast<int>(j);
      }
    }
    CHECK(row.best == arg);
  }
  // the NULL row uses the same covariates in every column; its RW1 cell is the plain NULL evidence
  auto null_rw1 = marginal_likelihood(make_problem(data, ModelVector(3)), LaplaceSettings{}).log_mlik;
  CHECK(*table.rows[1].log_mlik[0] == doctest::Approx(null_rw1).epsilon(1e-12));
}
