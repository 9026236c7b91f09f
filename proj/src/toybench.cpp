#include "mbvs/toybench.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "mbvs/error.hpp"

namespace mbvs {

void ToyModel::validate() const {
  require(tau0 > 0.0 && tau1 > 0.0, "toy precisions must be positive");
  require(Y.size() >= 1, "toy model needs at least one observation");
}

double exact_toy_mlik(const ToyModel& m) {
  m.validate();
  // Sigma = a I + b J; Sherman-Morrison gives its inverse and determinant
  const double a = 1.0 / m.tau1, b = 1.0 / m.tau0;
  const double T = static_cast<double>(m.T());
  const double s = m.Y.sum();
  const double logdet = (T - 1.0) * std::log(a) + std::log(a + T * b);
  const double quad = (m.Y.squaredNorm() - b * s * s / (a + T * b)) / a;
  return -0.5 * T * std::log(2.0 * std::numbers::pi) - 0.5 * logdet - 0.5 * quad;
}

double laplace_toy_mlik(const ToyModel& m) {
  m.validate();
  LatentProblem p;
  p.fixed = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(m.T()), 1);
  p.fixed_names = {"z"};
  p.fields.structured.reset();
  p.fields.iid = false;
  p.likelihood = LikelihoodKind::gaussian;
  p.y_gaussian = m.Y;
  p.gaussian_precision = m.tau1;
  p.active.assign(m.T(), 1);
  LaplaceSettings settings;
  settings.tau_beta = m.tau0;
  return marginal_likelihood(p, settings).log_mlik;
}

double harmonic_mean_mlik(const ToyModel& m, std::int64_t W, std::uint64_t seed) {
  m.validate();
  require(W >= 1, "harmonic mean needs W >= 1");
  const double T = static_cast<double>(m.T());
  const double post_prec = m.tau0 + T * m.tau1;
  const double post_mean = m.tau1 * m.Y.sum() / post_prec;
  const double post_sd = 1.0 / std::sqrt(post_prec);
  const double c = 0.5 * T * std::log(m.tau1 / (2.0 * std::numbers::pi));
  const double ybar = m.Y.mean();
  const double ss = (m.Y.array() - ybar).square().sum();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(post_mean, post_sd);
  // running log-sum-exp of -log p(Y | z_i)
  double mx = -std::numeric_limits<double>::infinity();
  double acc = 0.0;
  for (std::int64_t i = 0; i < W; ++i) {
    const double z = normal(rng);
    const double ll = c - 0.5 * m.tau1 * (ss + T * (ybar - z) * (ybar - z));
    const double v = -ll;
    if (v > mx) {
      acc = acc * std::exp(mx - v) + 1.0;
      mx = v;
    } else {
      acc += std::exp(v - mx);
    }
  }
  return std::log(static_cast<double>(W)) - (mx + std::log(acc));
}

ToyModel simulate_toy(double tau0, double tau1, std::size_t T, std::uint64_t seed) {
  require(T >= 1, "toy model needs T >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ToyModel m{tau0, tau1, Eigen::VectorXd(static_cast<Eigen::Index>(T))};
  const double z = normal(rng) / std::sqrt(tau0);
  for (Eigen::Index t = 0; t < m.Y.size(); ++t) m.Y(t) = z + normal(rng) / std::sqrt(tau1);
  return m;
}

std::vector<ToyRow> toy_compare(const ToyCompareSettings& s) {
  std::vector<double> taus = s.tau0;
  std::sort(taus.begin(), taus.end());
  std::vector<ToyRow> rows;
  for (std::size_t r = 0; r < taus.size(); ++r) {
    ToyRow row;
    row.tau0 = taus[r];
    row.data_seed = s.data_seed + r;
    const auto model = simulate_toy(row.tau0, s.tau1, s.T, row.data_seed);
    row.exact = exact_toy_mlik(model);
    row.laplace = laplace_toy_mlik(model);
    for (auto seed : s.replicate_seeds) row.harmonic.push_back(harmonic_mean_mlik(model, s.W, seed));
    rows.push_back(std::move(row));
  }
  return rows;
}

StructureTable latent_structure_comparison(const Dataset& data,
                                           const std::vector<std::pair<std::string, ModelVector>>& models,
                                           const std::vector<LatentStructureSpec>& structures,
                                           const LaplaceSettings& settings) {
  require(!structures.empty(), "need at least one latent structure");
  StructureTable table;
  for (const auto& s : structures) table.structures.push_back("ig+" + s.name());
  for (const auto& [name, model] : models) {
    StructureRow row;
    row.name = name;
    row.model = model;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < structures.size(); ++k) {
      FieldConfig fields;
      fields.structured = structures[k];
      fields.iid = true;
      try {
        const auto problem = make_problem(data, model, fields);
        const double v = marginal_likelihood(problem, settings).log_mlik;
        row.log_mlik.emplace_back(v);
        row.errors.emplace_back();
        if (v > best) {
          best = v;
          row.best = static_cast<int>(k);
        }
      } catch (const NumericalError& e) {
        row.log_mlik.emplace_back(std::nullopt);
        row.errors.emplace_back(e.what());
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace mbvs
