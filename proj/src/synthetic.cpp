#include "mbvs/synthetic.hpp"

#include <cmath>
#include <random>

#include <json.hpp>

#include "mbvs/error.hpp"

namespace mbvs {

void SyntheticSpec::validate() const {
  if (T < 2) throw ConfigError("synthetic T must be at least 2");
  if (!(tau_eps > 0.0) || !(tau_zeta > 0.0)) throw ConfigError("synthetic field precisions must be positive");
  if (!(low_coverage_fraction >= 0.0 && low_coverage_fraction < 1.0)) {
    throw ConfigError("low_coverage_fraction must lie in [0, 1)");
  }
  if (!(extra_reads_mean >= 0.0)) throw ConfigError("extra_reads_mean must be non-negative");
  if (read_threshold < 1) throw ConfigError("read_threshold must be at least 1");
}

SyntheticData simulate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::geometric_distribution<int> gap(0.2);
  std::poisson_distribution<int> extra(spec.extra_reads_mean > 0.0 ? spec.extra_reads_mean : 1.0);

  SyntheticData out;
  auto& sites = out.sites;
  sites.resize(spec.T);
  std::int64_t pos = 1000;
  for (auto& s : sites) {
    const int dist = 1 + gap(rng);
    pos += dist;
    s.position = pos;
    s.dist_prev_c = dist;
    const double u = unif(rng);
    s.context = u < 0.2 ? Context::CGH : (u < 0.45 ? Context::CHG : Context::CHH);
    const double g = unif(rng);
    s.gene_group = g < 1.0 / 3.0 ? GeneGroup::Ma : (g < 2.0 / 3.0 ? GeneGroup::Mg : GeneGroup::Md);
    s.coding = unif(rng) < 0.4;
    s.strand = unif(rng) < 0.5 ? Strand::plus : Strand::minus;
    s.expression = std::exp(normal(rng));
    if (unif(rng) < spec.low_coverage_fraction) {
      s.n_reads = std::uniform_int_distribution<int>(0, 2)(rng);
    } else {
      s.n_reads = 3 + (spec.extra_reads_mean > 0.0 ? extra(rng) : 0);
    }
  }

  // encode with the same standardization the fit will use
  std::vector<char> mask(spec.T);
  for (std::size_t t = 0; t < spec.T; ++t) mask[t] = sites[t].n_reads >= spec.read_threshold ? 1 : 0;
  const auto design = encode_covariates(sites, {}, mask);

  auto& truth = out.truth;
  truth.spec = spec;
  truth.column_names = design.names;
  const int d = static_cast<int>(design.names.size());
  truth.model = ModelVector(d);
  truth.beta = Eigen::VectorXd::Zero(d);
  for (const auto& [name, value] : spec.coefficients) {
    int j = 0;
    while (j < d && design.names[static_cast<std::size_t>(j)] != name) ++j;
    if (j == d) throw ConfigError("unknown synthetic covariate '" + name + "'");
    truth.beta(j) = value;
    if (value != 0.0) truth.model.set(j, true);
  }

  const auto T = static_cast<Eigen::Index>(spec.T);
  truth.delta.resize(T);
  truth.zeta.resize(T);
  double level = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    if (t > 0) level += normal(rng) / std::sqrt(spec.tau_eps);
    truth.delta(t) = level;
  }
  truth.delta.array() -= truth.delta.mean();
  for (Eigen::Index t = 0; t < T; ++t) truth.zeta(t) = normal(rng) / std::sqrt(spec.tau_zeta);

  const Eigen::VectorXd eta = spec.intercept + (design.X * truth.beta).array() + truth.delta.array() + truth.zeta.array();
  for (Eigen::Index t = 0; t < T; ++t) {
    auto& s = sites[static_cast<std::size_t>(t)];
    std::binomial_distribution<int> binom(s.n_reads, logistic(eta(t)));
    s.y_methylated = s.n_reads > 0 ? binom(rng) : 0;
  }
  return out;
}

void write_truth_json(std::ostream& out, const SyntheticTruth& truth) {
  nlohmann::ordered_json j;
  j["seed"] = truth.spec.seed;
  j["T"] = truth.spec.T;
  j["intercept"] = truth.spec.intercept;
  j["tau_eps"] = truth.spec.tau_eps;
  j["tau_zeta"] = truth.spec.tau_zeta;
  j["low_coverage_fraction"] = truth.spec.low_coverage_fraction;
  j["extra_reads_mean"] = truth.spec.extra_reads_mean;
  j["read_threshold"] = truth.spec.read_threshold;
  j["model"] = truth.model.to_string();
  j["columns"] = truth.column_names;
  nlohmann::ordered_json active = nlohmann::ordered_json::object();
  for (std::size_t k = 0; k < truth.column_names.size(); ++k) {
    if (truth.model[static_cast<int>(k)]) active[truth.column_names[k]] = truth.beta(static_cast<Eigen::Index>(k));
  }
  j["active"] = active;
  j["delta"] = std::vector<double>(truth.delta.data(), truth.delta.data() + truth.delta.size());
  j["zeta"] = std::vector<double>(truth.zeta.data(), truth.zeta.data() + truth.zeta.size());
  out << j.dump(2) << '\n';
}

}  // namespace mbvs
