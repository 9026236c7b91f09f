#include "mbvs/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mbvs/error.hpp"

namespace mbvs {

namespace {

double log_sum_exp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

double total_log_evidence_mass(const ModelRegistry& registry) {
  std::vector<double> lp;
  lp.reserve(registry.size());
  for (const auto& r : registry.records()) lp.push_back(r.log_posterior());
  return log_sum_exp(lp);
}

ModelProbabilities rm_model_probabilities(const ModelRegistry& registry) {
  require(!registry.empty(), "registry is empty");
  const double norm = total_log_evidence_mass(registry);
  require(std::isfinite(norm), "registry carries no finite evidence");
  ModelProbabilities out;
  for (const auto& r : registry.records()) out[r.model] = std::exp(r.log_posterior() - norm);
  return out;
}

ModelProbabilities mcmc_model_probabilities(const std::vector<ChainHistory>& histories, double burn_in) {
  require(burn_in >= 0.0 && burn_in < 1.0, "burn-in fraction must lie in [0,1)");
  std::map<ModelVector, std::int64_t> counts;
  std::int64_t total = 0;
  for (const auto& h : histories) {
    const auto skip = static_cast<std::size_t>(std::floor(burn_in * static_cast<double>(h.states.size())));
    for (std::size_t i = skip; i < h.states.size(); ++i) {
      ++counts[h.states[i]];
      ++total;
    }
  }
  ModelProbabilities out;
  if (total == 0) return out;
  for (const auto& [m, c] : counts) out[m] = static_cast<double>(c) / static_cast<double>(total);
  return out;
}

std::vector<double> inclusion_probabilities(const ModelProbabilities& pmp, int d) {
  std::vector<double> out(static_cast<std::size_t>(d), 0.0);
  for (const auto& [m, p] : pmp) {
    require(m.dim() == d, "model dimension mismatch");
    for (int j = 0; j < d; ++j) {
      if (m[j]) out[static_cast<std::size_t>(j)] += p;
    }
  }
  for (double& x : out) x = std::clamp(x, 0.0, 1.0);
  return out;
}

ModelVector select_mode_model(const ModelProbabilities& pmp) {
  require(!pmp.empty(), "no model probabilities");
  const ModelVector* best = nullptr;
  double best_p = -1.0;
  for (const auto& [m, p] : pmp) {
    if (!best || p > best_p || (p == best_p && (m.count() < best->count() || (m.count() == best->count() && m < *best)))) {
      best = &m;
      best_p = p;
    }
  }
  return *best;
}

ModelVector median_probability_model(const std::vector<double>& inclusion) {
  ModelVector m(static_cast<int>(inclusion.size()));
  for (std::size_t j = 0; j < inclusion.size(); ++j) m.set(static_cast<int>(j), inclusion[j] > 0.5);
  return m;
}

PosteriorSummary summarize(const ModelRegistry& registry, const std::vector<ChainHistory>& histories, int d,
                           double burn_in) {
  PosteriorSummary s;
  s.d = d;
  s.pmp = rm_model_probabilities(registry);
  s.pmp_mcmc = mcmc_model_probabilities(histories, burn_in);
  s.inclusion = inclusion_probabilities(s.pmp, d);
  s.inclusion_mcmc = inclusion_probabilities(s.pmp_mcmc, d);
  s.mode_model = select_mode_model(s.pmp);
  s.median_model = median_probability_model(s.inclusion);
  s.total_log_evidence_mass = total_log_evidence_mass(registry);
  return s;
}

PosteriorSummary summarize(const RunResult& run, int d, double burn_in) {
  return summarize(run.registry, run.histories, d, burn_in);
}

}  // namespace mbvs
