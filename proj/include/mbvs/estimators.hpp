#pragma once

#include <map>
#include <vector>

#include "mbvs/mjmcmc.hpp"

namespace mbvs {

using ModelProbabilities = std::map<ModelVector, double>;

/// Renormalized probabilities over the visited set.
ModelProbabilities rm_model_probabilities(const ModelRegistry& registry);

/// Pooled visit frequencies after dropping the first burn_in fraction of each chain.
ModelProbabilities mcmc_model_probabilities(const std::vector<ChainHistory>& histories, double burn_in = 0.2);

std::vector<double> inclusion_probabilities(const ModelProbabilities& pmp, int d);

/// log sum over the registry of p(Y | model) p(model).
double total_log_evidence_mass(const ModelRegistry& registry);

struct PosteriorSummary {
  int d = 0;
  ModelProbabilities pmp;
  ModelProbabilities pmp_mcmc;
  std::vector<double> inclusion;
  std::vector<double> inclusion_mcmc;
  ModelVector mode_model;
  ModelVector median_model;
  double total_log_evidence_mass = 0.0;
};

/// Highest RM probability; ties go to fewer covariates, then lexicographic order.
ModelVector select_mode_model(const ModelProbabilities& pmp);
ModelVector median_probability_model(const std::vector<double>& inclusion);

PosteriorSummary summarize(const RunResult& run, int d, double burn_in = 0.2);
PosteriorSummary summarize(const ModelRegistry& registry, const std::vector<ChainHistory>& histories, int d,
                           double burn_in = 0.2);

}  // namespace mbvs
