#pragma once

// Mode-jumping MCMC over binary model vectors. Ordinary iterations are
// single-flip Metropolis moves; with probability rho_large an iteration is a
// mode jump (large jump, greedy local search, randomization) accepted with the
// auxiliary-path ratio. All chains share one evidence cache and one registry.

#include <cstdint>
#include <functional>
#include <future>
#include <mutex>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mbvs/laplace.hpp"
#include "mbvs/model_core.hpp"

namespace mbvs {

using Rng = std::mt19937_64;

struct ProposalConfig {
  double rho_large = 0.05;
  int jump_min = 0;  // 0 selects ceil(0.25 d)
  int jump_max = 0;  // 0 selects ceil(0.35 d)
  int local_max_steps = 10;
  double rho_randomize = 0.1;

  std::pair<int, int> jump_range(int d) const;
  void validate(int d) const;
};

struct MarginalLikelihoodRecord {
  ModelVector model;
  bool ok = false;
  double log_mlik = -std::numeric_limits<double>::infinity();
  double log_prior = 0.0;
  Hyperparameters eta;
  std::vector<std::string> warnings;
  std::string error;

  double log_posterior() const { return ok ? log_mlik + log_prior : -std::numeric_limits<double>::infinity(); }
};

/// Visited models in first-insertion order; at most one record per model.
class ModelRegistry {
 public:
  /// Returns false (and leaves the registry unchanged) if the model is present.
  bool insert(MarginalLikelihoodRecord record);
  const MarginalLikelihoodRecord* find(const ModelVector& model) const;
  bool contains(const ModelVector& model) const { return index_.count(model) > 0; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<MarginalLikelihoodRecord>& records() const { return records_; }

 private:
  std::vector<MarginalLikelihoodRecord> records_;
  std::unordered_map<ModelVector, std::size_t, ModelVectorHash> index_;
};

using EvidenceFunction = std::function<MarginalLikelihoodRecord(const ModelVector&)>;

/// Thread-safe compute-once memo of the evidence function.
class EvidenceCache {
 public:
  explicit EvidenceCache(EvidenceFunction fn) : fn_(std::move(fn)) {}
  const MarginalLikelihoodRecord& get(const ModelVector& model);
  std::size_t computed() const;

 private:
  EvidenceFunction fn_;
  mutable std::mutex mutex_;
  std::unordered_map<ModelVector, std::shared_future<MarginalLikelihoodRecord>, ModelVectorHash> entries_;
};

/// Evidence of a model on a dataset: marginal likelihood under the field
/// configuration plus the Bernoulli model prior. Hyperparameters start from
/// the null model's optimum so results do not depend on evaluation order.
EvidenceFunction make_dataset_evidence(const Dataset& data, const FieldConfig& fields, const LaplaceSettings& settings);

/// Log posterior oracle used by the kernels; records every model it sees.
using LogPosteriorOracle = std::function<double(const ModelVector&)>;

ModelVector large_jump(const ModelVector& gamma, const ProposalConfig& cfg, Rng& rng);

struct LocalSearchResult {
  ModelVector mode;
  double log_post = 0.0;
  int passes = 0;
};
LocalSearchResult local_optimize(const ModelVector& start, const LogPosteriorOracle& oracle, const ProposalConfig& cfg,
                                 Rng& rng);

/// log q_r(to | from) for independent per-bit flips with probability rho.
double randomization_log_density(const ModelVector& from, const ModelVector& to, double rho);
std::pair<ModelVector, double> randomize(const ModelVector& chi, double rho, Rng& rng);

/// min{1, exp(log pi* - log pi + log q_back - log q_fwd)}; 0 if the proposal is impossible.
double acceptance_probability(double log_post_current, double log_post_proposal, double log_q_backward,
                              double log_q_forward);

struct KernelStats {
  std::int64_t proposed = 0;
  std::int64_t accepted = 0;
};

struct ChainState {
  ModelVector current;
  double log_post = 0.0;
  std::int64_t iteration = 0;
  Rng rng;
  KernelStats single_flip;
  KernelStats mode_jump;
};

/// One iteration of the mixed kernel, in place.
void chain_step(ChainState& state, const LogPosteriorOracle& oracle, const ProposalConfig& cfg);

struct StopCriteria {
  std::size_t unique_models_target = 10000;
  std::int64_t max_iterations = 1000000;  // per chain
};

struct RunSettings {
  int n_chains = 1;
  std::vector<std::uint64_t> seeds;  // one per chain
  StopCriteria stop;
  ProposalConfig proposal;
  int threads = 1;
  int batch_iterations = 16;  // iterations per chain between registry merges
  double max_failure_fraction = 0.01;
  std::vector<ModelVector> start_models;  // empty: null model for every chain
};

struct ChainHistory {
  std::uint64_t seed = 0;
  std::vector<ModelVector> states;  // state after each iteration
  KernelStats single_flip;
  KernelStats mode_jump;
};

struct RunResult {
  ModelRegistry registry;
  std::vector<ChainHistory> histories;
  std::size_t failures = 0;
  std::vector<std::string> failure_log;
  bool reached_target = false;
  std::int64_t total_iterations = 0;
};

/// Runs the chains in lockstep batches. Within a batch chains advance
/// independently against the shared cache; models are then merged into the
/// registry in chain order so that the registry and histories depend only on
/// the seeds. The run stops exactly at unique_models_target.
RunResult run_chains(int d, const EvidenceFunction& evidence, const RunSettings& settings);

}  // namespace mbvs
