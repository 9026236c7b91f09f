#include "mbvs/mjmcmc.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "mbvs/error.hpp"

namespace mbvs {

std::pair<int, int> ProposalConfig::jump_range(int d) const {
  const int lo = jump_min > 0 ? jump_min : static_cast<int>(std::ceil(0.25 * d));
  const int hi = jump_max > 0 ? jump_max : static_cast<int>(std::ceil(0.35 * d));
  return {std::max(lo, 1), std::min(std::max(hi, lo), d)};
}

void ProposalConfig::validate(int d) const {
  if (!(rho_large >= 0.0 && rho_large < 1.0)) throw ConfigError("rho_large must lie in [0, 1)");
  if (!(rho_randomize > 0.0 && rho_randomize < 1.0)) throw ConfigError("rho_randomize must lie in (0, 1)");
  if (local_max_steps < 1) throw ConfigError("local_max_steps must be at least 1");
  if (jump_min < 0 || jump_max < 0 || (jump_max > 0 && jump_max < jump_min) || jump_max > d) {
    throw ConfigError("jump sizes must satisfy 1 <= jump_min <= jump_max <= d");
  }
}

bool ModelRegistry::insert(MarginalLikelihoodRecord record) {
  if (index_.count(record.model)) return false;
  index_.emplace(record.model, records_.size());
  records_.push_back(std::move(record));
  return true;
}

const MarginalLikelihoodRecord* ModelRegistry::find(const ModelVector& model) const {
  auto it = index_.find(model);
  return it == index_.end() ? nullptr : &records_[it->second];
}

const MarginalLikelihoodRecord& EvidenceCache::get(const ModelVector& model) {
  std::promise<MarginalLikelihoodRecord> promise;
  std::shared_future<MarginalLikelihoodRecord> future;
  bool owner = false;
  {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(model);
    if (it == entries_.end()) {
      future = promise.get_future().share();
      entries_.emplace(model, future);
      owner = true;
    } else {
      future = it->second;
    }
  }
  if (owner) {
    try {
      promise.set_value(fn_(model));
    } catch (...) {
      promise.set_exception(std::current_exception());
    }
  }
  // the map never erases, so the shared state outlives this call
  return future.get();
}

std::size_t EvidenceCache::computed() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

EvidenceFunction make_dataset_evidence(const Dataset& data, const FieldConfig& fields, const LaplaceSettings& settings) {
  const int d = data.d();
  const auto null_problem = make_problem(data, ModelVector(d), fields);
  const auto null_fit = marginal_likelihood(null_problem, settings);
  std::vector<std::pair<std::string, double>> start;
  for (const auto& p : null_fit.eta_mode.params) start.emplace_back(p.name, p.theta);
  const double q = settings.prior.q;

  return [&data, fields, settings, start, q](const ModelVector& model) {
    MarginalLikelihoodRecord rec;
    rec.model = model;
    rec.log_prior = log_model_prior(model, q);
    try {
      const auto problem = make_problem(data, model, fields);
      auto init = default_hyperparameters(problem, settings);
      for (auto& p : init.params) {
        for (const auto& [name, theta] : start) {
          if (p.name == name && p.free) p.theta = theta;
        }
      }
      const auto fit = marginal_likelihood(problem, settings, init);
      rec.log_mlik = fit.log_mlik;
      rec.eta = fit.eta_mode;
      rec.warnings = fit.warnings;
      rec.ok = std::isfinite(fit.log_mlik);
      if (!rec.ok) rec.error = "non-finite marginal likelihood";
    } catch (const NumericalError& e) {
      rec.ok = false;
      rec.error = e.what();
    }
    return rec;
  };
}

ModelVector large_jump(const ModelVector& gamma, const ProposalConfig& cfg, Rng& rng) {
  const int d = gamma.dim();
  const auto [lo, hi] = cfg.jump_range(d);
  const int size = std::uniform_int_distribution<int>(lo, hi)(rng);
  std::vector<int> idx(static_cast<std::size_t>(d));
  std::iota(idx.begin(), idx.end(), 0);
  // partial Fisher-Yates: the first `size` entries are a uniform subset
  for (int i = 0; i < size; ++i) {
    const int j = std::uniform_int_distribution<int>(i, d - 1)(rng);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  ModelVector out = gamma;
  for (int i = 0; i < size; ++i) out.flip(idx[static_cast<std::size_t>(i)]);
  return out;
}

LocalSearchResult local_optimize(const ModelVector& start, const LogPosteriorOracle& oracle, const ProposalConfig& cfg,
                                 Rng& rng) {
  LocalSearchResult res{start, oracle(start), 0};
  const int d = start.dim();
  std::vector<int> order(static_cast<std::size_t>(d));
  for (int pass = 0; pass < cfg.local_max_steps; ++pass) {
    ++res.passes;
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    bool improved = false;
    for (int j : order) {
      const ModelVector cand = res.mode.flipped(j);
      const double lp = oracle(cand);
      if (lp > res.log_post) {
        res.mode = cand;
        res.log_post = lp;
        improved = true;
      }
    }
    if (!improved) break;
  }
  return res;
}

double randomization_log_density(const ModelVector& from, const ModelVector& to, double rho) {
  const int h = from.hamming(to);
  return h * std::log(rho) + (from.dim() - h) * std::log1p(-rho);
}

std::pair<ModelVector, double> randomize(const ModelVector& chi, double rho, Rng& rng) {
  require(rho > 0.0 && rho < 1.0, "randomization probability must lie in (0,1)");
  std::bernoulli_distribution flip(rho);
  ModelVector out = chi;
  for (int j = 0; j < chi.dim(); ++j) {
    if (flip(rng)) out.flip(j);
  }
  return {out, randomization_log_density(chi, out, rho)};
}

double acceptance_probability(double log_post_current, double log_post_proposal, double log_q_backward,
                              double log_q_forward) {
  if (log_post_proposal == -std::numeric_limits<double>::infinity()) return 0.0;
  if (log_post_current == -std::numeric_limits<double>::infinity()) return 1.0;
  const double r = log_post_proposal - log_post_current + log_q_backward - log_q_forward;
  if (std::isnan(r)) return 0.0;
  return r >= 0.0 ? 1.0 : std::exp(r);
}

void chain_step(ChainState& s, const LogPosteriorOracle& oracle, const ProposalConfig& cfg) {
  const int d = s.current.dim();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  ++s.iteration;
  if (cfg.rho_large > 0.0 && unif(s.rng) < cfg.rho_large) {
    ++s.mode_jump.proposed;
    const ModelVector chi0_star = large_jump(s.current, cfg, s.rng);
    const auto fwd = local_optimize(chi0_star, oracle, cfg, s.rng);
    const auto [proposal, log_q_fwd] = randomize(fwd.mode, cfg.rho_randomize, s.rng);
    const double lp = oracle(proposal);
    const ModelVector chi0 = large_jump(proposal, cfg, s.rng);
    const auto back = local_optimize(chi0, oracle, cfg, s.rng);
    const double log_q_back = randomization_log_density(back.mode, s.current, cfg.rho_randomize);
    const double a = acceptance_probability(s.log_post, lp, log_q_back, log_q_fwd);
    if (unif(s.rng) < a) {
      s.current = proposal;
      s.log_post = lp;
      ++s.mode_jump.accepted;
    }
    return;
  }
  ++s.single_flip.proposed;
  const int j = std::uniform_int_distribution<int>(0, d - 1)(s.rng);
  const ModelVector proposal = s.current.flipped(j);
  const double lp = oracle(proposal);
  if (unif(s.rng) < acceptance_probability(s.log_post, lp, 0.0, 0.0)) {
    s.current = proposal;
    s.log_post = lp;
    ++s.single_flip.accepted;
  }
}

namespace {

struct IterationLog {
  std::vector<ModelVector> touched;
  ModelVector state;
};

}  // namespace

RunResult run_chains(int d, const EvidenceFunction& evidence, const RunSettings& settings) {
  require(d >= 1 && d <= ModelVector::kMaxDim, "model dimension out of range");
  if (settings.n_chains < 1) throw ConfigError("n_chains must be at least 1");
  if (settings.seeds.size() != static_cast<std::size_t>(settings.n_chains)) {
    throw ConfigError("need exactly one seed per chain");
  }
  if (settings.stop.unique_models_target < 1 || settings.stop.max_iterations < 1) {
    throw ConfigError("stop criteria must be positive");
  }
  if (settings.batch_iterations < 1) throw ConfigError("batch_iterations must be at least 1");
  settings.proposal.validate(d);

  EvidenceCache cache(evidence);
  RunResult out;
  std::unordered_set<ModelVector, ModelVectorHash> failed;
  const auto n = static_cast<std::size_t>(settings.n_chains);

  std::vector<ChainState> chains(n);
  out.histories.resize(n);
  for (std::size_t c = 0; c < n; ++c) {
    ModelVector start = settings.start_models.size() == n ? settings.start_models[c] : ModelVector(d);
    require(start.dim() == d, "start model has the wrong dimension");
    const auto& rec = cache.get(start);
    if (!rec.ok) throw NumericalError("evidence failed at the start model " + start.to_string() + ": " + rec.error);
    chains[c].current = start;
    chains[c].log_post = rec.log_posterior();
    chains[c].rng.seed(settings.seeds[c]);
    out.histories[c].seed = settings.seeds[c];
    if (out.registry.size() < settings.stop.unique_models_target) out.registry.insert(rec);
  }
  if (out.registry.size() >= settings.stop.unique_models_target) {
    out.reached_target = true;
    return out;
  }

  std::vector<std::vector<IterationLog>> logs(n);
  auto advance = [&](std::size_t c) {
    auto& s = chains[c];
    auto& log = logs[c];
    log.clear();
    std::vector<ModelVector>* touched = nullptr;
    const LogPosteriorOracle oracle = [&](const ModelVector& m) {
      touched->push_back(m);
      return cache.get(m).log_posterior();
    };
    for (int b = 0; b < settings.batch_iterations && s.iteration < settings.stop.max_iterations; ++b) {
      log.emplace_back();
      touched = &log.back().touched;
      chain_step(s, oracle, settings.proposal);
      log.back().state = s.current;
    }
  };

  const int workers = std::max(1, std::min<int>(settings.threads, settings.n_chains));
  bool stop = false;
  while (!stop) {
    if (workers == 1) {
      for (std::size_t c = 0; c < n; ++c) advance(c);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::exception_ptr> errors(n);
      std::vector<std::jthread> pool;
      for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (std::size_t c; (c = next.fetch_add(1)) < n;) {
            try {
              advance(c);
            } catch (...) {
              errors[c] = std::current_exception();
            }
          }
        });
      }
      pool.clear();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }

    bool any_progress = false;
    for (std::size_t c = 0; c < n && !stop; ++c) {
      for (const auto& it : logs[c]) {
        std::size_t k = 0;
        for (; k < it.touched.size(); ++k) {
          const auto& m = it.touched[k];
          const auto& rec = cache.get(m);
          if (!rec.ok) {
            if (failed.insert(m).second) {
              ++out.failures;
              out.failure_log.push_back(m.to_string() + ": " + rec.error);
            }
            continue;
          }
          out.registry.insert(rec);
          if (out.registry.size() >= settings.stop.unique_models_target) break;
        }
        const bool complete = k >= it.touched.size() || k + 1 == it.touched.size();
        if (out.registry.size() >= settings.stop.unique_models_target) {
          stop = true;
          out.reached_target = true;
          if (!complete) break;
        }
        out.histories[c].states.push_back(it.state);
        ++out.total_iterations;
        any_progress = true;
        if (stop) break;
      }
    }

    const std::size_t evaluated = out.registry.size() + failed.size();
    if (evaluated >= 100 && static_cast<double>(failed.size()) > settings.max_failure_fraction * static_cast<double>(evaluated)) {
      std::ostringstream msg;
      msg << "evidence failed for " << failed.size() << " of " << evaluated << " models; first failures:";
      for (std::size_t i = 0; i < std::min<std::size_t>(5, out.failure_log.size()); ++i) msg << "\n  " << out.failure_log[i];
      throw NumericalError(msg.str());
    }
    if (!any_progress) stop = true;
  }
  for (std::size_t c = 0; c < n; ++c) {
    out.histories[c].single_flip = chains[c].single_flip;
    out.histories[c].mode_jump = chains[c].mode_jump;
  }
  return out;
}

}  // namespace mbvs
