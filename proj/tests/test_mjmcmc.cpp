#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <map>
#include <thread>

#include "mbvs/error.hpp"
#include "mbvs/estimators.hpp"
#include "mbvs/mjmcmc.hpp"
#include "oracles.hpp"

using namespace mbvs;

namespace {

// Fixed log posterior table over all 2^d models.
struct Table {
  int d;
  std::vector<double> lp;

  Table(int dim, std::uint64_t seed, double spread) : d(dim), lp(std::size_t{1} << dim) {
    Rng rng(seed);
    std::normal_distribution<double> nd(0.0, spread);
    for (auto& v : lp) v = nd(rng);
  }
  EvidenceFunction evidence() const {
    return [this](const ModelVector& m) {
      MarginalLikelihoodRecord r;
      r.model = m;
      r.ok = true;
      r.log_mlik = lp[m.bits()];
      r.log_prior = 0.0;
      return r;
    };
  }
  std::vector<double> exact() const {
    const double z = oracle::log_sum_exp(lp);
    std::vector<double> p(lp.size());
    for (std::size_t i = 0; i < lp.size(); ++i) p[i] = std::exp(lp[i] - z);
    return p;
  }
};

double total_variation(const ModelProbabilities& est, const std::vector<double>& exact, int d) {
  double tv = 0.0;
  for (std::uint64_t b = 0; b < exact.size(); ++b) {
    auto it = est.find(ModelVector(d, b));
    tv += std::abs((it == est.end() ? 0.0 : it->second) - exact[b]);
  }
  return 0.5 * tv;
}

}  // namespace

TEST_CASE("default jump range scales with d") {
  ProposalConfig cfg;
  CHECK(cfg.jump_range(17) == std::pair{5, 6});
  CHECK(cfg.jump_range(5) == std::pair{2, 2});
  CHECK(cfg.jump_range(1) == std::pair{1, 1});
  cfg.jump_min = 3;
  cfg.jump_max = 2;
  CHECK_THROWS_AS(cfg.validate(17), ConfigError);
}

TEST_CASE("large jump flips a uniform subset of the drawn size") {
  ProposalConfig cfg;
  Rng rng(1);
  const ModelVector g = ModelVector::from_string("10110000000000011");
  std::map<int, int> sizes;
  std::vector<int> per_bit(17, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const auto j = large_jump(g, cfg, rng);
    ++sizes[g.hamming(j)];
    for (int b = 0; b < 17; ++b) per_bit[static_cast<std::size_t>(b)] += j[b] != g[b];
  }
  CHECK(sizes.size() == 2);
  CHECK(std::abs(sizes[5] / double(draws) - 0.5) < 0.01);
  CHECK(std::abs(sizes[6] / double(draws) - 0.5) < 0.01);
  // each bit flips with probability 5.5 / 17
  for (int c : per_bit) CHECK(std::abs(c / double(draws) - 5.5 / 17) < 0.01);

  cfg.jump_min = cfg.jump_max = 17;
  CHECK(large_jump(g, cfg, rng) == ModelVector(17, ~g.bits() & ((1u << 17) - 1)));
}

TEST_CASE("local optimizer reaches the dominating model in two dimensions") {
  // log pi(11) > log pi(10) > log pi(00) > log pi(01)
  const std::map<std::string, double> lp = {{"00", -3.0}, {"10", -2.0}, {"01", -4.0}, {"11", 0.0}};
  int calls = 0;
  LogPosteriorOracle o = [&](const ModelVector& m) {
    ++calls;
    return lp.at(m.to_string());
  };
  Rng rng(5);
  ProposalConfig cfg;
  for (const char* start : {"00", "01", "10", "11"}) {
    auto r = local_optimize(ModelVector::from_string(start), o, cfg, rng);
    CHECK(r.mode.to_string() == "11");
    CHECK(r.log_post == 0.0);
    CHECK(r.passes <= cfg.local_max_steps);
  }
  // a local maximum is a fixed point
  auto r = local_optimize(ModelVector::from_string("11"), o, cfg, rng);
  CHECK(r.passes == 1);
}

TEST_CASE("local optimizer never decreases the log posterior") {
  Table t(10, 3, 2.0);
  auto ev = t.evidence();
  LogPosteriorOracle o = [&](const ModelVector& m) { return ev(m).log_posterior(); };
  Rng rng(9);
  ProposalConfig cfg;
  for (int i = 0; i < 200; ++i) {
    const ModelVector s(10, rng() & 1023);
    auto r = local_optimize(s, o, cfg, rng);
    CHECK(r.log_post >= o(s));
    CHECK(r.log_post == o(r.mode));
    if (r.passes < cfg.local_max_steps) {
      for (int j = 0; j < 10; ++j) CHECK(o(r.mode.flipped(j)) <= r.log_post);
    }
  }
}

TEST_CASE("randomization density closed form") {
  const ModelVector a(17);
  CHECK(randomization_log_density(a, a, 0.1) == doctest::Approx(17 * std::log(0.9)).epsilon(1e-14));
  CHECK(randomization_log_density(a, a, 0.1) == doctest::Approx(-1.791129).epsilon(1e-6));
  const ModelVector b = a.flipped(3).flipped(9);
  CHECK(std::exp(randomization_log_density(a, b, 0.1)) == doctest::Approx(0.0020589).epsilon(1e-4));
  CHECK(randomization_log_density(a, b, 0.1) == randomization_log_density(b, a, 0.1));

  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    auto [out, lq] = randomize(b, 0.1, rng);
    CHECK(lq == randomization_log_density(b, out, 0.1));
  }
}

TEST_CASE("acceptance probability") {
  CHECK(acceptance_probability(0.0, -1.0, 0.3, 0.3) == doctest::Approx(0.36788).epsilon(1e-5));
  CHECK(acceptance_probability(-1.0, 0.0, 0.0, 0.0) == 1.0);
  CHECK(acceptance_probability(0.0, -INFINITY, 0.0, 0.0) == 0.0);
  Rng rng(1);
  std::normal_distribution<double> nd(0.0, 10.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = acceptance_probability(nd(rng), nd(rng), nd(rng), nd(rng));
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
  }
}

TEST_CASE("registry keeps one record per model") {
  ModelRegistry reg;
  MarginalLikelihoodRecord r;
  r.model = ModelVector::from_string("101");
  r.ok = true;
  r.log_mlik = -3.0;
  CHECK(reg.insert(r));
  r.log_mlik = -1.0;
  CHECK_FALSE(reg.insert(r));
  CHECK(reg.size() == 1);
  CHECK(reg.find(r.model)->log_mlik == -3.0);
  CHECK(reg.find(ModelVector::from_string("000")) == nullptr);
}

TEST_CASE("evidence cache computes once under concurrency") {
  std::atomic<int> calls{0};
  EvidenceCache cache([&](const ModelVector& m) {
    ++calls;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    MarginalLikelihoodRecord r;
    r.model = m;
    r.ok = true;
    r.log_mlik = static_cast<double>(m.bits());
    return r;
  });
  std::vector<std::jthread> pool;
  for (int w = 0; w < 4; ++w) {
    pool.emplace_back([&] {
      for (std::uint64_t b = 0; b < 16; ++b) CHECK(cache.get(ModelVector(4, b)).log_mlik == double(b));
    });
  }
  pool.clear();
  CHECK(calls == 16);
  CHECK(cache.computed() == 16);
}

TEST_CASE("chains reproduce the exact posterior on a small model space") {
  const int d = 5;
  Table t(d, 11, 1.0);
  const auto exact = t.exact();
  for (double rho : {0.0, 0.05}) {
    CAPTURE(rho);
    RunSettings s;
    s.seeds = {42};
    s.stop.max_iterations = 50000;
    s.proposal.rho_large = rho;
    auto run = run_chains(d, t.evidence(), s);
    CHECK(run.registry.size() == 32);
    CHECK(run.histories[0].states.size() == 50000);
    const auto freq = mcmc_model_probabilities(run.histories);
    CHECK(total_variation(freq, exact, d) < 0.03);
    if (rho > 0.0) CHECK(run.histories[0].mode_jump.proposed > 0);
  }
}

TEST_CASE("mode jumps cross between separated modes") {
  // two isolated peaks at Hamming distance 8 with a deep valley between them
  const int d = 8;
  const ModelVector a(d, 0), b = ModelVector::full(d);
  EvidenceFunction ev = [&](const ModelVector& m) {
    MarginalLikelihoodRecord r;
    r.model = m;
    r.ok = true;
    const int h = std::min(m.hamming(a), m.hamming(b));
    r.log_mlik = h == 0 ? 0.0 : -15.0 - h;
    return r;
  };
  RunSettings s;
  s.seeds = {3};
  s.stop.max_iterations = 20000;
  s.proposal.rho_large = 0.0;
  auto single = run_chains(d, ev, s);
  auto freq_single = mcmc_model_probabilities(single.histories);
  CHECK(freq_single[a] > 0.99);

  s.proposal.rho_large = 0.1;
  s.proposal.jump_min = 4;
  s.proposal.jump_max = 6;
  auto mixed = run_chains(d, ev, s);
  auto freq = mcmc_model_probabilities(mixed.histories);
  CHECK(freq[a] == doctest::Approx(0.5).epsilon(0.1));
  CHECK(freq[b] == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("run stops exactly at the unique-model target and is deterministic") {
  const int d = 12;
  Table t(d, 5, 1.5);
  RunSettings s;
  s.n_chains = 3;
  s.seeds = {1, 2, 3};
  s.stop.unique_models_target = 700;
  auto a = run_chains(d, t.evidence(), s);
  CHECK(a.reached_target);
  CHECK(a.registry.size() == 700);
  s.threads = 3;
  auto b = run_chains(d, t.evidence(), s);
  REQUIRE(b.registry.size() == 700);
  for (std::size_t i = 0; i < 700; ++i) CHECK(a.registry.records()[i].model == b.registry.records()[i].model);
  for (int c = 0; c < 3; ++c) CHECK(a.histories[c].states == b.histories[c].states);
  s.seeds = {1, 2, 4};
  auto c = run_chains(d, t.evidence(), s);
  CHECK(c.histories[2].states != a.histories[2].states);
}

TEST_CASE("failures are excluded; too many abort the run") {
  const int d = 10;
  Table t(d, 8, 1.0);
  auto base = t.evidence();
  auto with_failures = [&](int every) {
    return EvidenceFunction([=](const ModelVector& m) {
      auto r = base(m);
      if (m.bits() != 0 && m.bits() % every == 0) {
        r.ok = false;
        r.error = "synthetic failure";
      }
      return r;
    });
  };
  RunSettings s;
  s.seeds = {7};
  s.stop.unique_models_target = 300;
  s.max_failure_fraction = 0.5;
  auto run = run_chains(d, with_failures(97), s);
  CHECK(run.failures > 0);
  for (const auto& r : run.registry.records()) CHECK(r.ok);
  CHECK(run.registry.size() == 300);

  s.max_failure_fraction = 0.01;
  CHECK_THROWS_AS(run_chains(d, with_failures(3), s), NumericalError);
}

TEST_CASE("dataset evidence is independent of evaluation order") {
  auto data = oracle::small_dataset(80, 4, 14);
  auto ev1 = make_dataset_evidence(data, FieldConfig{}, LaplaceSettings{});
  auto ev2 = make_dataset_evidence(data, FieldConfig{}, LaplaceSettings{});
  const auto m1 = ModelVector::from_string("1100"), m2 = ModelVector::from_string("0011");
  const double a1 = ev1(m1).log_mlik, a2 = ev1(m2).log_mlik;
  const double b2 = ev2(m2).log_mlik, b1 = ev2(m1).log_mlik;
  CHECK(a1 == b1);
  CHECK(a2 == b2);
  CHECK(ev1(m1).log_prior == doctest::Approx(4 * std::log(0.5)));
}
