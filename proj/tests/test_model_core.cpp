#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "mbvs/error.hpp"
#include "mbvs/model_core.hpp"
#include "mbvs/synthetic.hpp"

using namespace mbvs;

namespace {

ObservationSite site(std::int64_t pos, int n, int y, Context c = Context::CHH, int dist = 1,
                     GeneGroup g = GeneGroup::Md, bool coding = false, Strand strand = Strand::plus,
                     double expr = 0.0) {
  ObservationSite s;
  s.position = pos;
  s.n_reads = n;
  s.y_methylated = y;
  s.context = c;
  s.dist_prev_c = dist;
  s.gene_group = g;
  s.coding = coding;
  s.strand = strand;
  s.expression = expr;
  return s;
}

}  // namespace

TEST_CASE("model vector string round trip and ordering") {
  auto m = ModelVector::from_string("0110");
  CHECK(m.dim() == 4);
  CHECK(m[1]);
  CHECK(m[2]);
  CHECK_FALSE(m[0]);
  CHECK(m.count() == 2);
  CHECK(m.to_string() == "0110");
  CHECK(m.included() == std::vector<int>{1, 2});
  CHECK(m.flipped(0).to_string() == "1110");
  CHECK(m.hamming(ModelVector::full(4)) == 2);
  CHECK(ModelVector::from_string("0100") < ModelVector::from_string("1000"));
  CHECK_THROWS_AS(ModelVector::from_string("01x"), ContractViolation);
  CHECK_THROWS_AS(ModelVector(65), ContractViolation);
}

TEST_CASE("model prior is Bernoulli product") {
  auto m = ModelVector::from_string("10100");
  CHECK(log_model_prior(m, 0.3) == doctest::Approx(2 * std::log(0.3) + 3 * std::log(0.7)).epsilon(1e-14));
  CHECK(log_model_prior(m, 0.5) == doctest::Approx(5 * std::log(0.5)).epsilon(1e-14));
  double total = 0.0;
  for (std::uint64_t b = 0; b < 32; ++b) total += std::exp(log_model_prior(ModelVector(5, b), 0.2));
  CHECK(total == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("binomial log-likelihood matches direct formula and is stable") {
  for (double eta : {-3.0, -0.2, 0.0, 1.7, 4.0}) {
    const int n = 9, y = 4;
    const double p = 1.0 / (1.0 + std::exp(-eta));
    const double direct = std::log(std::tgamma(n + 1.0) / (std::tgamma(y + 1.0) * std::tgamma(n - y + 1.0))) +
                          y * std::log(p) + (n - y) * std::log(1 - p);
    CHECK(binomial_loglik(y, n, eta) == doctest::Approx(direct).epsilon(1e-12));
  }
  CHECK(std::isfinite(binomial_loglik(0, 10, 800.0)));
  CHECK(binomial_loglik(10, 10, 800.0) == doctest::Approx(0.0));
  CHECK(binomial_loglik(0, 0, 2.0) == 0.0);
  CHECK(softplus(1000.0) == doctest::Approx(1000.0));
  CHECK(softplus(-1000.0) >= 0.0);
  CHECK(logistic(0.0) == 0.5);
}

TEST_CASE("encoding has 17 columns with CHH as reference") {
  std::vector<ObservationSite> s = {
      site(10, 5, 2, Context::CGH, 1, GeneGroup::Ma, true, Strand::plus, 2.0),
      site(20, 5, 2, Context::CHG, 7, GeneGroup::Mg, false, Strand::minus, 0.5),
      site(30, 5, 2, Context::CHH, 30, GeneGroup::Md, true, Strand::minus, 1.0),
      site(41, 5, 2, Context::CHH, 3, GeneGroup::Ma, false, Strand::plus, 4.0),
  };
  EncodingOptions opt;
  opt.standardize = false;
  auto enc = encode_covariates(s, opt);
  REQUIRE(enc.X.cols() == 17);
  CHECK(enc.names.front() == "X_CGH");
  CHECK(enc.names[1] == "X_CHG");
  CHECK(enc.X(0, 0) == 1.0);
  CHECK(enc.X(1, 1) == 1.0);
  CHECK(enc.X(2, 0) + enc.X(2, 1) == 0.0);
  // distance bins
  CHECK(enc.X(0, 2) == 1.0);   // DT1
  CHECK(enc.X(3, 4) == 1.0);   // DT3
  CHECK(enc.X(1, 7) == 1.0);   // DT6:20
  CHECK(enc.X.row(2).segment(2, 6).sum() == 0.0);  // 30 falls in no bin
  CHECK(enc.X(2, 8) == 30.0);
  // gene groups, coding, strand, expression interactions
  CHECK(enc.X(0, 9) == 1.0);
  CHECK(enc.X(1, 10) == 1.0);
  CHECK(enc.X(2, 9) + enc.X(2, 10) == 0.0);
  CHECK(enc.X(0, 11) == 1.0);
  CHECK(enc.X(1, 12) == 0.0);
  CHECK(enc.X(0, 12) == 1.0);
  CHECK(enc.X(0, 13) == 2.0);
  CHECK(enc.X(0, 14) == 2.0);
  CHECK(enc.X(1, 15) == 0.5);
  CHECK(enc.X(2, 16) == 1.0);
  CHECK(enc.X(1, 16) == 0.0);
}

TEST_CASE("standardization uses inference-set statistics") {
  std::vector<ObservationSite> s;
  for (int t = 0; t < 6; ++t) {
    s.push_back(site(t + 1, t < 4 ? 5 : 1, 0, t % 2 ? Context::CGH : Context::CHH, t + 1, GeneGroup::Ma, t % 3 == 0,
                     Strand::plus, 0.5 * t));
  }
  auto data = make_dataset(s, 3);
  CHECK(data.n_inference() == 4);
  // DIST over rows 0..3 is 1..4: mean 2.5, sd sqrt(5/3)
  const double sd = std::sqrt(5.0 / 3.0);
  CHECK(data.design(0, 8) == doctest::Approx((1 - 2.5) / sd).epsilon(1e-14));
  CHECK(data.design(5, 8) == doctest::Approx((6 - 2.5) / sd).epsilon(1e-14));
  // binary columns untouched
  CHECK(data.design(1, 0) == 1.0);
  // strand is constant: zero-variance warning
  bool warned = false;
  for (const auto& w : data.warnings) warned |= w.find("X_STRD") != std::string::npos;
  CHECK(warned);
}

TEST_CASE("split and threshold errors") {
  std::vector<ObservationSite> s = {site(1, 4, 1), site(2, 2, 1), site(3, 3, 3), site(4, 0, 0)};
  auto split = split_dataset(s, 3);
  CHECK(split.inference == std::vector<std::size_t>{0, 2});
  CHECK(split.identification == std::vector<std::size_t>{1, 3});
  try {
    split_dataset(s, 10);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("read_threshold") != std::string::npos);
  }
  CHECK_THROWS_AS(split_dataset(s, 0), ConfigError);
}

TEST_CASE("site validation reports the offending row") {
  std::vector<ObservationSite> bad = {site(1, 4, 1), site(2, 3, 5)};
  try {
    validate_sites(bad);
    FAIL("expected IngestionError");
  } catch (const IngestionError& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
  std::vector<ObservationSite> unordered = {site(5, 4, 1), site(5, 3, 1)};
  CHECK_THROWS_AS(validate_sites(unordered), IngestionError);
}

TEST_CASE("site CSV round trip") {
  SyntheticSpec spec;
  spec.T = 50;
  spec.seed = 9;
  auto sim = simulate_dataset(spec);
  std::stringstream ss;
  write_sites_csv(ss, sim.sites);
  auto back = read_sites_csv(ss);
  CHECK(back == sim.sites);
}

TEST_CASE("site CSV errors") {
  std::istringstream header("position,n,y\n1,2,3\n");
  CHECK_THROWS_AS(read_sites_csv(header), IngestionError);
  std::istringstream bad_level(
      "position,n_reads,y_methylated,context,dist_prev_c,gene_group,coding,strand,expression\n"
      "1,4,2,CHH,1,Md,0,1,0.5\n"
      "2,4,2,CXX,1,Md,0,1,0.5\n");
  try {
    read_sites_csv(bad_level);
    FAIL("expected IngestionError");
  } catch (const IngestionError& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
  std::istringstream bad_number(
      "position,n_reads,y_methylated,context,dist_prev_c,gene_group,coding,strand,expression\n"
      "1,four,2,CHH,1,Md,0,1,0.5\n");
  CHECK_THROWS_AS(read_sites_csv(bad_number), IngestionError);
  CHECK_THROWS_AS(read_sites_csv(std::string("/nonexistent/sites.csv")), IngestionError);
}

TEST_CASE("format_double round trips") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd(0.0, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double x = nd(rng);
    CHECK(std::stod(format_double(x)) == x);
  }
}

TEST_CASE("encoding reference levels and bins") {
  std::vector<ObservationSite> s = {
      site(1, 5, 1, Context::CHH, 2, GeneGroup::Md, true, Strand::plus, 0.0),
      site(2, 5, 1, Context::CHG, 25, GeneGroup::Ma, false, Strand::minus, 3.2),
  };
  EncodingOptions opt;
  opt.standardize = false;
  auto enc = encode_covariates(s, opt);
  const Eigen::RowVectorXd a = enc.X.row(0);
  CHECK(a(0) + a(1) == 0.0);
  CHECK(a(3) == 1.0);
  CHECK(a.segment(2, 6).sum() == 1.0);
  CHECK(a(9) + a(10) == 0.0);
  CHECK(a(11) == 1.0);
  CHECK(a(12) == 1.0);
  CHECK(a.tail(4).sum() == 0.0);
  const Eigen::RowVectorXd b = enc.X.row(1);
  CHECK(b.segment(2, 6).sum() == 0.0);
  CHECK(b(8) == 25.0);
  CHECK(b(9) == 1.0);
  CHECK(b(14) == 3.2);
  CHECK(b(15) + b(16) == 0.0);
}

TEST_CASE("split boundary") {
  std::vector<ObservationSite> s = {site(1, 3, 0), site(2, 2, 0), site(3, 0, 0)};
  auto split = split_dataset(s, 3);
  CHECK(split.inference == std::vector<std::size_t>{0});
  CHECK(split.identification == std::vector<std::size_t>{1, 2});
}

TEST_CASE("prior and likelihood worked values") {
  CHECK(log_model_prior(ModelVector(17, 0x1234), 0.5) == doctest::Approx(-11.7835).epsilon(1e-5));
  CHECK(log_model_prior(ModelVector::from_string("10"), 0.5) == doctest::Approx(-1.38629).epsilon(1e-5));
  CHECK(log_model_prior(ModelVector::from_string("110"), 0.1) ==
        doctest::Approx(2 * std::log(0.1) + std::log(0.9)).epsilon(1e-14));
  CHECK(binomial_loglik(1, 2, 0.0) == doctest::Approx(std::log(0.5)).epsilon(1e-14));
  CHECK(binomial_loglik(3, 4, std::log(3.0)) ==
        doctest::Approx(std::log(4.0) + 3 * std::log(0.75) + std::log(0.25)).epsilon(1e-13));
  CHECK_THROWS_AS(binomial_loglik(5, 4, 0.0), ContractViolation);
}
