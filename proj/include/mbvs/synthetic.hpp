#pragma once

// Synthetic bisulfite-style datasets with the standard site schema: random
// site annotations, an RW1 field, an IG field, read counts with a share of
// low-coverage sites, and binomial methylated counts.

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mbvs/model_core.hpp"

namespace mbvs {

struct SyntheticSpec {
  std::size_t T = 1000;
  std::map<std::string, double> coefficients = {{"X_CGH", 2.5}, {"X_CHG", 2.0}, {"X_CODE", -2.0}};
  double intercept = -1.0;
  double tau_eps = 100.0;  // RW1 precision
  double tau_zeta = 4.0;   // IG precision
  double low_coverage_fraction = 0.35;  // sites with n in {0, 1, 2}
  double extra_reads_mean = 7.0;        // other sites: n = 3 + Poisson(mean)
  int read_threshold = 3;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticTruth {
  SyntheticSpec spec;
  std::vector<std::string> column_names;
  ModelVector model;
  Eigen::VectorXd beta;  // one entry per encoded column, zeros for inactive
  Eigen::VectorXd delta;
  Eigen::VectorXd zeta;
};

struct SyntheticData {
  std::vector<ObservationSite> sites;
  SyntheticTruth truth;
};

/// Deterministic given spec.seed.
SyntheticData simulate_dataset(const SyntheticSpec& spec);

void write_truth_json(std::ostream& out, const SyntheticTruth& truth);

}  // namespace mbvs
