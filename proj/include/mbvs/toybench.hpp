#pragma once

// Conjugate toy model Y_t | z ~ N(z, 1/tau1), z ~ N(0, 1/tau0), t = 1..T,
// with its exact evidence, the harmonic-mean estimator, and the comparison
// tables built on top of them.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mbvs/laplace.hpp"

namespace mbvs {

struct ToyModel {
  double tau0 = 1.0;
  double tau1 = 1.0;
  Eigen::VectorXd Y;

  std::size_t T() const { return static_cast<std::size_t>(Y.size()); }
  void validate() const;
};

double exact_toy_mlik(const ToyModel& model);
/// Evidence of the toy model through the Laplace engine.
double laplace_toy_mlik(const ToyModel& model);
double harmonic_mean_mlik(const ToyModel& model, std::int64_t W, std::uint64_t seed);

/// Draws z from its prior and Y given z.
ToyModel simulate_toy(double tau0, double tau1, std::size_t T, std::uint64_t seed);

struct ToyRow {
  double tau0 = 0.0;
  std::uint64_t data_seed = 0;
  double exact = 0.0;
  double laplace = 0.0;
  std::vector<double> harmonic;
};

struct ToyCompareSettings {
  std::vector<double> tau0 = {0.001, 0.1, 10.0};
  double tau1 = 1.0;
  std::size_t T = 2;
  std::int64_t W = 10000000;
  std::uint64_t data_seed = 1;
  std::vector<std::uint64_t> replicate_seeds = {11, 12, 13, 14, 15};
};

/// One row per tau0, ascending.
std::vector<ToyRow> toy_compare(const ToyCompareSettings& settings);

struct StructureRow {
  std::string name;
  ModelVector model;
  std::vector<std::optional<double>> log_mlik;  // one per structure; empty on failure
  std::vector<std::string> errors;
  int best = -1;  // column of the row maximum
};

struct StructureTable {
  std::vector<std::string> structures;
  std::vector<StructureRow> rows;
};

/// One row per named model (FULL, NULL, BEST or explicit), one column per structure.
StructureTable latent_structure_comparison(const Dataset& data,
                                           const std::vector<std::pair<std::string, ModelVector>>& models,
                                           const std::vector<LatentStructureSpec>& structures,
                                           const LaplaceSettings& settings);

}  // namespace mbvs
