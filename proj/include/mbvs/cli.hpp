#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "mbvs/estimators.hpp"
#include "mbvs/laplace.hpp"
#include "mbvs/mjmcmc.hpp"
#include "mbvs/synthetic.hpp"
#include "mbvs/toybench.hpp"

namespace mbvs {

struct FitConfig {
  std::string input;
  std::string out_dir;
  int read_threshold = 3;
  PriorConfig prior;
  std::string structure = "rw1";
  bool iid_field = true;
  LaplaceSettings laplace;
  int n_chains = 4;
  std::uint64_t seed = 1;  // chain c uses seed + c
  StopCriteria stop;
  ProposalConfig proposal;
  int threads = 1;
  double burn_in = 0.2;
  int top_models = 5;
  double threshold = 0.5;

  void validate() const;
};

struct FitOutcome {
  PosteriorSummary summary;
  std::size_t registry_size = 0;
  double explored_fraction = 0.0;
  double runtime_seconds = 0.0;
};

/// Runs the whole pipeline and writes models.csv, inclusion.csv, track.csv,
/// summary.json and manifest.json into out_dir.
FitOutcome cmd_fit(const FitConfig& config, std::ostream& log);

struct ToysConfig {
  std::string out_dir;
  ToyCompareSettings toy;
  std::string input;  // optional dataset for the latent-structure table
  std::string best_model;
  std::vector<std::string> structures = {"rw1", "ou", "ar1", "ar2", "ar3"};
  int read_threshold = 3;
  LaplaceSettings laplace;
};

void cmd_toys(const ToysConfig& config, std::ostream& log);

struct SynthConfig {
  std::string out_dir;
  SyntheticSpec spec;
};

void cmd_synth(const SynthConfig& config, std::ostream& log);

/// Prints the headline numbers of a finished fit directory.
void cmd_report(const std::string& out_dir, std::ostream& out);

/// Entry point; returns the process exit code (1 config, 2 ingestion, 3 numerical).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mbvs
