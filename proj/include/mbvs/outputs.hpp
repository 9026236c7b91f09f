#pragma once

// CSV and JSON artifacts written by the command-line tool, plus readers for
// the tabular ones.

#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mbvs/estimators.hpp"
#include "mbvs/prediction.hpp"
#include "mbvs/toybench.hpp"

namespace mbvs {

struct ModelRow {
  std::string bitstring;
  int n_covariates = 0;
  double log_mlik = 0.0;
  double log_prior = 0.0;
  double rm_pmp = 0.0;
  double mcmc_pmp = 0.0;

  bool operator==(const ModelRow&) const = default;
};

/// models.csv rows in registry insertion order.
std::vector<ModelRow> model_rows(const ModelRegistry& registry, const PosteriorSummary& summary);
void write_models_csv(std::ostream& out, const std::vector<ModelRow>& rows);
std::vector<ModelRow> read_models_csv(std::istream& in);

struct InclusionRow {
  std::string covariate;
  double rm_inclusion = 0.0;
  double mcmc_inclusion = 0.0;

  bool operator==(const InclusionRow&) const = default;
};

std::vector<InclusionRow> inclusion_rows(const PosteriorSummary& summary, const std::vector<std::string>& names);
void write_inclusion_csv(std::ostream& out, const std::vector<InclusionRow>& rows);
std::vector<InclusionRow> read_inclusion_csv(std::istream& in);

struct TrackRow {
  std::int64_t position = 0;
  std::string subset;
  int n_reads = 0;
  int y_methylated = 0;
  std::optional<double> naive_rate;
  double post_mean = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  std::string classification;
  std::string model;

  bool operator==(const TrackRow&) const = default;
};

std::vector<TrackRow> track_rows(const PredictionTrack& track);
void write_track_csv(std::ostream& out, const std::vector<TrackRow>& rows);
std::vector<TrackRow> read_track_csv(std::istream& in);

void write_toy_table_csv(std::ostream& out, const std::vector<ToyRow>& rows);
void write_latent_table_csv(std::ostream& out, const StructureTable& table);

/// 64-bit FNV-1a, printed as 16 hex digits.
std::string fnv1a_hex(std::string_view text);

}  // namespace mbvs
