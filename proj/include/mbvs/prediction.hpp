#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mbvs/estimators.hpp"
#include "mbvs/laplace.hpp"

namespace mbvs {

enum class Subset { inference, identification };
std::string_view to_string(Subset s);

struct TrackPoint {
  std::int64_t position = 0;
  Subset subset = Subset::inference;
  int n_reads = 0;
  int y_methylated = 0;
  std::optional<double> naive_rate;
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool methylated = false;
};

struct PredictionTrack {
  std::string label;  // "mode" or "averaged"
  std::vector<TrackPoint> points;
};

/// Posterior probability track for one model over every site.
PredictionTrack probability_track(const ModelVector& model, const Dataset& data, const FieldConfig& fields,
                                  const LaplaceSettings& settings, double threshold = 0.5);

/// RM-weighted average of per-model tracks over the top_m models by probability.
PredictionTrack model_averaged_track(const PosteriorSummary& summary, const Dataset& data, const FieldConfig& fields,
                                     const LaplaceSettings& settings, int top_m, double threshold = 0.5);

/// Weighted average of tracks with weights renormalized to one.
PredictionTrack average_tracks(const std::vector<PredictionTrack>& tracks, std::vector<double> weights,
                               double threshold = 0.5);

/// Methylated iff the posterior mean exceeds the threshold.
std::vector<bool> classify_sites(const PredictionTrack& track, double threshold = 0.5);

std::vector<std::optional<double>> naive_track(const Dataset& data);

}  // namespace mbvs
