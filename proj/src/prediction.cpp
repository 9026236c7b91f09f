#include "mbvs/prediction.hpp"

#include <algorithm>
#include <numeric>

#include "mbvs/error.hpp"

namespace mbvs {

std::string_view to_string(Subset s) { return s == Subset::inference ? "inference" : "identification"; }

namespace {

void check_threshold(double threshold) {
  require(threshold > 0.0 && threshold < 1.0, "classification threshold must lie in (0,1)");
}

}  // namespace

std::vector<std::optional<double>> naive_track(const Dataset& data) {
  std::vector<std::optional<double>> out;
  out.reserve(data.T());
  for (const auto& s : data.sites) {
    if (s.n_reads > 0) {
      out.emplace_back(static_cast<double>(s.y_methylated) / s.n_reads);
    } else {
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

std::vector<bool> classify_sites(const PredictionTrack& track, double threshold) {
  check_threshold(threshold);
  std::vector<bool> out;
  out.reserve(track.points.size());
  for (const auto& p : track.points) out.push_back(p.mean > threshold);
  return out;
}

PredictionTrack probability_track(const ModelVector& model, const Dataset& data, const FieldConfig& fields,
                                  const LaplaceSettings& settings, double threshold) {
  check_threshold(threshold);
  const auto problem = make_problem(data, model, fields);
  const auto fit = marginal_likelihood(problem, settings);
  const auto marg = latent_marginals(problem, fit, settings);
  const auto naive = naive_track(data);
  PredictionTrack track;
  track.label = "mode";
  track.points.resize(data.T());
  for (std::size_t t = 0; t < data.T(); ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    auto& p = track.points[t];
    const auto& s = data.sites[t];
    p.position = s.position;
    p.subset = data.inference_mask[t] ? Subset::inference : Subset::identification;
    p.n_reads = s.n_reads;
    p.y_methylated = s.y_methylated;
    p.naive_rate = naive[t];
    p.mean = std::clamp(marg.p_mean(ti), 0.0, 1.0);
    p.lower = std::clamp(marg.p_lower(ti), 0.0, p.mean);
    p.upper = std::clamp(marg.p_upper(ti), p.mean, 1.0);
    p.methylated = p.mean > threshold;
  }
  return track;
}

PredictionTrack average_tracks(const std::vector<PredictionTrack>& tracks, std::vector<double> weights,
                               double threshold) {
  check_threshold(threshold);
  require(!tracks.empty() && tracks.size() == weights.size(), "need one weight per track");
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  require(total > 0.0, "track weights must have positive sum");
  for (double& w : weights) w /= total;
  PredictionTrack out = tracks.front();
  out.label = "averaged";
  for (std::size_t t = 0; t < out.points.size(); ++t) {
    double mean = 0.0, lower = 0.0, upper = 0.0;
    for (std::size_t k = 0; k < tracks.size(); ++k) {
      require(tracks[k].points.size() == out.points.size(), "tracks have different lengths");
      mean += weights[k] * tracks[k].points[t].mean;
      lower += weights[k] * tracks[k].points[t].lower;
      upper += weights[k] * tracks[k].points[t].upper;
    }
    auto& p = out.points[t];
    p.mean = mean;
    p.lower = std::min(lower, mean);
    p.upper = std::max(upper, mean);
    p.methylated = mean > threshold;
  }
  return out;
}

PredictionTrack model_averaged_track(const PosteriorSummary& summary, const Dataset& data, const FieldConfig& fields,
                                     const LaplaceSettings& settings, int top_m, double threshold) {
  require(top_m >= 1, "top_m must be at least 1");
  require(!summary.pmp.empty(), "summary has no model probabilities");
  std::vector<std::pair<ModelVector, double>> ranked(summary.pmp.begin(), summary.pmp.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    if (a.first.count() != b.first.count()) return a.first.count() < b.first.count();
    return a.first < b.first;
  });
  ranked.resize(std::min(ranked.size(), static_cast<std::size_t>(top_m)));
  std::vector<PredictionTrack> tracks;
  std::vector<double> weights;
  for (const auto& [m, w] : ranked) {
    tracks.push_back(probability_track(m, data, fields, settings, threshold));
    weights.push_back(w);
  }
  return average_tracks(tracks, weights, threshold);
}

}  // namespace mbvs
