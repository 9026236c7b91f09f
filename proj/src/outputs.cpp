#include "mbvs/outputs.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include "mbvs/error.hpp"

namespace mbvs {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Reads the header and returns the data rows split into fields.
std::vector<std::vector<std::string>> read_table(std::istream& in, std::string_view header) {
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw IngestionError("unexpected header '" + line + "'");
  const auto width = split_line(std::string(header)).size();
  std::vector<std::vector<std::string>> rows;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_line(line);
    if (f.size() != width) {
      throw IngestionError("row " + std::to_string(row) + ": expected " + std::to_string(width) + " fields");
    }
    rows.push_back(std::move(f));
  }
  return rows;
}

template <class T>
T parse_number(const std::string& s) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    // from_chars rejects the spellings written for infinities
    if constexpr (std::is_floating_point_v<T>) {
      if (s == "-inf") return -std::numeric_limits<T>::infinity();
      if (s == "inf") return std::numeric_limits<T>::infinity();
    }
    throw IngestionError("cannot parse number '" + s + "'");
  }
  return v;
}

constexpr std::string_view kModelsHeader = "bitstring,n_covariates,log_mlik,log_prior,rm_pmp,mcmc_pmp";
constexpr std::string_view kInclusionHeader = "covariate,rm_inclusion,mcmc_inclusion";
constexpr std::string_view kTrackHeader =
    "position,subset,n_reads,y_methylated,naive_rate,post_mean,q025,q975,classification,model";

}  // namespace

std::vector<ModelRow> model_rows(const ModelRegistry& registry, const PosteriorSummary& summary) {
  std::vector<ModelRow> out;
  out.reserve(registry.size());
  for (const auto& r : registry.records()) {
    ModelRow row;
    row.bitstring = r.model.to_string();
    row.n_covariates = r.model.count();
    row.log_mlik = r.log_mlik;
    row.log_prior = r.log_prior;
    if (auto it = summary.pmp.find(r.model); it != summary.pmp.end()) row.rm_pmp = it->second;
    if (auto it = summary.pmp_mcmc.find(r.model); it != summary.pmp_mcmc.end()) row.mcmc_pmp = it->second;
    out.push_back(std::move(row));
  }
  return out;
}

void write_models_csv(std::ostream& out, const std::vector<ModelRow>& rows) {
  out << kModelsHeader << '\n';
  for (const auto& r : rows) {
    out << r.bitstring << ',' << r.n_covariates << ',' << format_double(r.log_mlik) << ','
        << format_double(r.log_prior) << ',' << format_double(r.rm_pmp) << ',' << format_double(r.mcmc_pmp) << '\n';
  }
}

std::vector<ModelRow> read_models_csv(std::istream& in) {
  std::vector<ModelRow> out;
  for (const auto& f : read_table(in, kModelsHeader)) {
    out.push_back({f[0], parse_number<int>(f[1]), parse_number<double>(f[2]), parse_number<double>(f[3]),
                   parse_number<double>(f[4]), parse_number<double>(f[5])});
  }
  return out;
}

std::vector<InclusionRow> inclusion_rows(const PosteriorSummary& summary, const std::vector<std::string>& names) {
  require(names.size() == summary.inclusion.size(), "one name per covariate required");
  std::vector<InclusionRow> out;
  for (std::size_t j = 0; j < names.size(); ++j) {
    const double mcmc = j < summary.inclusion_mcmc.size() ? summary.inclusion_mcmc[j] : 0.0;
    out.push_back({names[j], summary.inclusion[j], mcmc});
  }
  return out;
}

void write_inclusion_csv(std::ostream& out, const std::vector<InclusionRow>& rows) {
  out << kInclusionHeader << '\n';
  for (const auto& r : rows) {
    out << r.covariate << ',' << format_double(r.rm_inclusion) << ',' << format_double(r.mcmc_inclusion) << '\n';
  }
}

std::vector<InclusionRow> read_inclusion_csv(std::istream& in) {
  std::vector<InclusionRow> out;
  for (const auto& f : read_table(in, kInclusionHeader)) {
    out.push_back({f[0], parse_number<double>(f[1]), parse_number<double>(f[2])});
  }
  return out;
}

std::vector<TrackRow> track_rows(const PredictionTrack& track) {
  std::vector<TrackRow> out;
  out.reserve(track.points.size());
  for (const auto& p : track.points) {
    out.push_back({p.position, std::string(to_string(p.subset)), p.n_reads, p.y_methylated, p.naive_rate, p.mean,
                   p.lower, p.upper, p.methylated ? "methylated" : "unmethylated", track.label});
  }
  return out;
}

void write_track_csv(std::ostream& out, const std::vector<TrackRow>& rows) {
  out << kTrackHeader << '\n';
  for (const auto& r : rows) {
    out << r.position << ',' << r.subset << ',' << r.n_reads << ',' << r.y_methylated << ','
        << (r.naive_rate ? format_double(*r.naive_rate) : "NA") << ',' << format_double(r.post_mean) << ','
        << format_double(r.q025) << ',' << format_double(r.q975) << ',' << r.classification << ',' << r.model << '\n';
  }
}

std::vector<TrackRow> read_track_csv(std::istream& in) {
  std::vector<TrackRow> out;
  for (const auto& f : read_table(in, kTrackHeader)) {
    TrackRow r;
    r.position = parse_number<std::int64_t>(f[0]);
    r.subset = f[1];
    r.n_reads = parse_number<int>(f[2]);
    r.y_methylated = parse_number<int>(f[3]);
    if (f[4] != "NA") r.naive_rate = parse_number<double>(f[4]);
    r.post_mean = parse_number<double>(f[5]);
    r.q025 = parse_number<double>(f[6]);
    r.q975 = parse_number<double>(f[7]);
    r.classification = f[8];
    r.model = f[9];
    out.push_back(std::move(r));
  }
  return out;
}

void write_toy_table_csv(std::ostream& out, const std::vector<ToyRow>& rows) {
  std::size_t reps = 0;
  for (const auto& r : rows) reps = std::max(reps, r.harmonic.size());
  out << "tau0,data_seed,exact,laplace";
  for (std::size_t k = 1; k <= reps; ++k) out << ",harmonic_" << k;
  out << '\n';
  for (const auto& r : rows) {
    out << format_double(r.tau0) << ',' << r.data_seed << ',' << format_double(r.exact) << ','
        << format_double(r.laplace);
    for (std::size_t k = 0; k < reps; ++k) out << ',' << (k < r.harmonic.size() ? format_double(r.harmonic[k]) : "NA");
    out << '\n';
  }
}

void write_latent_table_csv(std::ostream& out, const StructureTable& table) {
  out << "model,bitstring";
  for (const auto& s : table.structures) out << ',' << s;
  out << ",row_max\n";
  for (const auto& r : table.rows) {
    out << r.name << ',' << r.model.to_string();
    for (const auto& v : r.log_mlik) out << ',' << (v ? format_double(*v) : "NA");
    out << ',' << (r.best >= 0 ? table.structures[static_cast<std::size_t>(r.best)] : "NA") << '\n';
  }
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mbvs
