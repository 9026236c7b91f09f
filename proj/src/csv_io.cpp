#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "mbvs/error.hpp"
#include "mbvs/model_core.hpp"

namespace mbvs {

namespace {

constexpr const char* kSiteHeader =
    "position,n_reads,y_methylated,context,dist_prev_c,gene_group,coding,strand,expression";

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& text, std::size_t row, const char* column) {
  T value{};
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) {
    throw IngestionError("row " + std::to_string(row) + ": cannot parse " + column + " value '" + text + "'");
  }
  return value;
}

bool parse_flag(const std::string& text, std::size_t row, const char* column) {
  if (text == "1") return true;
  if (text == "0") return false;
  throw IngestionError("row " + std::to_string(row) + ": " + column + " must be 0 or 1, got '" + text + "'");
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, ptr);
}

std::vector<ObservationSite> read_sites_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("input CSV is empty; a header row is required");
  if (trim(line) != kSiteHeader) {
    throw IngestionError(std::string("unexpected CSV header; expected '") + kSiteHeader + "'");
  }
  std::vector<ObservationSite> sites;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    line = trim(line);
    if (line.empty()) continue;
    auto f = split_fields(line);
    if (f.size() != 9) {
      throw IngestionError("row " + std::to_string(row) + ": expected 9 fields, found " + std::to_string(f.size()));
    }
    for (auto& x : f) x = trim(x);
    ObservationSite s;
    s.position = parse_number<std::int64_t>(f[0], row, "position");
    s.n_reads = parse_number<int>(f[1], row, "n_reads");
    s.y_methylated = parse_number<int>(f[2], row, "y_methylated");
    try {
      s.context = parse_context(f[3]);
      s.gene_group = parse_gene_group(f[5]);
    } catch (const IngestionError& e) {
      throw IngestionError("row " + std::to_string(row) + ": " + e.what());
    }
    s.dist_prev_c = parse_number<int>(f[4], row, "dist_prev_c");
    s.coding = parse_flag(f[6], row, "coding");
    s.strand = parse_flag(f[7], row, "strand") ? Strand::plus : Strand::minus;
    s.expression = parse_number<double>(f[8], row, "expression");
    sites.push_back(s);
  }
  validate_sites(sites);
  return sites;
}

std::vector<ObservationSite> read_sites_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open input file '" + path + "'");
  return read_sites_csv(in);
}

void write_sites_csv(std::ostream& out, std::span<const ObservationSite> sites) {
  out << kSiteHeader << '\n';
  for (const auto& s : sites) {
    out << s.position << ',' << s.n_reads << ',' << s.y_methylated << ',' << to_string(s.context) << ','
        << s.dist_prev_c << ',' << to_string(s.gene_group) << ',' << (s.coding ? 1 : 0) << ','
        << (s.strand == Strand::plus ? 1 : 0) << ',' << format_double(s.expression) << '\n';
  }
}

}  // namespace mbvs
