#pragma once

// Domain types for binomial regression with latent Gaussian fields:
// observation sites, covariate encoding, inference/identification split,
// the Bernoulli model-space prior and the binomial log-likelihood.

#include <compare>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace mbvs {

enum class Context { CGH, CHG, CHH };
enum class GeneGroup { Ma, Mg, Md };
enum class Strand { plus, minus };

std::string_view to_string(Context c);
std::string_view to_string(GeneGroup g);
Context parse_context(std::string_view s);
GeneGroup parse_gene_group(std::string_view s);

struct ObservationSite {
  std::int64_t position = 0;
  int n_reads = 0;
  int y_methylated = 0;
  Context context = Context::CHH;
  int dist_prev_c = 1;
  GeneGroup gene_group = GeneGroup::Md;
  bool coding = false;
  Strand strand = Strand::plus;
  double expression = 0.0;

  bool operator==(const ObservationSite&) const = default;
};

/// Inclusion indicators for d candidate covariates. The intercept is always
/// part of the model and has no bit. d is limited to 64.
class ModelVector {
 public:
  static constexpr int kMaxDim = 64;

  ModelVector() = default;
  explicit ModelVector(int dim, std::uint64_t bits = 0);

  /// Parses "0101..." where character j is covariate j.
  static ModelVector from_string(std::string_view bits);
  static ModelVector full(int dim);

  int dim() const { return dim_; }
  std::uint64_t bits() const { return bits_; }
  bool operator[](int j) const { return (bits_ >> j) & 1U; }
  void set(int j, bool on);
  void flip(int j) { bits_ ^= (std::uint64_t{1} << j); }
  ModelVector flipped(int j) const;
  int count() const;
  int hamming(const ModelVector& other) const;
  std::vector<int> included() const;
  std::string to_string() const;

  friend bool operator==(const ModelVector&, const ModelVector&) = default;
  friend std::strong_ordering operator<=>(const ModelVector& a, const ModelVector& b);

 private:
  std::uint64_t bits_ = 0;
  int dim_ = 0;
};

struct ModelVectorHash {
  std::size_t operator()(const ModelVector& m) const noexcept {
    return std::hash<std::uint64_t>{}(m.bits() * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint64_t>(m.dim()));
  }
};

struct PriorConfig {
  double q = 0.5;             // prior inclusion probability per covariate
  double gamma_shape = 1.0;   // Gamma prior on every precision
  double gamma_rate = 5e-5;

  void validate() const;
};

struct EncodingOptions {
  Context context_reference = Context::CHH;
  bool standardize = true;  // z-score continuous columns on inference-set stats
};

struct ColumnScaling {
  std::string name;
  bool continuous = false;
  double mean = 0.0;
  double sd = 1.0;
};

struct EncodedDesign {
  Eigen::MatrixXd X;
  std::vector<std::string> names;
  std::vector<ColumnScaling> scaling;
  std::vector<std::string> warnings;
};

/// Standard 17-column encoding. `stats_mask` selects the rows whose mean and
/// sd are used for standardization; empty means all rows.
EncodedDesign encode_covariates(std::span<const ObservationSite> sites,
                                const EncodingOptions& options = {},
                                std::span<const char> stats_mask = {});

struct DatasetSplit {
  std::vector<std::size_t> inference;
  std::vector<std::size_t> identification;
};

/// Sites with n_reads >= read_threshold go to inference. Throws ConfigError
/// when the inference subset is empty.
DatasetSplit split_dataset(std::span<const ObservationSite> sites, int read_threshold = 3);

struct Dataset {
  std::vector<ObservationSite> sites;
  Eigen::MatrixXd design;  // T x d
  std::vector<std::string> column_names;
  std::vector<ColumnScaling> scaling;
  std::vector<char> inference_mask;
  int read_threshold = 3;
  std::vector<std::string> warnings;

  std::size_t T() const { return sites.size(); }
  int d() const { return static_cast<int>(design.cols()); }
  std::size_t n_inference() const;
  Dataset select_columns(std::span<const int> columns) const;
};

/// Validates sites, splits them and applies the standard encoding.
Dataset make_dataset(std::vector<ObservationSite> sites, int read_threshold = 3,
                     const EncodingOptions& options = {});

/// Same validation and split, with a caller-supplied design matrix.
Dataset make_dataset(std::vector<ObservationSite> sites, Eigen::MatrixXd design,
                     std::vector<std::string> names, int read_threshold = 3);

/// Throws IngestionError on y > n, negative counts or non-increasing positions.
void validate_sites(std::span<const ObservationSite> sites);

double log_model_prior(const ModelVector& model, double q);

/// log Binomial(y | n, logistic(eta)), stable for large |eta|.
double binomial_loglik(int y, int n, double eta);

double log_binomial_coefficient(int n, int k);
double logistic(double x);
/// log(1 + exp(x)) without overflow.
double softplus(double x);

// Site CSV: position,n_reads,y_methylated,context,dist_prev_c,gene_group,coding,strand,expression
std::vector<ObservationSite> read_sites_csv(std::istream& in);
std::vector<ObservationSite> read_sites_csv(const std::string& path);
void write_sites_csv(std::ostream& out, std::span<const ObservationSite> sites);

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double x);

}  // namespace mbvs
