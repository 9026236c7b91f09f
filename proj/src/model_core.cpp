#include "mbvs/model_core.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

#include "mbvs/error.hpp"

namespace mbvs {

std::string_view to_string(Context c) {
  switch (c) {
    case Context::CGH: return "CGH";
    case Context::CHG: return "CHG";
    case Context::CHH: return "CHH";
  }
  return "?";
}

std::string_view to_string(GeneGroup g) {
  switch (g) {
    case GeneGroup::Ma: return "Ma";
    case GeneGroup::Mg: return "Mg";
    case GeneGroup::Md: return "Md";
  }
  return "?";
}

Context parse_context(std::string_view s) {
  if (s == "CGH") return Context::CGH;
  if (s == "CHG") return Context::CHG;
  if (s == "CHH") return Context::CHH;
  throw IngestionError("unknown context level '" + std::string(s) + "'");
}

GeneGroup parse_gene_group(std::string_view s) {
  if (s == "Ma") return GeneGroup::Ma;
  if (s == "Mg") return GeneGroup::Mg;
  if (s == "Md") return GeneGroup::Md;
  throw IngestionError("unknown gene_group level '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// ModelVector

ModelVector::ModelVector(int dim, std::uint64_t bits) : bits_(bits), dim_(dim) {
  require(dim >= 0 && dim <= kMaxDim, "ModelVector dimension must be in [0, 64]");
  if (dim < kMaxDim) {
    require((bits >> dim) == 0, "ModelVector has bits set beyond its dimension");
  }
}

ModelVector ModelVector::from_string(std::string_view bits) {
  ModelVector m(static_cast<int>(bits.size()));
  for (std::size_t j = 0; j < bits.size(); ++j) {
    if (bits[j] == '1') {
      m.set(static_cast<int>(j), true);
    } else if (bits[j] != '0') {
      throw ContractViolation("model bitstring may only contain '0' and '1'");
    }
  }
  return m;
}

ModelVector ModelVector::full(int dim) {
  std::uint64_t all = dim == kMaxDim ? ~std::uint64_t{0} : ((std::uint64_t{1} << dim) - 1);
  return ModelVector(dim, all);
}

void ModelVector::set(int j, bool on) {
  require(j >= 0 && j < dim_, "ModelVector index out of range");
  const std::uint64_t mask = std::uint64_t{1} << j;
  bits_ = on ? (bits_ | mask) : (bits_ & ~mask);
}

ModelVector ModelVector::flipped(int j) const {
  ModelVector out = *this;
  out.flip(j);
  return out;
}

int ModelVector::count() const { return std::popcount(bits_); }

int ModelVector::hamming(const ModelVector& other) const {
  return std::popcount(bits_ ^ other.bits_);
}

std::vector<int> ModelVector::included() const {
  std::vector<int> out;
  for (int j = 0; j < dim_; ++j) {
    if ((*this)[j]) out.push_back(j);
  }
  return out;
}

std::string ModelVector::to_string() const {
  std::string s(static_cast<std::size_t>(dim_), '0');
  for (int j = 0; j < dim_; ++j) {
    if ((*this)[j]) s[static_cast<std::size_t>(j)] = '1';
  }
  return s;
}

std::strong_ordering operator<=>(const ModelVector& a, const ModelVector& b) {
  if (auto c = a.dim_ <=> b.dim_; c != 0) return c;
  // lexicographic on the bitstring, covariate 0 first
  for (int j = 0; j < a.dim_; ++j) {
    if (a[j] != b[j]) return a[j] ? std::strong_ordering::greater : std::strong_ordering::less;
  }
  return std::strong_ordering::equal;
}

void PriorConfig::validate() const {
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("prior inclusion probability q must lie in (0,1)");
  if (!(gamma_shape > 0.0 && gamma_rate > 0.0)) {
    throw ConfigError("Gamma prior shape and rate must be positive");
  }
}

// ---------------------------------------------------------------------------
// Encoding

namespace {

std::vector<Context> non_reference_contexts(Context reference) {
  std::vector<Context> out;
  for (Context c : {Context::CGH, Context::CHG, Context::CHH}) {
    if (c != reference) out.push_back(c);
  }
  return out;
}

}  // namespace

EncodedDesign encode_covariates(std::span<const ObservationSite> sites, const EncodingOptions& options,
                                std::span<const char> stats_mask) {
  require(stats_mask.empty() || stats_mask.size() == sites.size(),
          "standardization mask must match the number of sites");
  const auto contexts = non_reference_contexts(options.context_reference);

  EncodedDesign out;
  for (Context c : contexts) out.names.push_back("X_" + std::string(to_string(c)));
  for (const char* n : {"X_DT1", "X_DT2", "X_DT3", "X_DT4", "X_DT5", "X_DT6:20", "X_DIST", "X_Ma", "X_Mg",
                        "X_CODE", "X_STRD", "X_EXPR", "X_EXPR_a", "X_EXPR_g", "X_EXPR_d"}) {
    out.names.emplace_back(n);
  }
  const Eigen::Index T = static_cast<Eigen::Index>(sites.size());
  const Eigen::Index d = static_cast<Eigen::Index>(out.names.size());
  out.X = Eigen::MatrixXd::Zero(T, d);

  constexpr int kDist = 8, kMa = 9, kExpr = 13;
  for (Eigen::Index t = 0; t < T; ++t) {
    const ObservationSite& s = sites[static_cast<std::size_t>(t)];
    if (s.dist_prev_c < 1) {
      throw IngestionError("row " + std::to_string(t + 1) + ": dist_prev_c must be a positive integer");
    }
    for (std::size_t k = 0; k < contexts.size(); ++k) {
      out.X(t, static_cast<Eigen::Index>(k)) = s.context == contexts[k] ? 1.0 : 0.0;
    }
    if (s.dist_prev_c <= 5) {
      out.X(t, 2 + (s.dist_prev_c - 1)) = 1.0;
    } else if (s.dist_prev_c <= 20) {
      out.X(t, 7) = 1.0;
    }
    out.X(t, kDist) = static_cast<double>(s.dist_prev_c);
    out.X(t, kMa) = s.gene_group == GeneGroup::Ma ? 1.0 : 0.0;
    out.X(t, kMa + 1) = s.gene_group == GeneGroup::Mg ? 1.0 : 0.0;
    out.X(t, 11) = s.coding ? 1.0 : 0.0;
    out.X(t, 12) = s.strand == Strand::plus ? 1.0 : 0.0;
    out.X(t, kExpr) = s.expression;
    out.X(t, kExpr + 1) = s.gene_group == GeneGroup::Ma ? s.expression : 0.0;
    out.X(t, kExpr + 2) = s.gene_group == GeneGroup::Mg ? s.expression : 0.0;
    out.X(t, kExpr + 3) = s.gene_group == GeneGroup::Md ? s.expression : 0.0;
  }

  out.scaling.resize(static_cast<std::size_t>(d));
  for (Eigen::Index j = 0; j < d; ++j) {
    auto& sc = out.scaling[static_cast<std::size_t>(j)];
    sc.name = out.names[static_cast<std::size_t>(j)];
    sc.continuous = (j == kDist || j >= kExpr);
  }

  // zero-variance check over the statistics rows, then optional z-scoring
  for (Eigen::Index j = 0; j < d; ++j) {
    double sum = 0.0, sum2 = 0.0;
    std::size_t count = 0;
    for (Eigen::Index t = 0; t < T; ++t) {
      if (!stats_mask.empty() && !stats_mask[static_cast<std::size_t>(t)]) continue;
      sum += out.X(t, j);
      ++count;
    }
    if (count == 0) continue;
    const double mean = sum / static_cast<double>(count);
    for (Eigen::Index t = 0; t < T; ++t) {
      if (!stats_mask.empty() && !stats_mask[static_cast<std::size_t>(t)]) continue;
      sum2 += (out.X(t, j) - mean) * (out.X(t, j) - mean);
    }
    const double sd = count > 1 ? std::sqrt(sum2 / static_cast<double>(count - 1)) : 0.0;
    auto& sc = out.scaling[static_cast<std::size_t>(j)];
    if (sd <= 0.0) {
      out.warnings.push_back("column " + sc.name + " has zero variance; kept unscaled");
      continue;
    }
    if (options.standardize && sc.continuous) {
      sc.mean = mean;
      sc.sd = sd;
      out.X.col(j) = (out.X.col(j).array() - mean) / sd;
    }
  }
  return out;
}

DatasetSplit split_dataset(std::span<const ObservationSite> sites, int read_threshold) {
  if (read_threshold < 1) throw ConfigError("read_threshold must be at least 1");
  DatasetSplit split;
  for (std::size_t t = 0; t < sites.size(); ++t) {
    (sites[t].n_reads >= read_threshold ? split.inference : split.identification).push_back(t);
  }
  if (split.inference.empty()) {
    throw ConfigError("no site has at least read_threshold=" + std::to_string(read_threshold) +
                      " reads; the inference subset is empty");
  }
  return split;
}

void validate_sites(std::span<const ObservationSite> sites) {
  for (std::size_t t = 0; t < sites.size(); ++t) {
    const auto& s = sites[t];
    const std::string row = "row " + std::to_string(t + 1) + ": ";
    if (s.n_reads < 0 || s.y_methylated < 0) throw IngestionError(row + "read counts must be nonnegative");
    if (s.y_methylated > s.n_reads) throw IngestionError(row + "y_methylated exceeds n_reads");
    if (s.dist_prev_c < 1) throw IngestionError(row + "dist_prev_c must be positive");
    if (!(s.expression >= 0.0) || !std::isfinite(s.expression)) {
      throw IngestionError(row + "expression must be a finite nonnegative number");
    }
    if (t > 0 && s.position <= sites[t - 1].position) {
      throw IngestionError(row + "positions must be strictly increasing");
    }
  }
}

std::size_t Dataset::n_inference() const {
  return static_cast<std::size_t>(std::count(inference_mask.begin(), inference_mask.end(), char{1}));
}

Dataset Dataset::select_columns(std::span<const int> columns) const {
  Dataset out;
  out.sites = sites;
  out.inference_mask = inference_mask;
  out.read_threshold = read_threshold;
  out.design.resize(design.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t k = 0; k < columns.size(); ++k) {
    require(columns[k] >= 0 && columns[k] < d(), "column index out of range");
    out.design.col(static_cast<Eigen::Index>(k)) = design.col(columns[k]);
    out.column_names.push_back(column_names[static_cast<std::size_t>(columns[k])]);
    if (!scaling.empty()) out.scaling.push_back(scaling[static_cast<std::size_t>(columns[k])]);
  }
  return out;
}

namespace {

std::vector<char> mask_from_split(const DatasetSplit& split, std::size_t T) {
  std::vector<char> mask(T, 0);
  for (auto t : split.inference) mask[t] = 1;
  return mask;
}

}  // namespace

Dataset make_dataset(std::vector<ObservationSite> sites, int read_threshold, const EncodingOptions& options) {
  validate_sites(sites);
  const auto split = split_dataset(sites, read_threshold);
  Dataset ds;
  ds.inference_mask = mask_from_split(split, sites.size());
  auto enc = encode_covariates(sites, options, ds.inference_mask);
  ds.sites = std::move(sites);
  ds.design = std::move(enc.X);
  ds.column_names = std::move(enc.names);
  ds.scaling = std::move(enc.scaling);
  ds.warnings = std::move(enc.warnings);
  ds.read_threshold = read_threshold;
  return ds;
}

Dataset make_dataset(std::vector<ObservationSite> sites, Eigen::MatrixXd design, std::vector<std::string> names,
                     int read_threshold) {
  validate_sites(sites);
  require(static_cast<std::size_t>(design.rows()) == sites.size(), "design row count must equal site count");
  require(static_cast<std::size_t>(design.cols()) == names.size(), "design column count must equal name count");
  const auto split = split_dataset(sites, read_threshold);
  Dataset ds;
  ds.inference_mask = mask_from_split(split, sites.size());
  ds.sites = std::move(sites);
  ds.design = std::move(design);
  ds.column_names = std::move(names);
  ds.read_threshold = read_threshold;
  return ds;
}

// ---------------------------------------------------------------------------
// Priors and likelihood

double log_model_prior(const ModelVector& model, double q) {
  require(q > 0.0 && q < 1.0, "q must lie in (0,1)");
  const int k = model.count();
  return k * std::log(q) + (model.dim() - k) * std::log1p(-q);
}

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double log_binomial_coefficient(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

double binomial_loglik(int y, int n, double eta) {
  require(y >= 0 && y <= n, "binomial_loglik requires 0 <= y <= n");
  if (n == 0) return 0.0;
  return log_binomial_coefficient(n, y) + y * eta - n * softplus(eta);
}

}  // namespace mbvs
