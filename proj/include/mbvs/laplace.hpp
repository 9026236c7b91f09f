#pragma once

// Nested Laplace approximation for latent Gaussian models with a binomial
// (or, as a test hook, Gaussian) likelihood.
//
// Latent vector z = (beta, delta, zeta): regression coefficients (intercept
// first), an optional structured field (RW1/AR/OU) and an optional IG field.
// The linear predictor at site t is x_t' beta + delta_t + zeta_t.
//
// Inner level: Newton iterations for the mode z*(eta) of p(z | eta, Y) with
// a Gaussian approximation at the mode. The field blocks are interleaved per
// site so the field part of the precision is banded; the dense beta columns
// are eliminated through a Schur complement. The RW1 sum-to-zero constraint
// is enforced exactly (constrained Newton steps, subspace determinants).
//
// Outer level: quasi-Newton ascent of log p~(eta | Y) in internal (log)
// coordinates, then either a Gaussian (EB) integral or a weighted grid.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mbvs/latent_structures.hpp"
#include "mbvs/model_core.hpp"

namespace mbvs {

enum class LikelihoodKind { binomial, gaussian };
enum class HyperIntegration { EB, grid };
enum class ProbabilityMapping { plugin, gauss_hermite };

std::string to_string(HyperIntegration m);
HyperIntegration parse_integration(std::string_view s);

struct FieldConfig {
  std::optional<LatentStructureSpec> structured = LatentStructureSpec::rw1();
  bool iid = true;
};

/// Everything the engine needs for one model: design, fields, likelihood.
struct LatentProblem {
  Eigen::MatrixXd fixed;  // T x m
  std::vector<std::string> fixed_names;
  FieldConfig fields;
  std::vector<std::int64_t> positions;  // used by OU only

  LikelihoodKind likelihood = LikelihoodKind::binomial;
  std::vector<int> n_reads;
  std::vector<int> y_methylated;
  Eigen::VectorXd y_gaussian;
  double gaussian_precision = 1.0;
  std::vector<char> active;  // site contributes a likelihood term

  std::size_t T() const { return static_cast<std::size_t>(fixed.rows()); }
  int m() const { return static_cast<int>(fixed.cols()); }
  bool constrained() const;
  void validate() const;
};

/// Intercept plus the covariates selected by `model`; identification sites
/// (and any site with zero reads) carry no likelihood.
LatentProblem make_problem(const Dataset& data, const ModelVector& model, const FieldConfig& fields = {});

enum class HyperRole { tau_beta, tau_field, pacf, log_range, tau_iid };

struct HyperPrior {
  enum class Kind { log_gamma, normal };
  Kind kind = Kind::log_gamma;
  double a = 1.0;  // Gamma shape, or normal mean
  double b = 5e-5; // Gamma rate, or normal precision

  static HyperPrior log_gamma(double shape, double rate) { return {Kind::log_gamma, shape, rate}; }
  static HyperPrior normal(double mean, double precision) { return {Kind::normal, mean, precision}; }
  /// Density of the internal coordinate (Jacobian included).
  double log_density(double theta) const;
};

struct HyperParameter {
  std::string name;
  HyperRole role = HyperRole::tau_iid;
  double theta = 0.0;  // internal coordinate: log precision, log rate or transformed pacf
  bool free = true;
  HyperPrior prior;

  /// Natural-scale value: precision, rate or partial correlation.
  double natural() const;
};

class Hyperparameters {
 public:
  std::vector<HyperParameter> params;

  int n_free() const;
  Eigen::VectorXd free_theta() const;
  Hyperparameters with_free_theta(const Eigen::VectorXd& theta) const;
  std::vector<std::string> free_names() const;
  double log_prior() const;

  double tau_beta() const;
  bool has(HyperRole role) const;
  double natural(HyperRole role) const;
  std::vector<double> partial_correlations() const;
  const HyperParameter& get(const std::string& name) const;
};

struct LaplaceSettings {
  double newton_tol = 1e-8;
  int newton_max_iter = 50;
  int max_step_halvings = 10;

  HyperIntegration method = HyperIntegration::EB;
  double grid_step = 0.5;
  double grid_drop = 3.0;
  int grid_max_points_per_axis = 5;

  double tau_beta = 1e-3;
  bool optimize_tau_beta = false;
  PriorConfig prior;
  double init_log_tau = 2.0;

  double hyper_grad_tol = 1e-3;
  int hyper_max_iter = 100;
  double fd_step = 1e-4;
  double hessian_step = 2e-2;
  double max_hyper_step = 2.0;
  double theta_lower = -15.0;
  double theta_upper = 25.0;

  ProbabilityMapping mapping = ProbabilityMapping::plugin;
  int gauss_hermite_nodes = 21;
  double lower_quantile = 0.025;
  double upper_quantile = 0.975;
};

/// Default hyperparameter layout and starting values for a problem.
Hyperparameters default_hyperparameters(const LatentProblem& problem, const LaplaceSettings& settings);

struct LatentState {
  Eigen::VectorXd beta;
  Eigen::VectorXd delta;  // empty without a structured field
  Eigen::VectorXd zeta;   // empty without an IG field
};

class PosteriorFactor;

struct GaussianApprox {
  LatentState mode;
  Eigen::VectorXd linear_predictor;
  double log_likelihood = 0.0;     // sum of active site log-likelihoods at the mode
  double log_prior_density = 0.0;  // log p(z* | eta) without the 2*pi terms
  double log_det = 0.0;            // log det of the posterior precision on the constraint subspace
  bool converged = false;
  int newton_iterations = 0;
  double gradient_norm = 0.0;  // max-norm of the projected gradient at the mode
  std::shared_ptr<const PosteriorFactor> factor;

  /// log p(Y | eta): log p(z*, Y | eta) - log p~_G(z* | eta, Y).
  double log_evidence() const { return log_likelihood + log_prior_density - 0.5 * log_det; }
};

/// Newton mode and Gaussian approximation of p(z | eta, Y). Non-convergence
/// is flagged, not thrown; an indefinite system throws NumericalError.
GaussianApprox inner_gaussian_approx(const LatentProblem& problem, const Hyperparameters& eta,
                                     const LaplaceSettings& settings, const LatentState* warm_start = nullptr);

/// Log joint log p(z, Y | eta) at an arbitrary feasible z (2*pi terms omitted).
double log_joint(const LatentProblem& problem, const Hyperparameters& eta, const LatentState& z,
                 const LaplaceSettings& settings);

/// Unnormalized log p~(eta | Y) including the hyperprior. Throws
/// NumericalError when the inner approximation does not converge.
double log_hyper_posterior(const LatentProblem& problem, const Hyperparameters& eta, const LaplaceSettings& settings);

struct HyperOptimum {
  Hyperparameters mode;
  double log_posterior = 0.0;
  Eigen::MatrixXd neg_hessian;  // in internal coordinates
  int iterations = 0;
  int evaluations = 0;
  bool warning = false;
  std::string message;
  LatentState latent_mode;
};

HyperOptimum optimize_hyper(const LatentProblem& problem, const Hyperparameters& init, const LaplaceSettings& settings);

/// Central-difference gradient of log_hyper_posterior in internal coordinates.
Eigen::VectorXd hyper_gradient(const LatentProblem& problem, const Hyperparameters& eta,
                               const LaplaceSettings& settings);

struct HyperPoint {
  Eigen::VectorXd theta;
  double log_posterior = 0.0;
  double weight = 1.0;  // normalized mixing weight
};

struct MarginalLikelihoodResult {
  double log_mlik = 0.0;
  double eb_log_mlik = 0.0;
  Hyperparameters eta_mode;
  Eigen::MatrixXd neg_hessian;
  HyperIntegration integration = HyperIntegration::EB;
  int grid_points_used = 1;
  int grid_points_dropped = 0;
  std::vector<HyperPoint> points;
  bool optimizer_warning = false;
  std::vector<std::string> warnings;
  LatentState latent_mode;
};

/// log of sum_k exp(log_values_k + log_weights_k).
double integrate_log_grid(std::span<const double> log_values, std::span<const double> log_weights);

MarginalLikelihoodResult marginal_likelihood(const LatentProblem& problem, const LaplaceSettings& settings,
                                             const std::optional<Hyperparameters>& init = std::nullopt);

struct LatentMarginals {
  Eigen::VectorXd beta_mean, beta_var;
  Eigen::VectorXd delta_mean, delta_var;
  Eigen::VectorXd zeta_mean, zeta_var;
  Eigen::VectorXd predictor_mean, predictor_var;
  Eigen::VectorXd p_mean, p_lower, p_upper;
};

/// Gaussian-approximation marginals mixed over the explored hyperparameter points.
LatentMarginals latent_marginals(const LatentProblem& problem, const MarginalLikelihoodResult& mlik,
                                 const LaplaceSettings& settings);

/// Per-site moments of the linear predictor under one Gaussian approximation.
struct PredictorMoments {
  Eigen::VectorXd mean, var;
};
PredictorMoments predictor_moments(const LatentProblem& problem, const GaussianApprox& approx);

/// Gauss-Hermite nodes and weights for weight function exp(-x^2).
void gauss_hermite_rule(int n, Eigen::VectorXd& nodes, Eigen::VectorXd& weights);

}  // namespace mbvs
