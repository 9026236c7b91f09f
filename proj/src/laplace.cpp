#include "mbvs/laplace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "mbvs/error.hpp"

namespace mbvs {

std::string to_string(HyperIntegration m) { return m == HyperIntegration::EB ? "eb" : "grid"; }

HyperIntegration parse_integration(std::string_view s) {
  if (s == "eb" || s == "EB") return HyperIntegration::EB;
  if (s == "grid") return HyperIntegration::grid;
  throw ConfigError("unknown integration method '" + std::string(s) + "' (expected eb or grid)");
}

// ---------------------------------------------------------------------------
// Problem construction

bool LatentProblem::constrained() const {
  return fields.structured && fields.structured->kind == LatentKind::RW1;
}

void LatentProblem::validate() const {
  const std::size_t n = T();
  require(n >= 1, "latent problem needs at least one site");
  require(active.size() == n, "active mask must have one entry per site");
  if (likelihood == LikelihoodKind::binomial) {
    require(n_reads.size() == n && y_methylated.size() == n, "binomial problem needs counts for every site");
    for (std::size_t t = 0; t < n; ++t) {
      require(y_methylated[t] >= 0 && y_methylated[t] <= n_reads[t], "binomial counts need 0 <= y <= n");
    }
  } else {
    require(static_cast<std::size_t>(y_gaussian.size()) == n, "Gaussian problem needs one response per site");
    require(gaussian_precision > 0.0, "Gaussian observation precision must be positive");
  }
  if (fields.structured) {
    fields.structured->validate();
    if (fields.structured->kind == LatentKind::RW1) require(n >= 2, "RW1 field needs at least two sites");
    if (fields.structured->kind == LatentKind::OU) require(positions.size() == n, "OU field needs positions");
  }
  require(m() >= 1 || fields.structured || fields.iid, "latent problem has no latent variables");
}

LatentProblem make_problem(const Dataset& data, const ModelVector& model, const FieldConfig& fields) {
  require(model.dim() == data.d(), "model dimension does not match the dataset's covariate count");
  const auto cols = model.included();
  const Eigen::Index T = static_cast<Eigen::Index>(data.T());
  LatentProblem p;
  p.fixed.resize(T, static_cast<Eigen::Index>(cols.size()) + 1);
  p.fixed.col(0).setOnes();
  p.fixed_names.push_back("intercept");
  for (std::size_t k = 0; k < cols.size(); ++k) {
    p.fixed.col(static_cast<Eigen::Index>(k) + 1) = data.design.col(cols[k]);
    p.fixed_names.push_back(data.column_names[static_cast<std::size_t>(cols[k])]);
  }
  p.fields = fields;
  p.likelihood = LikelihoodKind::binomial;
  p.n_reads.resize(data.T());
  p.y_methylated.resize(data.T());
  p.active.resize(data.T());
  p.positions.resize(data.T());
  for (std::size_t t = 0; t < data.T(); ++t) {
    const auto& s = data.sites[t];
    p.n_reads[t] = s.n_reads;
    p.y_methylated[t] = s.y_methylated;
    p.positions[t] = s.position;
    p.active[t] = (data.inference_mask[t] && s.n_reads > 0) ? 1 : 0;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Hyperparameters

double HyperPrior::log_density(double theta) const {
  if (kind == Kind::log_gamma) {
    return a * std::log(b) - std::lgamma(a) + a * theta - b * std::exp(theta);
  }
  const double r = theta - a;
  return 0.5 * std::log(b / (2.0 * std::numbers::pi)) - 0.5 * b * r * r;
}

double HyperParameter::natural() const {
  return role == HyperRole::pacf ? pacf_from_internal(theta) : std::exp(theta);
}

int Hyperparameters::n_free() const {
  return static_cast<int>(std::count_if(params.begin(), params.end(), [](const auto& p) { return p.free; }));
}

Eigen::VectorXd Hyperparameters::free_theta() const {
  Eigen::VectorXd out(n_free());
  Eigen::Index k = 0;
  for (const auto& p : params) {
    if (p.free) out(k++) = p.theta;
  }
  return out;
}

Hyperparameters Hyperparameters::with_free_theta(const Eigen::VectorXd& theta) const {
  require(theta.size() == n_free(), "hyperparameter vector has the wrong length");
  Hyperparameters out = *this;
  Eigen::Index k = 0;
  for (auto& p : out.params) {
    if (p.free) p.theta = theta(k++);
  }
  return out;
}

std::vector<std::string> Hyperparameters::free_names() const {
  std::vector<std::string> out;
  for (const auto& p : params) {
    if (p.free) out.push_back(p.name);
  }
  return out;
}

double Hyperparameters::log_prior() const {
  double s = 0.0;
  for (const auto& p : params) {
    if (p.free) s += p.prior.log_density(p.theta);
  }
  return s;
}

bool Hyperparameters::has(HyperRole role) const {
  return std::any_of(params.begin(), params.end(), [role](const auto& p) { return p.role == role; });
}

double Hyperparameters::natural(HyperRole role) const {
  for (const auto& p : params) {
    if (p.role == role) return p.natural();
  }
  throw ContractViolation("hyperparameter role not present");
}

double Hyperparameters::tau_beta() const { return natural(HyperRole::tau_beta); }

std::vector<double> Hyperparameters::partial_correlations() const {
  std::vector<double> out;
  for (const auto& p : params) {
    if (p.role == HyperRole::pacf) out.push_back(p.natural());
  }
  return out;
}

const HyperParameter& Hyperparameters::get(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return p;
  }
  throw ContractViolation("no hyperparameter named " + name);
}

Hyperparameters default_hyperparameters(const LatentProblem& problem, const LaplaceSettings& settings) {
  const auto gamma = HyperPrior::log_gamma(settings.prior.gamma_shape, settings.prior.gamma_rate);
  Hyperparameters h;
  if (problem.m() > 0) {
    h.params.push_back({"log_tau_beta", HyperRole::tau_beta, std::log(settings.tau_beta), settings.optimize_tau_beta, gamma});
  }
  if (problem.fields.structured) {
    const auto& s = *problem.fields.structured;
    switch (s.kind) {
      case LatentKind::RW1:
        h.params.push_back({"log_tau_eps", HyperRole::tau_field, settings.init_log_tau, true, gamma});
        break;
      case LatentKind::AR:
        h.params.push_back({"log_tau_field", HyperRole::tau_field, 0.0, true, gamma});
        for (int k = 1; k <= s.order; ++k) {
          h.params.push_back({"pacf" + std::to_string(k), HyperRole::pacf, k == 1 ? 2.0 : 0.0, true,
                              HyperPrior::normal(0.0, 0.15)});
        }
        break;
      case LatentKind::OU: {
        double mean_gap = 1.0;
        if (problem.positions.size() >= 2) {
          mean_gap = static_cast<double>(problem.positions.back() - problem.positions.front()) /
                     static_cast<double>(problem.positions.size() - 1);
        }
        h.params.push_back({"log_tau_field", HyperRole::tau_field, 0.0, true, gamma});
        h.params.push_back({"log_phi", HyperRole::log_range, -std::log(std::max(mean_gap, 1.0)), true,
                            HyperPrior::normal(0.0, 0.01)});
        break;
      }
    }
  }
  if (problem.fields.iid) {
    h.params.push_back({"log_tau_zeta", HyperRole::tau_iid, settings.init_log_tau, true, gamma});
  }
  return h;
}

// ---------------------------------------------------------------------------
// Inner Gaussian approximation

namespace {

struct Layout {
  std::size_t T = 0;
  Eigen::Index m = 0;
  bool has_delta = false;
  bool has_zeta = false;
  std::size_t nf = 0;

  explicit Layout(const LatentProblem& p)
      : T(p.T()), m(p.m()), has_delta(p.fields.structured.has_value()), has_zeta(p.fields.iid) {
    nf = T * ((has_delta ? 1 : 0) + (has_zeta ? 1 : 0));
  }
  std::size_t delta(std::size_t t) const { return t; }
  std::size_t zeta(std::size_t t) const { return has_delta ? T + t : t; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(nf) + m; }
  Eigen::Index beta(Eigen::Index j) const { return static_cast<Eigen::Index>(nf) + j; }
};

struct PriorBlocks {
  std::optional<PrecisionMatrix> structured;
  double tau_beta = 1.0;
  double tau_iid = 1.0;
  double log_pdet = 0.0;
};

PriorBlocks build_prior(const LatentProblem& p, const Hyperparameters& eta) {
  PriorBlocks out;
  if (p.m() > 0) {
    out.tau_beta = eta.tau_beta();
    out.log_pdet += p.m() * std::log(out.tau_beta);
  }
  if (p.fields.structured) {
    const auto& s = *p.fields.structured;
    const double tau = eta.natural(HyperRole::tau_field);
    switch (s.kind) {
      case LatentKind::RW1: out.structured = build_rw1_precision(p.T(), tau); break;
      case LatentKind::AR: {
        const auto kappa = eta.partial_correlations();
        out.structured = build_ar_precision(p.T(), s.order, kappa, tau);
        break;
      }
      case LatentKind::OU:
        out.structured = build_ou_precision(p.positions, tau, eta.natural(HyperRole::log_range));
        break;
    }
    out.log_pdet += constrained_logdet(*out.structured);
  }
  if (p.fields.iid) {
    out.tau_iid = eta.natural(HyperRole::tau_iid);
    out.log_pdet += static_cast<double>(p.T()) * std::log(out.tau_iid);
  }
  return out;
}

// site log-likelihood without terms that do not depend on eta
double site_loglik_kernel(const LatentProblem& p, std::size_t t, double eta) {
  if (p.likelihood == LikelihoodKind::binomial) return p.y_methylated[t] * eta - p.n_reads[t] * softplus(eta);
  const double r = p.y_gaussian(static_cast<Eigen::Index>(t)) - eta;
  return -0.5 * p.gaussian_precision * r * r;
}

double loglik_constant(const LatentProblem& p) {
  double c = 0.0;
  for (std::size_t t = 0; t < p.T(); ++t) {
    if (!p.active[t]) continue;
    if (p.likelihood == LikelihoodKind::binomial) {
      c += log_binomial_coefficient(p.n_reads[t], p.y_methylated[t]);
    } else {
      c += 0.5 * std::log(p.gaussian_precision / (2.0 * std::numbers::pi));
    }
  }
  return c;
}

// score and negative curvature of the site log-likelihood in eta
void site_derivatives(const LatentProblem& p, std::size_t t, double eta, double& score, double& weight) {
  if (p.likelihood == LikelihoodKind::binomial) {
    const double n = p.n_reads[t];
    const double prob = logistic(eta);
    score = p.y_methylated[t] - n * prob;
    weight = n * prob * (1.0 - prob);
  } else {
    score = p.gaussian_precision * (p.y_gaussian(static_cast<Eigen::Index>(t)) - eta);
    weight = p.gaussian_precision;
  }
}

}  // namespace

/// Factorized negative Hessian H = Q_prior + A' W A at a latent point. The IG
/// block is diagonal and is eliminated first; the remaining (delta, beta)
/// system has a banded field block and a dense coefficient block.
class PosteriorFactor {
 public:
  PosteriorFactor(const LatentProblem& p, const PriorBlocks& prior, const Eigen::VectorXd& w)
      : layout_(p), constrained_(p.constrained()) {
    const auto& L = layout_;
    const auto T = static_cast<Eigen::Index>(L.T);
    w_ = w;
    shrink_ = Eigen::VectorXd::Zero(T);
    cond_var_ = Eigen::VectorXd::Zero(T);
    Eigen::VectorXd wr = w;  // weights left after eliminating zeta
    double logdet_zeta = 0.0;
    if (L.has_zeta) {
      for (Eigen::Index t = 0; t < T; ++t) {
        const double denom = prior.tau_iid + w(t);
        shrink_(t) = w(t) / denom;
        cond_var_(t) = 1.0 / denom;
        wr(t) = w(t) * prior.tau_iid / denom;
        logdet_zeta += std::log(denom);
      }
    }
    double logdet_b = 0.0;
    if (L.has_delta) {
      BandedSymmetric b = prior.structured->Q;
      for (std::size_t t = 0; t < L.T; ++t) b.add(t, t, wr(static_cast<Eigen::Index>(t)));
      chol_b_ = BandCholesky(b);
      logdet_b = chol_b_.log_det();
    }
    double logdet_s = 0.0;
    if (L.m > 0) {
      const Eigen::MatrixXd& X = p.fixed;
      const Eigen::MatrixXd wx = wr.asDiagonal() * X;
      Eigen::MatrixXd s = X.transpose() * wx;
      s.diagonal().array() += prior.tau_beta;
      if (L.has_delta) {
        c_ = wx;
        g_ = chol_b_.solve(c_);
        s.noalias() -= c_.transpose() * g_;
      }
      llt_s_.compute(s);
      if (llt_s_.info() != Eigen::Success) throw NumericalError("coefficient Schur complement is not positive definite");
      const auto& ls = llt_s_.matrixLLT();
      for (Eigen::Index j = 0; j < L.m; ++j) {
        if (!(ls(j, j) > 0.0)) throw FactorizationError(L.T + static_cast<std::size_t>(j), ls(j, j));
        logdet_s += 2.0 * std::log(ls(j, j));
      }
    }
    log_det_h_ = logdet_zeta + logdet_b + logdet_s;

    if (constrained_) {
      Eigen::VectorXd a = Eigen::VectorXd::Zero(L.size());
      for (std::size_t t = 0; t < L.T; ++t) a(static_cast<Eigen::Index>(L.delta(t))) = 1.0;
      hinv_a_ = solve(p, a);
      a_hinv_a_ = a_dot(hinv_a_);
      if (!(a_hinv_a_ > 0.0)) throw NumericalError("constraint direction has non-positive posterior variance");
    }
  }

  const Layout& layout() const { return layout_; }
  bool constrained() const { return constrained_; }

  /// H^{-1} r for r in the full latent layout.
  Eigen::VectorXd solve(const LatentProblem& p, const Eigen::VectorXd& r) const {
    const auto& L = layout_;
    const auto T = static_cast<Eigen::Index>(L.T);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(r.size());
    Eigen::VectorXd sr;  // shrink * r_zeta
    if (L.has_zeta) sr = shrink_.cwiseProduct(r.segment(static_cast<Eigen::Index>(L.zeta(0)), T));
    Eigen::VectorXd yd;
    if (L.has_delta) {
      yd = r.head(T);
      if (L.has_zeta) yd -= sr;
      chol_b_.solve_in_place(std::span<double>(yd.data(), L.T));
    }
    Eigen::VectorXd beta;
    if (L.m > 0) {
      Eigen::VectorXd rb = r.tail(L.m);
      if (L.has_zeta) rb.noalias() -= p.fixed.transpose() * sr;
      if (L.has_delta) rb.noalias() -= c_.transpose() * yd;
      beta = llt_s_.solve(rb);
      out.tail(L.m) = beta;
      if (L.has_delta) yd.noalias() -= g_ * beta;
    }
    if (L.has_delta) out.head(T) = yd;
    if (L.has_zeta) {
      Eigen::VectorXd u = L.m > 0 ? Eigen::VectorXd(p.fixed * beta) : Eigen::VectorXd::Zero(T);
      if (L.has_delta) u += yd;
      const auto z0 = static_cast<Eigen::Index>(L.zeta(0));
      out.segment(z0, T) = cond_var_.cwiseProduct(r.segment(z0, T) - w_.cwiseProduct(u));
    }
    return out;
  }

  /// Newton step restricted to the constraint subspace.
  Eigen::VectorXd constrained_solve(const LatentProblem& p, const Eigen::VectorXd& g) const {
    Eigen::VectorXd s = solve(p, g);
    if (constrained_) s -= hinv_a_ * (a_dot(s) / a_hinv_a_);
    return s;
  }

  /// log det of H restricted to the constraint subspace.
  double subspace_log_det() const {
    if (!constrained_) return log_det_h_;
    return log_det_h_ + std::log(a_hinv_a_) - std::log(static_cast<double>(layout_.T));
  }

  /// Posterior variances of every coordinate and of the linear predictor.
  void variances(const LatentProblem& p, Eigen::VectorXd& coord_var, Eigen::VectorXd& pred_var) const {
    const auto& L = layout_;
    const auto T = static_cast<Eigen::Index>(L.T);
    BandedSymmetric binv;
    if (L.has_delta) binv = chol_b_.band_inverse();
    Eigen::MatrixXd s_inv;
    if (L.m > 0) s_inv = llt_s_.solve(Eigen::MatrixXd::Identity(L.m, L.m));
    const double inv_aha = constrained_ ? 1.0 / a_hinv_a_ : 0.0;
    coord_var = Eigen::VectorXd::Zero(L.size());
    pred_var.resize(T);
    for (Eigen::Index j = 0; j < L.m; ++j) {
      double v = s_inv(j, j);
      if (constrained_) v -= hinv_a_(L.beta(j)) * hinv_a_(L.beta(j)) * inv_aha;
      coord_var(L.beta(j)) = v;
    }
    Eigen::VectorXd diff(L.m);
    for (Eigen::Index t = 0; t < T; ++t) {
      const auto ts = static_cast<std::size_t>(t);
      // u_t = delta_t + x_t' beta, marginal over zeta
      double var_u = 0.0;
      if (L.has_delta) {
        double vd = binv(ts, ts);
        var_u = vd;
        if (L.m > 0) {
          vd += g_.row(t) * s_inv * g_.row(t).transpose();
          diff = g_.row(t).transpose() - p.fixed.row(t).transpose();
          var_u += diff.dot(s_inv * diff);
        }
        if (constrained_) vd -= hinv_a_(t) * hinv_a_(t) * inv_aha;
        coord_var(static_cast<Eigen::Index>(L.delta(ts))) = std::max(vd, 0.0);
      } else if (L.m > 0) {
        var_u = p.fixed.row(t) * s_inv * p.fixed.row(t).transpose();
      }
      if (constrained_) {
        double c = hinv_a_(t);
        if (L.m > 0) c += p.fixed.row(t).dot(hinv_a_.tail(L.m));
        var_u -= c * c * inv_aha;
      }
      var_u = std::max(var_u, 0.0);
      if (L.has_zeta) {
        const double s = shrink_(t);
        coord_var(static_cast<Eigen::Index>(L.zeta(ts))) = s * s * var_u + cond_var_(t);
        pred_var(t) = (1.0 - s) * (1.0 - s) * var_u + cond_var_(t);
      } else {
        pred_var(t) = var_u;
      }
    }
  }

 private:
  double a_dot(const Eigen::VectorXd& x) const {
    return layout_.has_delta ? x.head(static_cast<Eigen::Index>(layout_.T)).sum() : 0.0;
  }

  Layout layout_;
  bool constrained_ = false;
  Eigen::VectorXd w_;
  Eigen::VectorXd shrink_;    // w / (tau_iid + w)
  Eigen::VectorXd cond_var_;  // 1 / (tau_iid + w)
  BandCholesky chol_b_;
  Eigen::MatrixXd c_;  // field-coefficient coupling
  Eigen::MatrixXd g_;  // B^{-1} C
  Eigen::LLT<Eigen::MatrixXd> llt_s_;
  double log_det_h_ = 0.0;
  Eigen::VectorXd hinv_a_;
  double a_hinv_a_ = 0.0;
};

namespace {

Eigen::VectorXd pack(const Layout& L, const LatentState& s) {
  Eigen::VectorXd z = Eigen::VectorXd::Zero(L.size());
  for (std::size_t t = 0; t < L.T; ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    if (L.has_delta && s.delta.size() > 0) z(static_cast<Eigen::Index>(L.delta(t))) = s.delta(ti);
    if (L.has_zeta && s.zeta.size() > 0) z(static_cast<Eigen::Index>(L.zeta(t))) = s.zeta(ti);
  }
  if (L.m > 0 && s.beta.size() == L.m) z.tail(L.m) = s.beta;
  return z;
}

LatentState unpack(const Layout& L, const Eigen::VectorXd& z) {
  LatentState s;
  s.beta = z.tail(L.m);
  const auto T = static_cast<Eigen::Index>(L.T);
  if (L.has_delta) s.delta.resize(T);
  if (L.has_zeta) s.zeta.resize(T);
  for (std::size_t t = 0; t < L.T; ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    if (L.has_delta) s.delta(ti) = z(static_cast<Eigen::Index>(L.delta(t)));
    if (L.has_zeta) s.zeta(ti) = z(static_cast<Eigen::Index>(L.zeta(t)));
  }
  return s;
}

Eigen::VectorXd predictor(const LatentProblem& p, const Layout& L, const Eigen::VectorXd& z) {
  Eigen::VectorXd eta = L.m > 0 ? Eigen::VectorXd(p.fixed * z.tail(L.m)) : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(L.T));
  for (std::size_t t = 0; t < L.T; ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    if (L.has_delta) eta(ti) += z(static_cast<Eigen::Index>(L.delta(t)));
    if (L.has_zeta) eta(ti) += z(static_cast<Eigen::Index>(L.zeta(t)));
  }
  return eta;
}

// -1/2 z' Q_prior z
double prior_quadratic(const Layout& L, const PriorBlocks& prior, const Eigen::VectorXd& z) {
  double q = 0.0;
  if (L.m > 0) q += prior.tau_beta * z.tail(L.m).squaredNorm();
  if (L.has_delta) {
    Eigen::VectorXd delta(static_cast<Eigen::Index>(L.T));
    for (std::size_t t = 0; t < L.T; ++t) delta(static_cast<Eigen::Index>(t)) = z(static_cast<Eigen::Index>(L.delta(t)));
    q += prior.structured->Q.quadratic_form(delta);
  }
  if (L.has_zeta) {
    for (std::size_t t = 0; t < L.T; ++t) {
      const double v = z(static_cast<Eigen::Index>(L.zeta(t)));
      q += prior.tau_iid * v * v;
    }
  }
  return -0.5 * q;
}

double loglik_kernel(const LatentProblem& p, const Eigen::VectorXd& eta) {
  double s = 0.0;
  for (std::size_t t = 0; t < p.T(); ++t) {
    if (p.active[t]) s += site_loglik_kernel(p, t, eta(static_cast<Eigen::Index>(t)));
  }
  return s;
}

Eigen::VectorXd gradient(const LatentProblem& p, const Layout& L, const PriorBlocks& prior, const Eigen::VectorXd& z,
                         const Eigen::VectorXd& eta, Eigen::VectorXd& weights) {
  Eigen::VectorXd score = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(L.T));
  weights = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(L.T));
  for (std::size_t t = 0; t < L.T; ++t) {
    if (!p.active[t]) continue;
    const auto ti = static_cast<Eigen::Index>(t);
    site_derivatives(p, t, eta(ti), score(ti), weights(ti));
  }
  Eigen::VectorXd g = Eigen::VectorXd::Zero(L.size());
  if (L.has_delta) {
    Eigen::VectorXd delta(static_cast<Eigen::Index>(L.T));
    for (std::size_t t = 0; t < L.T; ++t) delta(static_cast<Eigen::Index>(t)) = z(static_cast<Eigen::Index>(L.delta(t)));
    const Eigen::VectorXd qd = prior.structured->Q.multiply(delta);
    for (std::size_t t = 0; t < L.T; ++t) {
      const auto ti = static_cast<Eigen::Index>(t);
      g(static_cast<Eigen::Index>(L.delta(t))) = score(ti) - qd(ti);
    }
  }
  if (L.has_zeta) {
    for (std::size_t t = 0; t < L.T; ++t) {
      const auto ti = static_cast<Eigen::Index>(t);
      const auto zi = static_cast<Eigen::Index>(L.zeta(t));
      g(zi) = score(ti) - prior.tau_iid * z(zi);
    }
  }
  if (L.m > 0) g.tail(L.m) = p.fixed.transpose() * score - prior.tau_beta * z.tail(L.m);
  return g;
}

void project(const Layout& L, Eigen::VectorXd& v) {
  double mean = 0.0;
  for (std::size_t t = 0; t < L.T; ++t) mean += v(static_cast<Eigen::Index>(L.delta(t)));
  mean /= static_cast<double>(L.T);
  for (std::size_t t = 0; t < L.T; ++t) v(static_cast<Eigen::Index>(L.delta(t))) -= mean;
}

}  // namespace

GaussianApprox inner_gaussian_approx(const LatentProblem& problem, const Hyperparameters& eta,
                                     const LaplaceSettings& settings, const LatentState* warm_start) {
  const Layout L(problem);
  const PriorBlocks prior = build_prior(problem, eta);
  const bool constrained = problem.constrained();

  Eigen::VectorXd z = warm_start ? pack(L, *warm_start) : Eigen::VectorXd::Zero(L.size());
  if (constrained) project(L, z);

  auto objective = [&](const Eigen::VectorXd& x) {
    return loglik_kernel(problem, predictor(problem, L, x)) + prior_quadratic(L, prior, x);
  };

  GaussianApprox out;
  Eigen::VectorXd lin = predictor(problem, L, z);
  double f = loglik_kernel(problem, lin) + prior_quadratic(L, prior, z);
  std::shared_ptr<PosteriorFactor> factor;
  for (int iter = 0;; ++iter) {
    Eigen::VectorXd w;
    Eigen::VectorXd g = gradient(problem, L, prior, z, lin, w);
    if (constrained) project(L, g);
    out.gradient_norm = g.size() > 0 ? g.lpNorm<Eigen::Infinity>() : 0.0;
    factor = std::make_shared<PosteriorFactor>(problem, prior, w);
    if (out.gradient_norm <= settings.newton_tol) {
      out.converged = true;
      break;
    }
    if (iter >= settings.newton_max_iter) break;

    const Eigen::VectorXd step = factor->constrained_solve(problem, g);
    double alpha = 1.0;
    bool accepted = false;
    Eigen::VectorXd z_new;
    double f_new = f;
    const double slack = 1e-12 * std::max(1.0, std::abs(f));
    for (int h = 0; h <= settings.max_step_halvings; ++h) {
      z_new = z + alpha * step;
      if (constrained) project(L, z_new);
      f_new = objective(z_new);
      if (std::isfinite(f_new) && f_new >= f - slack) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
    z = std::move(z_new);
    f = f_new;
    lin = predictor(problem, L, z);
    out.newton_iterations = iter + 1;
  }

  out.mode = unpack(L, z);
  out.linear_predictor = lin;
  out.log_likelihood = loglik_constant(problem) + loglik_kernel(problem, lin);
  out.log_prior_density = prior_quadratic(L, prior, z) + 0.5 * prior.log_pdet;
  out.log_det = factor->subspace_log_det();
  out.factor = std::move(factor);
  return out;
}

double log_joint(const LatentProblem& problem, const Hyperparameters& eta, const LatentState& z,
                 const LaplaceSettings&) {
  const Layout L(problem);
  const PriorBlocks prior = build_prior(problem, eta);
  const Eigen::VectorXd zv = pack(L, z);
  return loglik_constant(problem) + loglik_kernel(problem, predictor(problem, L, zv)) + prior_quadratic(L, prior, zv) + 0.5 * prior.log_pdet;
}

double log_hyper_posterior(const LatentProblem& problem, const Hyperparameters& eta, const LaplaceSettings& settings) {
  const auto approx = inner_gaussian_approx(problem, eta, settings);
  if (!approx.converged) {
    throw NumericalError("inner Newton iterations did not converge (gradient norm " +
                         std::to_string(approx.gradient_norm) + ")");
  }
  return approx.log_evidence() + eta.log_prior();
}

// ---------------------------------------------------------------------------
// Hyperparameter optimization

namespace {

struct HyperObjective {
  const LatentProblem& problem;
  const Hyperparameters& base;
  const LaplaceSettings& settings;
  int evaluations = 0;

  struct Value {
    bool ok = false;
    double f = -std::numeric_limits<double>::infinity();
    LatentState mode;
  };

  Value operator()(const Eigen::VectorXd& theta, const LatentState* warm) {
    ++evaluations;
    Value v;
    try {
      const Hyperparameters h = base.with_free_theta(theta);
      auto approx = inner_gaussian_approx(problem, h, settings, warm);
      if (!approx.converged) return v;
      v.f = approx.log_evidence() + h.log_prior();
      v.ok = std::isfinite(v.f);
      v.mode = std::move(approx.mode);
    } catch (const NumericalError&) {
      v.ok = false;
    } catch (const ContractViolation&) {
      v.ok = false;
    }
    return v;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& theta, const LatentState& warm, bool& ok) {
    const double h = settings.fd_step;
    Eigen::VectorXd g(theta.size());
    ok = true;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Eigen::VectorXd tp = theta, tm = theta;
      tp(i) += h;
      tm(i) -= h;
      const auto fp = (*this)(tp, &warm);
      const auto fm = (*this)(tm, &warm);
      if (!fp.ok || !fm.ok) {
        ok = false;
        g(i) = 0.0;
        continue;
      }
      g(i) = (fp.f - fm.f) / (2.0 * h);
    }
    return g;
  }

  Eigen::MatrixXd neg_hessian(const Eigen::VectorXd& theta, double f0, const LatentState& warm, bool& ok) {
    const double h = settings.hessian_step;
    const Eigen::Index k = theta.size();
    Eigen::MatrixXd H(k, k);
    ok = true;
    auto eval = [&](const Eigen::VectorXd& t) {
      auto v = (*this)(t, &warm);
      if (!v.ok) ok = false;
      return v.f;
    };
    for (Eigen::Index i = 0; i < k; ++i) {
      Eigen::VectorXd tp = theta, tm = theta;
      tp(i) += h;
      tm(i) -= h;
      H(i, i) = -(eval(tp) - 2.0 * f0 + eval(tm)) / (h * h);
      for (Eigen::Index j = 0; j < i; ++j) {
        Eigen::VectorXd tpp = theta, tpm = theta, tmp = theta, tmm = theta;
        tpp(i) += h; tpp(j) += h;
        tpm(i) += h; tpm(j) -= h;
        tmp(i) -= h; tmp(j) += h;
        tmm(i) -= h; tmm(j) -= h;
        H(i, j) = -(eval(tpp) - eval(tpm) - eval(tmp) + eval(tmm)) / (4.0 * h * h);
        H(j, i) = H(i, j);
      }
    }
    return H;
  }
};

Eigen::VectorXd clamp(const Eigen::VectorXd& x, const LaplaceSettings& s) {
  return x.cwiseMax(s.theta_lower).cwiseMin(s.theta_upper);
}

}  // namespace

Eigen::VectorXd hyper_gradient(const LatentProblem& problem, const Hyperparameters& eta,
                               const LaplaceSettings& settings) {
  HyperObjective obj{problem, eta, settings};
  const Eigen::VectorXd theta = eta.free_theta();
  const auto center = obj(theta, nullptr);
  if (!center.ok) throw NumericalError("hyperparameter posterior cannot be evaluated at this point");
  bool ok = false;
  Eigen::VectorXd g = obj.gradient(theta, center.mode, ok);
  if (!ok) throw NumericalError("hyperparameter gradient evaluation failed");
  return g;
}

HyperOptimum optimize_hyper(const LatentProblem& problem, const Hyperparameters& init, const LaplaceSettings& settings) {
  HyperObjective obj{problem, init, settings};
  HyperOptimum out;
  Eigen::VectorXd x = clamp(init.free_theta(), settings);
  auto current = obj(x, nullptr);
  if (!current.ok) {
    throw NumericalError("hyperparameter posterior cannot be evaluated at the initial point");
  }
  const Eigen::Index k = x.size();
  if (k > 0) {
    bool ok = true;
    Eigen::VectorXd g = obj.gradient(x, current.mode, ok);
    Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(k, k);
    for (int iter = 0; iter < settings.hyper_max_iter; ++iter) {
      if (!ok) {
        out.warning = true;
        out.message = "gradient evaluation failed";
        break;
      }
      if (g.lpNorm<Eigen::Infinity>() < settings.hyper_grad_tol) break;
      Eigen::VectorXd p = hinv * g;
      if (g.dot(p) <= 0.0) {
        hinv.setIdentity();
        p = g;
      }
      const double pmax = p.lpNorm<Eigen::Infinity>();
      if (pmax > settings.max_hyper_step) p *= settings.max_hyper_step / pmax;

      double alpha = 1.0;
      bool accepted = false;
      Eigen::VectorXd x_new;
      HyperObjective::Value next;
      for (int h = 0; h < 30; ++h) {
        x_new = clamp(x + alpha * p, settings);
        next = obj(x_new, &current.mode);
        if (next.ok && next.f >= current.f + 1e-4 * g.dot(x_new - x)) {
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        out.warning = true;
        out.message = "line search failed; returning best iterate";
        break;
      }
      const Eigen::VectorXd s = x_new - x;
      const double f_change = next.f - current.f;
      x = x_new;
      current = std::move(next);
      out.iterations = iter + 1;
      Eigen::VectorXd g_new = obj.gradient(x, current.mode, ok);
      const Eigen::VectorXd y = g - g_new;  // gradient change of the minimized objective -f
      const double sy = s.dot(y);
      if (sy > 1e-12) {
        const double rho = 1.0 / sy;
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(k, k);
        hinv = (I - rho * s * y.transpose()) * hinv * (I - rho * y * s.transpose()) + rho * s * s.transpose();
      }
      g = g_new;
      if (s.lpNorm<Eigen::Infinity>() < 1e-9 && std::abs(f_change) < 1e-12) break;
    }
    bool hok = true;
    out.neg_hessian = obj.neg_hessian(x, current.f, current.mode, hok);
    if (!hok) {
      out.warning = true;
      out.message = "Hessian evaluation failed at some finite-difference points";
    }
  } else {
    out.neg_hessian.resize(0, 0);
  }
  out.mode = init.with_free_theta(x);
  out.log_posterior = current.f;
  out.latent_mode = std::move(current.mode);
  out.evaluations = obj.evaluations;
  return out;
}

// ---------------------------------------------------------------------------
// Marginal likelihood

double integrate_log_grid(std::span<const double> log_values, std::span<const double> log_weights) {
  require(log_values.size() == log_weights.size() && !log_values.empty(), "grid needs matching nonempty inputs");
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < log_values.size(); ++i) mx = std::max(mx, log_values[i] + log_weights[i]);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (std::size_t i = 0; i < log_values.size(); ++i) s += std::exp(log_values[i] + log_weights[i] - mx);
  return mx + std::log(s);
}

namespace {

// Clamps eigenvalues so the Gaussian integral over eta stays finite.
double log_det_pd(const Eigen::MatrixXd& H, bool& adjusted) {
  adjusted = false;
  if (H.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (H + H.transpose()));
  double s = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    double ev = es.eigenvalues()(i);
    if (!(ev > 1e-6)) {
      ev = 1e-6;
      adjusted = true;
    }
    s += std::log(ev);
  }
  return s;
}

}  // namespace

MarginalLikelihoodResult marginal_likelihood(const LatentProblem& problem, const LaplaceSettings& settings,
                                             const std::optional<Hyperparameters>& init) {
  problem.validate();
  Hyperparameters start = init ? *init : default_hyperparameters(problem, settings);
  auto opt = optimize_hyper(problem, start, settings);
  MarginalLikelihoodResult res;
  res.eta_mode = opt.mode;
  res.neg_hessian = opt.neg_hessian;
  res.integration = settings.method;
  res.optimizer_warning = opt.warning;
  res.latent_mode = opt.latent_mode;
  if (opt.warning) res.warnings.push_back(opt.message);

  const int k = opt.mode.n_free();
  bool adjusted = false;
  const double logdet = log_det_pd(opt.neg_hessian, adjusted);
  if (adjusted) res.warnings.push_back("negative Hessian of the hyperparameter posterior was not positive definite");
  res.eb_log_mlik = opt.log_posterior + 0.5 * k * std::log(2.0 * std::numbers::pi) - 0.5 * logdet;

  const Eigen::VectorXd center = opt.mode.free_theta();
  if (settings.method == HyperIntegration::EB || k == 0) {
    res.log_mlik = settings.method == HyperIntegration::EB ? res.eb_log_mlik : opt.log_posterior;
    res.points.push_back({center, opt.log_posterior, 1.0});
    res.grid_points_used = 1;
    return res;
  }

  HyperObjective obj{problem, opt.mode, settings};
  const LatentState& warm = opt.latent_mode;
  const int half = (settings.grid_max_points_per_axis - 1) / 2;
  std::vector<std::vector<int>> offsets(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    auto& axis = offsets[static_cast<std::size_t>(j)];
    axis.push_back(0);
    for (int dir : {-1, 1}) {
      for (int i = 1; i <= half; ++i) {
        Eigen::VectorXd t = center;
        t(j) += dir * i * settings.grid_step;
        const auto v = obj(t, &warm);
        if (!v.ok) break;
        axis.push_back(dir * i);
        if (v.f < opt.log_posterior - settings.grid_drop) break;
      }
    }
    std::sort(axis.begin(), axis.end());
  }

  std::vector<double> values;
  std::vector<Eigen::VectorXd> thetas;
  std::vector<int> idx(static_cast<std::size_t>(k), 0);
  while (true) {
    Eigen::VectorXd t = center;
    for (int j = 0; j < k; ++j) t(j) += offsets[static_cast<std::size_t>(j)][static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])] * settings.grid_step;
    const auto v = obj(t, &warm);
    if (v.ok) {
      values.push_back(v.f);
      thetas.push_back(t);
    } else {
      ++res.grid_points_dropped;
    }
    int j = 0;
    for (; j < k; ++j) {
      auto& i = idx[static_cast<std::size_t>(j)];
      if (++i < static_cast<int>(offsets[static_cast<std::size_t>(j)].size())) break;
      i = 0;
    }
    if (j == k) break;
  }
  if (values.empty()) throw NumericalError("every hyperparameter grid point failed");
  if (res.grid_points_dropped > 0) {
    res.warnings.push_back(std::to_string(res.grid_points_dropped) + " grid points dropped after inner failures");
  }
  const double log_area = k * std::log(settings.grid_step);
  const std::vector<double> log_w(values.size(), log_area);
  res.log_mlik = integrate_log_grid(values, log_w);
  for (std::size_t i = 0; i < values.size(); ++i) {
    res.points.push_back({thetas[i], values[i], std::exp(values[i] + log_area - res.log_mlik)});
  }
  res.grid_points_used = static_cast<int>(values.size());
  return res;
}

// ---------------------------------------------------------------------------
// Latent marginals

void gauss_hermite_rule(int n, Eigen::VectorXd& nodes, Eigen::VectorXd& weights) {
  require(n >= 1, "Gauss-Hermite rule needs at least one node");
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    J(i, i - 1) = J(i - 1, i) = std::sqrt(0.5 * i);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  nodes = es.eigenvalues();
  weights = std::sqrt(std::numbers::pi) * es.eigenvectors().row(0).transpose().array().square();
}

PredictorMoments predictor_moments(const LatentProblem& problem, const GaussianApprox& approx) {
  require(approx.factor != nullptr, "Gaussian approximation carries no factorization");
  PredictorMoments out;
  out.mean = approx.linear_predictor;
  Eigen::VectorXd coord;
  approx.factor->variances(problem, coord, out.var);
  return out;
}

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double mixture_quantile(const std::vector<double>& w, const std::vector<double>& mu, const std::vector<double>& sd,
                        double q) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t k = 0; k < w.size(); ++k) {
    lo = std::min(lo, mu[k] - 12.0 * sd[k] - 1e-12);
    hi = std::max(hi, mu[k] + 12.0 * sd[k] + 1e-12);
  }
  for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    double c = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      c += w[k] * (sd[k] > 0.0 ? normal_cdf((mid - mu[k]) / sd[k]) : (mid >= mu[k] ? 1.0 : 0.0));
    }
    (c < q ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

LatentMarginals latent_marginals(const LatentProblem& problem, const MarginalLikelihoodResult& mlik,
                                 const LaplaceSettings& settings) {
  require(!mlik.points.empty(), "marginal likelihood result has no hyperparameter points");
  const Layout L(problem);
  const auto T = static_cast<Eigen::Index>(L.T);
  const std::size_t K = mlik.points.size();

  std::vector<Eigen::VectorXd> zmean, zvar, pmean, pvar;
  std::vector<double> w;
  for (const auto& pt : mlik.points) {
    const Hyperparameters h = mlik.eta_mode.with_free_theta(pt.theta);
    auto approx = inner_gaussian_approx(problem, h, settings, &mlik.latent_mode);
    if (!approx.converged) throw NumericalError("inner approximation failed while computing latent marginals");
    Eigen::VectorXd cv, pv;
    approx.factor->variances(problem, cv, pv);
    zmean.push_back(pack(L, approx.mode));
    zvar.push_back(cv);
    pmean.push_back(approx.linear_predictor);
    pvar.push_back(pv);
    w.push_back(pt.weight);
  }
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x /= wsum;

  Eigen::VectorXd zm = Eigen::VectorXd::Zero(L.size()), z2 = Eigen::VectorXd::Zero(L.size());
  Eigen::VectorXd em = Eigen::VectorXd::Zero(T), e2 = Eigen::VectorXd::Zero(T);
  for (std::size_t k = 0; k < K; ++k) {
    zm += w[k] * zmean[k];
    z2 += w[k] * (zvar[k].array() + zmean[k].array().square()).matrix();
    em += w[k] * pmean[k];
    e2 += w[k] * (pvar[k].array() + pmean[k].array().square()).matrix();
  }
  const Eigen::VectorXd zv = (z2.array() - zm.array().square()).cwiseMax(0.0);

  LatentMarginals out;
  const LatentState mean_state = unpack(L, zm);
  const LatentState var_state = unpack(L, zv);
  out.beta_mean = mean_state.beta;
  out.beta_var = var_state.beta;
  out.delta_mean = mean_state.delta;
  out.delta_var = var_state.delta;
  out.zeta_mean = mean_state.zeta;
  out.zeta_var = var_state.zeta;
  out.predictor_mean = em;
  out.predictor_var = (e2.array() - em.array().square()).cwiseMax(0.0);

  Eigen::VectorXd gh_x, gh_w;
  if (settings.mapping == ProbabilityMapping::gauss_hermite) gauss_hermite_rule(settings.gauss_hermite_nodes, gh_x, gh_w);
  out.p_mean.resize(T);
  out.p_lower.resize(T);
  out.p_upper.resize(T);
  std::vector<double> mu(K), sd(K);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      mu[k] = pmean[k](t);
      sd[k] = std::sqrt(pvar[k](t));
    }
    if (settings.mapping == ProbabilityMapping::gauss_hermite) {
      double m = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < gh_x.size(); ++i) s += gh_w(i) * logistic(mu[k] + std::numbers::sqrt2 * sd[k] * gh_x(i));
        m += w[k] * s / std::sqrt(std::numbers::pi);
      }
      out.p_mean(t) = m;
    } else {
      out.p_mean(t) = logistic(em(t));
    }
    out.p_lower(t) = logistic(mixture_quantile(w, mu, sd, settings.lower_quantile));
    out.p_upper(t) = logistic(mixture_quantile(w, mu, sd, settings.upper_quantile));
    out.p_lower(t) = std::min(out.p_lower(t), out.p_mean(t));
    out.p_upper(t) = std::max(out.p_upper(t), out.p_mean(t));
  }
  return out;
}

}  // namespace mbvs
