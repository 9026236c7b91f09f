#include "mbvs/latent_structures.hpp"

#include <cmath>

#include "mbvs/error.hpp"

namespace mbvs {

LatentStructureSpec LatentStructureSpec::ar(int p) {
  LatentStructureSpec s{LatentKind::AR, p};
  s.validate();
  return s;
}

LatentStructureSpec LatentStructureSpec::parse(std::string_view name) {
  if (name == "rw1") return rw1();
  if (name == "ou") return ou();
  if (name == "ar1") return ar(1);
  if (name == "ar2") return ar(2);
  if (name == "ar3") return ar(3);
  throw ConfigError("unknown latent structure '" + std::string(name) + "' (expected rw1, ar1, ar2, ar3 or ou)");
}

std::string LatentStructureSpec::name() const {
  switch (kind) {
    case LatentKind::RW1: return "rw1";
    case LatentKind::OU: return "ou";
    case LatentKind::AR: return "ar" + std::to_string(order);
  }
  return "?";
}

void LatentStructureSpec::validate() const {
  if (kind == LatentKind::AR) {
    require(order >= 1 && order <= 3, "AR order must be 1, 2 or 3");
  } else {
    require(order == 0, "only AR structures carry an order");
  }
}

PrecisionMatrix build_ig_precision(std::size_t T, double tau) {
  require(T >= 1, "IG field needs T >= 1");
  require(tau > 0.0 && std::isfinite(tau), "IG precision must be positive");
  PrecisionMatrix out{BandedSymmetric(T, 0), tau, T, false};
  for (std::size_t i = 0; i < T; ++i) out.Q.at(i, i) = tau;
  return out;
}

PrecisionMatrix build_rw1_precision(std::size_t T, double tau) {
  require(T >= 2, "RW1 field needs T >= 2");
  require(tau > 0.0 && std::isfinite(tau), "RW1 precision must be positive");
  PrecisionMatrix out{BandedSymmetric(T, 1), tau, T - 1, true};
  for (std::size_t i = 0; i < T; ++i) {
    out.Q.at(i, i) = (i == 0 || i == T - 1) ? tau : 2.0 * tau;
    if (i > 0) out.Q.at(i, i - 1) = -tau;
  }
  return out;
}

std::vector<double> pacf_to_ar(std::span<const double> kappa) {
  std::vector<double> phi;
  for (std::size_t k = 0; k < kappa.size(); ++k) {
    require(kappa[k] > -1.0 && kappa[k] < 1.0, "partial correlations must lie in (-1,1)");
    std::vector<double> next(k + 1);
    next[k] = kappa[k];
    for (std::size_t j = 0; j < k; ++j) next[j] = phi[j] - kappa[k] * phi[k - 1 - j];
    phi = std::move(next);
  }
  return phi;
}

std::vector<double> pacf_to_autocorrelation(std::span<const double> kappa, std::size_t lags) {
  const std::size_t p = kappa.size();
  std::vector<double> rho(lags + 1, 0.0);
  rho[0] = 1.0;
  std::vector<double> phi;  // coefficients of the order-(k-1) predictor
  double v = 1.0;
  for (std::size_t k = 1; k <= std::min(p, lags); ++k) {
    double r = kappa[k - 1] * v;
    for (std::size_t j = 1; j < k; ++j) r += phi[j - 1] * rho[k - j];
    rho[k] = r;
    v *= 1.0 - kappa[k - 1] * kappa[k - 1];
    phi = pacf_to_ar(kappa.first(k));
  }
  if (lags > p) {
    const auto a = pacf_to_ar(kappa);
    for (std::size_t k = p + 1; k <= lags; ++k) {
      double r = 0.0;
      for (std::size_t j = 1; j <= p; ++j) r += a[j - 1] * rho[k - j];
      rho[k] = r;
    }
  }
  return rho;
}

PrecisionMatrix build_ar_precision(std::size_t T, int p, std::span<const double> kappa, double tau) {
  require(p >= 1 && p <= 3, "AR order must be 1, 2 or 3");
  require(kappa.size() == static_cast<std::size_t>(p), "need one partial correlation per AR lag");
  require(T >= 1, "AR field needs T >= 1");
  require(tau > 0.0 && std::isfinite(tau), "AR marginal precision must be positive");
  const auto P = static_cast<std::size_t>(p);
  const auto a = pacf_to_ar(kappa);  // validates stationarity
  double innovation_var = 1.0;
  for (double k : kappa) innovation_var *= 1.0 - k * k;

  PrecisionMatrix out{BandedSymmetric(T, P), tau, T, false};
  // stationary block for the first min(T, p) values
  const std::size_t head = std::min(T, P);
  const auto rho = pacf_to_autocorrelation(kappa, head);
  Eigen::MatrixXd gamma(static_cast<Eigen::Index>(head), static_cast<Eigen::Index>(head));
  for (std::size_t i = 0; i < head; ++i) {
    for (std::size_t j = 0; j < head; ++j) {
      gamma(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rho[i > j ? i - j : j - i];
    }
  }
  const Eigen::MatrixXd gamma_inv = gamma.llt().solve(Eigen::MatrixXd::Identity(gamma.rows(), gamma.cols()));
  for (std::size_t i = 0; i < head; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      out.Q.at(i, j) = gamma_inv(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }
  // conditional terms x_t - sum_k a_k x_{t-k} ~ N(0, innovation_var)
  std::vector<double> c(P + 1);
  for (std::size_t t = P; t < T; ++t) {
    c[0] = 1.0;
    for (std::size_t k = 1; k <= P; ++k) c[k] = -a[k - 1];
    for (std::size_t k1 = 0; k1 <= P; ++k1) {
      for (std::size_t k2 = k1; k2 <= P; ++k2) {
        out.Q.add(t - k1, t - k2, c[k1] * c[k2] / innovation_var);
      }
    }
  }
  if (tau != 1.0) out.Q = out.Q.scaled(tau);
  return out;
}

PrecisionMatrix build_ou_precision(std::span<const std::int64_t> positions, double tau, double phi) {
  const std::size_t T = positions.size();
  require(T >= 1, "OU field needs at least one position");
  require(tau > 0.0 && std::isfinite(tau), "OU marginal precision must be positive");
  require(phi > 0.0 && std::isfinite(phi), "OU decay rate must be positive");
  PrecisionMatrix out{BandedSymmetric(T, 1), tau, T, false};
  std::vector<double> rho(T > 0 ? T - 1 : 0);
  for (std::size_t i = 0; i + 1 < T; ++i) {
    require(positions[i + 1] > positions[i], "OU positions must be strictly increasing");
    rho[i] = std::exp(-phi * static_cast<double>(positions[i + 1] - positions[i]));
  }
  if (T == 1) {
    out.Q.at(0, 0) = tau;
    return out;
  }
  for (std::size_t i = 0; i < T; ++i) {
    double diag = 0.0;
    if (i == 0) {
      diag = 1.0 / (1.0 - rho[0] * rho[0]);
    } else if (i == T - 1) {
      diag = 1.0 / (1.0 - rho[i - 1] * rho[i - 1]);
    } else {
      const double r2 = rho[i] * rho[i];
      diag = 1.0 / (1.0 - rho[i - 1] * rho[i - 1]) + r2 / (1.0 - r2);
    }
    out.Q.at(i, i) = tau * diag;
    if (i + 1 < T) out.Q.at(i + 1, i) = -tau * rho[i] / (1.0 - rho[i] * rho[i]);
  }
  return out;
}

double constrained_logdet(const PrecisionMatrix& Q) {
  if (Q.sum_to_zero) {
    // one-dimensional null space spanned by the ones vector: the pseudo-
    // determinant equals T times any principal (T-1)-minor.
    const std::size_t T = Q.dimension();
    require(T >= 2, "constrained field needs T >= 2");
    return std::log(static_cast<double>(T)) + BandCholesky(Q.Q.leading_block(T - 1)).log_det();
  }
  return BandCholesky(Q.Q).log_det();
}

double pacf_from_internal(double theta) { return std::tanh(0.5 * theta); }
double pacf_to_internal(double kappa) { return 2.0 * std::atanh(kappa); }

}  // namespace mbvs
