#pragma once

// Prior precision builders for the latent Gaussian fields: IG (white noise),
// RW(1) (intrinsic, sum-to-zero constrained), stationary AR(p) and OU.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mbvs/banded.hpp"

namespace mbvs {

enum class LatentKind { RW1, AR, OU };

/// The structured field; every structure is paired with an IG component.
struct LatentStructureSpec {
  LatentKind kind = LatentKind::RW1;
  int order = 0;  // AR only, 1..3

  static LatentStructureSpec rw1() { return {LatentKind::RW1, 0}; }
  static LatentStructureSpec ar(int p);
  static LatentStructureSpec ou() { return {LatentKind::OU, 0}; }
  /// "rw1", "ar1", "ar2", "ar3" or "ou".
  static LatentStructureSpec parse(std::string_view name);

  bool uses_genomic_distance() const { return kind == LatentKind::OU; }
  std::size_t bandwidth() const { return kind == LatentKind::AR ? static_cast<std::size_t>(order) : 1; }
  std::string name() const;
  void validate() const;

  bool operator==(const LatentStructureSpec&) const = default;
};

struct PrecisionMatrix {
  BandedSymmetric Q;
  double scale = 1.0;  // precision multiplier applied to the structure matrix
  std::size_t rank = 0;
  bool sum_to_zero = false;  // field constrained to 1'x = 0

  std::size_t dimension() const { return Q.size(); }
};

PrecisionMatrix build_ig_precision(std::size_t T, double tau);

/// tau * R with R the first-order random-walk structure (zero row sums).
PrecisionMatrix build_rw1_precision(std::size_t T, double tau);

/// Durbin-Levinson map from partial autocorrelations to AR coefficients.
std::vector<double> pacf_to_ar(std::span<const double> partial_correlations);

/// Autocorrelations rho_0..rho_{lags} of the stationary AR process with the
/// given partial autocorrelations.
std::vector<double> pacf_to_autocorrelation(std::span<const double> partial_correlations, std::size_t lags);

/// Stationary AR(p) precision with marginal precision tau (marginal variance 1/tau).
PrecisionMatrix build_ar_precision(std::size_t T, int p, std::span<const double> partial_correlations, double tau);

/// Exponentially correlated Gauss-Markov process at irregular positions,
/// marginal precision tau and neighbour correlation exp(-phi * gap).
PrecisionMatrix build_ou_precision(std::span<const std::int64_t> positions, double tau, double phi);

/// Log pseudo-determinant for the constrained RW1 (rank T-1), ordinary
/// log-determinant otherwise. Throws FactorizationError for indefinite input.
double constrained_logdet(const PrecisionMatrix& Q);

/// Transform to and from unconstrained coordinates for partial correlations.
double pacf_from_internal(double theta);
double pacf_to_internal(double kappa);

}  // namespace mbvs
