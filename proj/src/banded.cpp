#include "mbvs/banded.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mbvs {

FactorizationError::FactorizationError(std::size_t pivot, double value)
    : NumericalError("matrix is not positive definite: Cholesky pivot " + std::to_string(pivot) +
                     " has value " + std::to_string(value)),
      pivot_(pivot) {}

BandedSymmetric::BandedSymmetric(std::size_t n, std::size_t bandwidth)
    : n_(n), bw_(bandwidth), data_(n * (bandwidth + 1), 0.0) {}

double BandedSymmetric::operator()(std::size_t i, std::size_t j) const {
  if (i < j) std::swap(i, j);
  if (i - j > bw_) return 0.0;
  return data_[idx(i, i - j)];
}

double& BandedSymmetric::at(std::size_t i, std::size_t j) {
  if (i < j) std::swap(i, j);
  require(i < n_ && i - j <= bw_, "banded entry outside the stored band");
  return data_[idx(i, i - j)];
}

BandedSymmetric BandedSymmetric::scaled(double c) const {
  BandedSymmetric out = *this;
  for (double& v : out.data_) v *= c;
  return out;
}

BandedSymmetric BandedSymmetric::leading_block(std::size_t m) const {
  require(m <= n_, "leading block larger than matrix");
  BandedSymmetric out(m, bw_);
  std::copy(data_.begin(), data_.begin() + static_cast<std::ptrdiff_t>(m * (bw_ + 1)), out.data_.begin());
  return out;
}

Eigen::MatrixXd BandedSymmetric::to_dense() const {
  const auto n = static_cast<Eigen::Index>(n_);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t k = 0; k <= std::min(bw_, i); ++k) {
      const auto r = static_cast<Eigen::Index>(i), c = static_cast<Eigen::Index>(i - k);
      m(r, c) = data_[idx(i, k)];
      m(c, r) = data_[idx(i, k)];
    }
  }
  return m;
}

Eigen::VectorXd BandedSymmetric::multiply(const Eigen::VectorXd& x) const {
  require(static_cast<std::size_t>(x.size()) == n_, "dimension mismatch in banded multiply");
  Eigen::VectorXd y = Eigen::VectorXd::Zero(x.size());
  for (std::size_t i = 0; i < n_; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    y(ii) += data_[idx(i, 0)] * x(ii);
    for (std::size_t k = 1; k <= std::min(bw_, i); ++k) {
      const auto jj = static_cast<Eigen::Index>(i - k);
      const double a = data_[idx(i, k)];
      y(ii) += a * x(jj);
      y(jj) += a * x(ii);
    }
  }
  return y;
}

double BandedSymmetric::quadratic_form(const Eigen::VectorXd& x) const { return x.dot(multiply(x)); }

BandCholesky::BandCholesky(const BandedSymmetric& a) : n_(a.size()), bw_(a.bandwidth()), data_(a.raw().begin(), a.raw().end()) {
  const std::size_t w = bw_ + 1;
  for (std::size_t i = 0; i < n_; ++i) {
    const std::size_t j0 = i > bw_ ? i - bw_ : 0;
    for (std::size_t j = j0; j <= i; ++j) {
      double s = data_[i * w + (i - j)];
      // columns shared by rows i and j: k in [j0, j)
      for (std::size_t k = j0; k < j; ++k) {
        s -= data_[i * w + (i - k)] * data_[j * w + (j - k)];
      }
      if (j == i) {
        if (!(s > 0.0) || !std::isfinite(s)) throw FactorizationError(i, s);
        data_[i * w] = std::sqrt(s);
      } else {
        data_[i * w + (i - j)] = s / data_[j * w];
      }
    }
  }
}

double BandCholesky::log_det() const {
  double s = 0.0;
  for (std::size_t i = 0; i < n_; ++i) s += std::log(l(i, 0));
  return 2.0 * s;
}

void BandCholesky::solve_in_place(std::span<double> b) const {
  require(b.size() == n_, "dimension mismatch in band solve");
  for (std::size_t i = 0; i < n_; ++i) {
    double s = b[i];
    const std::size_t k0 = i > bw_ ? i - bw_ : 0;
    for (std::size_t k = k0; k < i; ++k) s -= l(i, i - k) * b[k];
    b[i] = s / l(i, 0);
  }
  for (std::size_t ii = n_; ii-- > 0;) {
    double s = b[ii];
    const std::size_t kmax = std::min(n_ - 1, ii + bw_);
    for (std::size_t k = ii + 1; k <= kmax; ++k) s -= l(k, k - ii) * b[k];
    b[ii] = s / l(ii, 0);
  }
}

Eigen::VectorXd BandCholesky::solve(const Eigen::VectorXd& b) const {
  Eigen::VectorXd x = b;
  solve_in_place(std::span<double>(x.data(), static_cast<std::size_t>(x.size())));
  return x;
}

Eigen::MatrixXd BandCholesky::solve(const Eigen::MatrixXd& b) const {
  require(static_cast<std::size_t>(b.rows()) == n_, "dimension mismatch in band solve");
  // work on the transpose so each row of b is a contiguous column
  Eigen::MatrixXd y = b.transpose();
  for (std::size_t i = 0; i < n_; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const std::size_t k0 = i > bw_ ? i - bw_ : 0;
    for (std::size_t k = k0; k < i; ++k) y.col(ii) -= l(i, i - k) * y.col(static_cast<Eigen::Index>(k));
    y.col(ii) /= l(i, 0);
  }
  for (std::size_t i = n_; i-- > 0;) {
    const auto ii = static_cast<Eigen::Index>(i);
    const std::size_t kmax = std::min(n_ - 1, i + bw_);
    for (std::size_t k = i + 1; k <= kmax; ++k) y.col(ii) -= l(k, k - i) * y.col(static_cast<Eigen::Index>(k));
    y.col(ii) /= l(i, 0);
  }
  return y.transpose();
}

BandedSymmetric BandCholesky::band_inverse() const {
  BandedSymmetric sigma(n_, bw_);
  for (std::size_t i = n_; i-- > 0;) {
    const std::size_t kmax = std::min(n_ - 1, i + bw_);
    for (std::size_t j = kmax + 1; j-- > i;) {
      double s = (i == j) ? 1.0 / l(i, 0) : 0.0;
      for (std::size_t k = i + 1; k <= kmax; ++k) s -= l(k, k - i) * sigma(k, j);
      sigma.at(j, i) = s / l(i, 0);
    }
  }
  return sigma;
}

}  // namespace mbvs
