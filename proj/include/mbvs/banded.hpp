#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mbvs/error.hpp"

namespace mbvs {

/// Cholesky breakdown at a specific pivot (matrix not positive definite).
class FactorizationError : public NumericalError {
 public:
  FactorizationError(std::size_t pivot, double value);
  std::size_t pivot() const { return pivot_; }

 private:
  std::size_t pivot_;
};

/// Symmetric matrix with lower bandwidth `bandwidth`, storing the lower band
/// row by row: entry (i, i-k) for k = 0..bandwidth.
class BandedSymmetric {
 public:
  BandedSymmetric() = default;
  BandedSymmetric(std::size_t n, std::size_t bandwidth);

  std::size_t size() const { return n_; }
  std::size_t bandwidth() const { return bw_; }

  /// Entry (i, j); zero outside the band.
  double operator()(std::size_t i, std::size_t j) const;
  /// Reference to entry (i, j) with |i - j| <= bandwidth.
  double& at(std::size_t i, std::size_t j);
  void add(std::size_t i, std::size_t j, double v) { at(i, j) += v; }

  BandedSymmetric scaled(double c) const;
  /// Leading m x m principal block.
  BandedSymmetric leading_block(std::size_t m) const;
  Eigen::MatrixXd to_dense() const;
  Eigen::VectorXd multiply(const Eigen::VectorXd& x) const;
  double quadratic_form(const Eigen::VectorXd& x) const;

  std::span<const double> raw() const { return data_; }

 private:
  std::size_t idx(std::size_t i, std::size_t k) const { return i * (bw_ + 1) + k; }

  std::size_t n_ = 0;
  std::size_t bw_ = 0;
  std::vector<double> data_;
};

/// Cholesky factor L (A = L L^T) of a banded SPD matrix; L keeps the bandwidth.
class BandCholesky {
 public:
  BandCholesky() = default;
  /// Throws FactorizationError naming the first non-positive pivot.
  explicit BandCholesky(const BandedSymmetric& a);

  std::size_t size() const { return n_; }
  double log_det() const;

  void solve_in_place(std::span<double> b) const;
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  /// Solves for every column of b.
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;

  /// Entries of A^{-1} inside the band (Takahashi recursion), O(n bw^2).
  BandedSymmetric band_inverse() const;

 private:
  double l(std::size_t i, std::size_t k) const { return data_[i * (bw_ + 1) + k]; }

  std::size_t n_ = 0;
  std::size_t bw_ = 0;
  std::vector<double> data_;
};

}  // namespace mbvs
