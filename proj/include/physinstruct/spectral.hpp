#pragma once

#include <complex>

#include <Eigen/Core>

#include "physinstruct/tensor.hpp"

namespace physinstruct {

/// Dense discrete Fourier transform on n points: F(k, j) = exp(-2 pi i k j / n).
/// O(n^2) per transform, adequate for the grid sizes used here.
class Dft {
 public:
  explicit Dft(Index n);

  Index size() const { return n_; }
  /// Signed integer wavenumber of index k: k for k <= n/2, k - n otherwise.
  double wavenumber(Index k) const;

  Eigen::VectorXcd forward(const Eigen::VectorXd& f) const;
  Eigen::VectorXd inverse_real(const Eigen::VectorXcd& f_hat) const;

  const Eigen::MatrixXcd& matrix() const { return forward_; }
  const Eigen::MatrixXcd& inverse_matrix() const { return inverse_; }

 private:
  Index n_;
  Eigen::MatrixXcd forward_;
  Eigen::MatrixXcd inverse_;
};

/// Separable 2D transform of an (ny x nx) real field.
Eigen::MatrixXcd fft2(const Dft& fy, const Dft& fx, const Eigen::MatrixXd& f);
Eigen::MatrixXd ifft2_real(const Dft& fy, const Dft& fx, const Eigen::MatrixXcd& f_hat);

}  // namespace physinstruct
