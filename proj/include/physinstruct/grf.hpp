#pragma once

#include <Eigen/Core>

#include "physinstruct/rng.hpp"

namespace physinstruct {

/// 2D scalar field on a grid, rows = y (height), columns = x (width).
using Field = Eigen::MatrixXd;

enum class GrfBasis { periodic_fourier, dirichlet_sine };

/// Covariance scale * (-Laplacian + shift)^(-power) on the unit square (or unit
/// interval when height == 1).
struct GrfSpec {
  double scale = 1.0;
  double shift = 9.0;
  double power = 2.0;
  GrfBasis basis = GrfBasis::periodic_fourier;
  Index height = 16;
  Index width = 16;
};

/// Variance of the coefficient of a unit-amplitude basis function with Laplacian
/// eigenvalue `lambda`.
double grf_mode_variance(const GrfSpec& spec, double lambda);

/// Unit-amplitude real eigenbasis of the 1D Laplacian sampled on `n` nodes, one column
/// per mode, and the matching eigenvalues.
///   periodic: x_i = i/n; columns 1, cos(2 pi j x), sin(2 pi j x) (j < n/2), cos(pi n x)
///   sine:     x_i = i/(n-1); columns sin(pi j x), j = 1..n-2
struct Basis1d {
  Eigen::MatrixXd functions;   // n x modes
  Eigen::VectorXd eigenvalues; // modes
};
Basis1d laplacian_basis_1d(GrfBasis basis, Index n);

/// Draws one zero-mean field: independent N(0, variance) coefficients on the
/// tensor-product basis, synthesized with a dense separable transform.
Field grf_sample(const GrfSpec& spec, Generator& gen);

}  // namespace physinstruct
