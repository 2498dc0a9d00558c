#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "physinstruct/pde_data.hpp"
#include "physinstruct/rng.hpp"

namespace physinstruct {

/// Per-channel statistics of the real data; standardization divides by (std + eps).
struct ChannelStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
  double eps = 1e-6;

  static ChannelStats from_real(const Tensor& batch, double eps = 1e-6);
  static ChannelStats from_real(std::span<const FieldSample> real, double eps = 1e-6);
};

/// One flattened standardized field per row.
using SampleCloud = Eigen::MatrixXd;

SampleCloud standardize(const Tensor& batch, const ChannelStats& stats);
SampleCloud standardize(std::span<const FieldSample> batch, const ChannelStats& stats);

/// 1D W1 between empirical laws. Equal sizes pair sorted values; otherwise both
/// quantile functions are linearly interpolated at max(|p|, |q|) midpoint levels.
double wasserstein1_1d(std::vector<double> p, std::vector<double> q);

/// Mean over K random unit directions of the projected 1D W1.
double swd(const SampleCloud& p, const SampleCloud& q, Index projections, const SeedKey& key);

/// Median Euclidean distance over distinct pairs of (at most `subset`) rows. Rows beyond
/// the subset size are dropped after a seeded shuffle.
double median_pairwise_distance(const SampleCloud& x, Index subset = 500, const SeedKey& key = {0, "median", 0});

/// {s/4, s/2, s, 2s, 4s} around the median heuristic of the real cloud.
std::vector<double> auto_bandwidths(const SampleCloud& real, Index subset = 500, const SeedKey& key = {0, "median", 0});

/// Biased (V-statistic) MMD with the summed RBF kernel exp(-|x-y|^2 / (2 s^2)) over
/// `bandwidths`; returns sqrt(max(MMD^2, 0)).
double mmd(const SampleCloud& p, const SampleCloud& q, std::span<const double> bandwidths);

}  // namespace physinstruct
