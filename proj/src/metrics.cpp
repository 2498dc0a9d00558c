#include "physinstruct/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "physinstruct/errors.hpp"

namespace physinstruct {

ChannelStats ChannelStats::from_real(const Tensor& b, double eps) {
  if (b.shape.rank() != 4 || b.batch() == 0) throw ContractViolation("ChannelStats: need a non-empty (B,C,H,W) batch");
  const Index c = b.channels(), plane = b.height() * b.width();
  ChannelStats s{Eigen::VectorXd::Zero(c), Eigen::VectorXd::Zero(c), eps};
  const double count = static_cast<double>(b.batch() * plane);
  for (Index ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (Index n = 0; n < b.batch(); ++n) acc += b.data.segment(b.offset(n, ch, 0, 0), plane).sum();
    s.mean[ch] = acc / count;
    double var = 0.0;
    for (Index n = 0; n < b.batch(); ++n) var += (b.data.segment(b.offset(n, ch, 0, 0), plane) - s.mean[ch]).square().sum();
    s.std[ch] = std::sqrt(var / count);
  }
  return s;
}

ChannelStats ChannelStats::from_real(std::span<const FieldSample> real, double eps) {
  if (real.empty()) throw ContractViolation("ChannelStats: empty real set");
  std::vector<Tensor> items;
  for (const auto& r : real) items.push_back(r.channels);
  return from_real(stack(items), eps);
}

SampleCloud standardize(const Tensor& b, const ChannelStats& st) {
  if (b.shape.rank() != 4 || b.channels() != st.mean.size()) {
    throw ContractViolation("standardize: expected " + std::to_string(st.mean.size()) + " channels, got " + b.shape.str());
  }
  const Index plane = b.height() * b.width(), d = b.channels() * plane;
  SampleCloud out(b.batch(), d);
  for (Index n = 0; n < b.batch(); ++n)
    for (Index ch = 0; ch < b.channels(); ++ch) {
      const auto seg = b.data.segment(b.offset(n, ch, 0, 0), plane);
      out.row(n).segment(ch * plane, plane) = ((seg - st.mean[ch]) / (st.std[ch] + st.eps)).matrix().transpose();
    }
  return out;
}

SampleCloud standardize(std::span<const FieldSample> batch, const ChannelStats& st) {
  if (batch.empty()) throw ContractViolation("standardize: empty batch");
  std::vector<Tensor> items;
  for (const auto& r : batch) items.push_back(r.channels);
  return standardize(stack(items), st);
}

namespace {

// Piecewise-linear empirical quantile of sorted values at level t in (0,1).
double quantile(const std::vector<double>& sorted, double t) {
  const double pos = t * static_cast<double>(sorted.size()) - 0.5;
  if (pos <= 0) return sorted.front();
  const auto last = static_cast<double>(sorted.size() - 1);
  if (pos >= last) return sorted.back();
  const auto i = static_cast<std::size_t>(pos);
  const double f = pos - static_cast<double>(i);
  return sorted[i] + f * (sorted[i + 1] - sorted[i]);
}

}  // namespace

double wasserstein1_1d(std::vector<double> p, std::vector<double> q) {
  if (p.empty() || q.empty()) throw ContractViolation("wasserstein1_1d: empty sample");
  std::sort(p.begin(), p.end());
  std::sort(q.begin(), q.end());
  double acc = 0.0;
  if (p.size() == q.size()) {
    for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
    return acc / static_cast<double>(p.size());
  }
  const std::size_t m = std::max(p.size(), q.size());
  for (std::size_t i = 0; i < m; ++i) {
    const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(m);
    acc += std::abs(quantile(p, t) - quantile(q, t));
  }
  return acc / static_cast<double>(m);
}

double swd(const SampleCloud& p, const SampleCloud& q, Index projections, const SeedKey& key) {
  if (p.rows() == 0 || q.rows() == 0) throw ContractViolation("swd: empty cloud");
  if (p.cols() != q.cols()) throw ContractViolation("swd: dimension mismatch");
  if (projections < 1) throw ContractViolation("swd: need at least one projection");
  Generator gen = derive_seed(key);
  const Index d = p.cols();
  Eigen::MatrixXd dirs(d, projections);
  for (Index k = 0; k < projections; ++k) {
    Eigen::VectorXd v(d);
    do {
      for (Index i = 0; i < d; ++i) v[i] = gen.normal();
    } while (v.norm() == 0.0);
    dirs.col(k) = v / v.norm();
  }
  const Eigen::MatrixXd pp = p * dirs, qq = q * dirs;
  double acc = 0.0;
  for (Index k = 0; k < projections; ++k) {
    std::vector<double> a(pp.col(k).data(), pp.col(k).data() + pp.rows());
    std::vector<double> b(qq.col(k).data(), qq.col(k).data() + qq.rows());
    acc += wasserstein1_1d(std::move(a), std::move(b));
  }
  return acc / static_cast<double>(projections);
}

double median_pairwise_distance(const SampleCloud& x, Index subset, const SeedKey& key) {
  if (x.rows() < 2) throw ContractViolation("median heuristic needs at least two points");
  std::vector<Index> rows(static_cast<std::size_t>(x.rows()));
  std::iota(rows.begin(), rows.end(), Index{0});
  if (x.rows() > subset) {
    Generator gen = derive_seed(key);
    for (std::size_t i = rows.size() - 1; i > 0; --i) std::swap(rows[i], rows[gen.below(i + 1)]);
    rows.resize(static_cast<std::size_t>(subset));
  }
  std::vector<double> dist;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) dist.push_back((x.row(rows[i]) - x.row(rows[j])).norm());
  const std::size_t mid = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
  const double upper = dist[mid];
  if (dist.size() % 2 == 1) return upper;
  const double lower = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

std::vector<double> auto_bandwidths(const SampleCloud& real, Index subset, const SeedKey& key) {
  const double s = median_pairwise_distance(real, subset, key);
  return {s / 4, s / 2, s, 2 * s, 4 * s};
}

namespace {

double mean_kernel(const SampleCloud& a, const SampleCloud& b, std::span<const double> bandwidths) {
  const Eigen::VectorXd na = a.rowwise().squaredNorm(), nb = b.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = (-2.0 * a * b.transpose()).colwise() + na;
  d2.rowwise() += nb.transpose();
  d2 = d2.cwiseMax(0.0);
  double acc = 0.0;
  for (double s : bandwidths) acc += (-d2.array() / (2.0 * s * s)).exp().mean();
  return acc;
}

}  // namespace

double mmd(const SampleCloud& p, const SampleCloud& q, std::span<const double> bandwidths) {
  if (p.rows() == 0 || q.rows() == 0) throw ContractViolation("mmd: empty cloud");
  if (p.cols() != q.cols()) throw ContractViolation("mmd: dimension mismatch");
  if (bandwidths.empty()) throw ContractViolation("mmd: no bandwidths");
  for (double s : bandwidths)
    if (!(s > 0)) throw ContractViolation("mmd: bandwidths must be positive");
  const double m2 = mean_kernel(p, p, bandwidths) + mean_kernel(q, q, bandwidths) - 2.0 * mean_kernel(p, q, bandwidths);
  return std::sqrt(std::max(m2, 0.0));
}

}  // namespace physinstruct
