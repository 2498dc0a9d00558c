#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "physinstruct/autodiff.hpp"
#include "physinstruct/tensor.hpp"

namespace physinstruct {

/// Named tensor blocks with a stable insertion order. Also used for gradients,
/// which carry the same names and shapes as the values they belong to.
class Parameters {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return blocks_.count(name) != 0; }
  Tensor& operator[](const std::string& name);
  const Tensor& operator[](const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }
  Index numel() const;

  /// Same names and shapes, all zeros.
  Parameters zeros_like() const;
  bool same_layout(const Parameters& other) const;

  /// Flat concatenation in name order.
  Eigen::ArrayXd flatten() const;
  void assign_flat(const Eigen::ArrayXd& flat);

  /// this += alpha * other (layouts must match).
  void axpy(double alpha, const Parameters& other);

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> blocks_;
};

/// Parameters placed on a tape, either as gradient-carrying leaves or as constants.
class BoundParams {
 public:
  BoundParams() = default;
  BoundParams(Tape& tape, const Parameters& params, bool requires_grad);

  Var operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }

  /// Gradients of the last backward sweep, laid out like the bound parameters.
  Parameters gradients() const;

 private:
  Tape* tape_ = nullptr;
  std::vector<std::string> order_;
  std::map<std::string, Var> vars_;
};

/// Writes a checkpoint: one header line (JSON map with format version, block table
/// with shapes and byte offsets, and free-form string metadata) followed by
/// little-endian float64 payload.
void save_checkpoint(const std::filesystem::path& path, const Parameters& params,
                     const std::map<std::string, std::string>& meta = {});

struct Checkpoint {
  Parameters params;
  std::map<std::string, std::string> meta;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 0.0;  // global gradient-norm clip; 0 disables
};

/// First-order update rule. Adam state is lazily created on first use.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}
  void step(Parameters& params, const Parameters& grads);
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  Parameters m_, v_;
  long t_ = 0;
};

/// ema <- decay * ema + (1 - decay) * params
void ema_update(Parameters& ema, const Parameters& params, double decay);

/// Builds a scalar on `tape` from parameters already bound to it.
using TapedObjective = std::function<Var(Tape&, const BoundParams&)>;

struct GradCheckOptions {
  double step = 1e-4;
  std::size_t coordinates = 64;  // random subset size (all if larger than the parameter count)
  std::uint64_t seed = 0;
};

/// Max over a random coordinate subset of |analytic - centralFD| / (|centralFD| + 1e-8).
/// The objective is evaluated twice at the base point; differing values raise DeterminismError.
double grad_check(const TapedObjective& fn, const Parameters& params, const GradCheckOptions& opts = {});

}  // namespace physinstruct
