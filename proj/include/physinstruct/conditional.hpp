#pragma once

#include <string_view>
#include <vector>

#include "physinstruct/distill.hpp"

namespace physinstruct {

enum class TaskKind { forward, inverse, reconstruct };
TaskKind parse_task(std::string_view name);
std::string_view to_string(TaskKind t);

/// Conditioning input and supervision selector for one sample.
struct Condition {
  TaskKind task = TaskKind::forward;
  Tensor y;     // (Cy,H,W), physical units; reconstruct appends the 0/1 mask as last channel
  Tensor mask;  // (C,H,W) 0/1 over the sample channels
  Index observed() const;
};

struct ConditionPair {
  Condition cond;
  FieldSample target;
};

/// Channels of y for a task on a benchmark. Throws for combinations without a meaning
/// (forward/inverse on the single-channel burgers field).
Index condition_channels(TaskKind task, PdeKind kind);

/// forward: y = a, supervise u. inverse: y = u, supervise a. reconstruct: a random
/// subset of nodes (burgers: full time history at random spatial columns) of size
/// round(obs_fraction * count), at least one; y = masked field plus the mask.
ConditionPair build_condition(TaskKind task, const FieldSample& sample, const SeedKey& obs_key, double obs_fraction = 1.0);

/// Hint branch over a frozen one-step backbone:
///   z_c = z + zero_in(psi(y)),  f'_l = f_l + proj_l(h_l(c_in z_c, e)).
/// h is a copy of the backbone encoder; zero_in and proj_l start at exactly zero.
struct ControlBranch {
  TaskKind task = TaskKind::forward;
  PdeKind kind = PdeKind::poisson;
  Index y_channels = 1;
  Parameters params;

  static ControlBranch create(const StudentGenerator& backbone, TaskKind task, PdeKind kind, const SeedKey& key);
};

/// y of every condition, normalized with the backbone statistics, as (B,Cy,H,W).
Tensor condition_batch(const StudentGenerator& backbone, const ControlBranch& branch, std::span<const Condition> conds);

/// Normalized one-step output on the tape of `branch_bp`; the backbone is bound as constants.
Var conditional_generate_var(const StudentGenerator& backbone, const BoundParams& backbone_bp, const ControlBranch& branch,
                             const BoundParams& branch_bp, Var z, const Tensor& y);

FieldSample conditional_generate(const StudentGenerator& backbone, const ControlBranch& branch, const Condition& cond,
                                 const Tensor& z);
std::vector<FieldSample> conditional_generate(const StudentGenerator& backbone, const ControlBranch& branch,
                                              std::span<const Condition> conds, const Tensor& z);

/// Mean of (x_hat - x*)^2 over the components selected by mask.
double masked_data_loss(const FieldSample& x_hat, const FieldSample& target, const Tensor& mask);
/// Batched form on physical (B,C,H,W) fields.
Var masked_data_loss_var(Var x_hat, const Tensor& target, const Tensor& mask);

/// masked_data_loss + lambda R(x_hat) for a batch of pairs and latents. The data term
/// compares normalized fields, R is evaluated on physical ones.
Var conditional_objective(const StudentGenerator& backbone, const BoundParams& backbone_bp, const ControlBranch& branch,
                          const BoundParams& branch_bp, const ResidualOperator& op, std::span<const ConditionPair> pairs,
                          const Tensor& z, double lambda_phys, double* data_term = nullptr, double* physics_term = nullptr);

struct ConditionalRecord {
  Index step;
  double loss;
  double data;
  double physics;
};

/// Optimizer steps on the branch only, minibatches drawn from `pairs` with fresh latents.
ControlBranch train_conditional(const StudentGenerator& backbone, const ResidualOperator& op,
                                std::span<const ConditionPair> pairs, double lambda_phys, const TrainConfig& cfg,
                                std::vector<ConditionalRecord>* log = nullptr);

/// ||x_hat - x*|| / ||x*|| over the selected components.
double relative_error(const FieldSample& x_hat, const FieldSample& target, const Tensor& mask);
/// Fraction of selected nodes of channel 0 whose nearest class in {low, high} differs.
double misclassification_rate(const FieldSample& x_hat, const FieldSample& target, const Tensor& mask, double low,
                              double high);
/// Mean |x_hat - x*| over the selected components.
double mean_absolute_error(const FieldSample& x_hat, const FieldSample& target, const Tensor& mask);

struct ConditionalEval {
  double relative_error = 0;
  double absolute_error = 0;       // misclassification rate for darcy inverse, else mean absolute error
  double mean_absolute_error = 0;
  double rms_pde_error = 0;
  std::size_t count = 0;
};

/// Averages over the pairs, one latent per pair drawn from `key`.
ConditionalEval evaluate_conditional(const StudentGenerator& backbone, const ControlBranch& branch,
                                     const ResidualOperator& op, std::span<const ConditionPair> pairs,
                                     const SeedKey& key, const PdeConfig& cfg);

void save_branch(const std::filesystem::path& path, const ControlBranch& branch);
ControlBranch load_branch(const std::filesystem::path& path);

}  // namespace physinstruct
