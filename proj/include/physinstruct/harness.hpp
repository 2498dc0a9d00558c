#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "physinstruct/conditional.hpp"
#include "physinstruct/metrics.hpp"

namespace physinstruct {

/// Everything a run needs. Serialized as nested JSON; `to_json(from_json(j)) == j`
/// for any complete document.
struct RunConfig {
  PdeKind benchmark = PdeKind::poisson;
  Index height = 0;  // 0: desk-scale default of the benchmark
  Index width = 0;
  Index train_size = 2000;
  Index test_size = 500;
  std::uint64_t seed = 0;

  NetArch arch{};
  TrainConfig teacher{};
  DistillConfig distill{};

  Index eval_samples = 256;
  Index projections = 512;
  Index latency_runs = 32;
  std::vector<Index> teacher_reference_steps{4, 200};
  double guidance_gamma = 1e-3;
  double guidance_fraction = 0.5;

  TaskKind task = TaskKind::forward;
  double obs_fraction = 1.0;
  Index cond_train_pairs = 400;
  Index cond_eval_pairs = 100;
  double cond_lambda_phys = 5e-3;
  TrainConfig cond{};

  PdeConfig pde() const;
};

RunConfig default_run_config();
nlohmann::json to_json(const RunConfig& c);
/// Missing keys keep their defaults; unknown keys are a FormatError.
RunConfig run_config_from_json(const nlohmann::json& j);
/// Sets a dotted path (e.g. "distill.lambda_phys") from its textual value; the value
/// is parsed as JSON first and as a plain string otherwise.
void apply_override(nlohmann::json& j, const std::string& dotted, const std::string& value);
/// fnv1a64 hex of the compact dump.
std::string config_hash(const nlohmann::json& j);

/// Per-sample wall-clock of a generation routine: median over `runs` calls, in ms.
double median_latency_ms(const std::function<void()>& once, Index runs);

/// Metrics of one (method, steps) row.
struct EvalRow {
  std::string method;
  Index steps = 0;
  double rms_pde_error = 0;
  double swd = 0;
  double sqrt_mmd2 = 0;
  double latency_ms = 0;
};
nlohmann::json to_json(const EvalRow& r);
EvalRow eval_row_from_json(const nlohmann::json& j);

/// rms PDE error plus SWD / sqrt MMD^2 against `real`, after standardization with the
/// statistics of `real`.
EvalRow score_samples(const std::string& method, Index steps, const ResidualOperator& op,
                      std::span<const FieldSample> generated, std::span<const FieldSample> real, Index projections,
                      const SeedKey& key);

/// Files of a run directory.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path config_hash() const { return root / "config.hash"; }
  std::filesystem::path log() const { return root / "log.jsonl"; }
  std::filesystem::path train_data() const { return root / "data" / "train.bin"; }
  std::filesystem::path test_data() const { return root / "data" / "test.bin"; }
  std::filesystem::path teacher() const { return root / "teacher.ckpt"; }
  std::filesystem::path student(const std::string& tag) const;
  std::filesystem::path branch(const std::string& tag) const;
  std::filesystem::path eval_dir() const { return root / "eval"; }
  std::filesystem::path report_csv() const { return root / "report.csv"; }
  std::filesystem::path report_json() const { return root / "report.json"; }
};

/// Options of one CLI invocation after flag parsing.
struct Invocation {
  std::string command;
  std::filesystem::path out;
  std::filesystem::path config_file;  // empty: none
  std::vector<std::pair<std::string, std::string>> overrides;  // dotted path, value
  std::string tag;                    // names student / branch / eval artifacts
  std::string model = "student";      // eval/sample: student or teacher
  std::string baseline = "plain";     // teacher sampling: plain or guided
  Index steps = 0;                    // 0: command default
};

/// Resolves the effective config of an invocation. A run directory that already has a
/// config is the base (its hash is verified); otherwise defaults, then --config, and the
/// result is written to the directory. Overrides apply last.
RunConfig resolve_config(const Invocation& inv, nlohmann::json* effective = nullptr);

/// Dispatches one command. Throws the library error types.
void run_command(const Invocation& inv);

/// Machine-readable record of an error for stderr, and the exit status for it.
nlohmann::json error_record(const std::exception& e, const std::string& command);
int exit_status(const std::exception& e);

}  // namespace physinstruct
