#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "physinstruct/dataset_io.hpp"
#include "physinstruct/errors.hpp"
#include "physinstruct/harness.hpp"

using namespace physinstruct;
namespace fs = std::filesystem;

namespace {

const char* kToy = R"({"train_size": 48, "test_size": 24, "height": 8, "width": 8,
 "arch": {"widths": [4, 4, 4]},
 "teacher": {"steps": 20, "batch_size": 8},
 "distill": {"steps": 3, "batch_size": 4, "probe_size": 4, "log_every": 1},
 "metrics": {"eval_samples": 12, "projections": 16, "latency_runs": 2, "teacher_reference_steps": [4, 6]},
 "conditional": {"train_pairs": 8, "eval_pairs": 6, "train": {"steps": 3, "batch_size": 4}}})";

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pi_harness_" + name);
  fs::remove_all(p);
  return p;
}

fs::path toy_config() {
  const fs::path p = fs::temp_directory_path() / "pi_harness_toy.json";
  std::ofstream(p) << kToy;
  return p;
}

void run(const fs::path& out, const std::string& cmd, std::vector<std::pair<std::string, std::string>> ov = {},
         const std::string& model = "student", Index steps = 0, const std::string& tag = "") {
  Invocation inv;
  inv.command = cmd;
  inv.out = out;
  inv.config_file = toy_config();
  inv.overrides = std::move(ov);
  inv.model = model;
  inv.steps = steps;
  inv.tag = tag;
  run_command(inv);
}

std::vector<std::string> csv_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

// Drops the trailing latency column.
std::string without_latency(const std::string& line) { return line.substr(0, line.rfind(',')); }

}  // namespace

TEST_CASE("config serialization") {
  const RunConfig d = default_run_config();
  const auto j = to_json(d);
  CHECK(to_json(run_config_from_json(j)) == j);
  CHECK(config_hash(j) == config_hash(to_json(run_config_from_json(j))));

  auto k = j;
  apply_override(k, "distill.lambda_phys", "0");
  apply_override(k, "benchmark", "darcy");
  apply_override(k, "distill.method", "heun");
  const RunConfig o = run_config_from_json(k);
  CHECK(o.distill.lambda_phys == 0.0);
  CHECK(o.benchmark == PdeKind::darcy);
  CHECK(o.distill.method == SamplerMethod::heun);
  CHECK(config_hash(k) != config_hash(j));
  CHECK_THROWS_AS(apply_override(k, "distill.no_such_key", "1"), FormatError);

  auto bad = j;
  bad["teacher"]["typo"] = 1;
  CHECK_THROWS_AS(run_config_from_json(bad), FormatError);
  bad = j;
  bad["benchmark"] = "maxwell";
  CHECK_THROWS_AS(run_config_from_json(bad), FormatError);
  bad = j;
  bad["distill"]["k_max"] = 0;
  CHECK_THROWS_AS(run_config_from_json(bad), FormatError);
}

TEST_CASE("median latency") {
  int calls = 0;
  CHECK(median_latency_ms([&] { ++calls; }, 33) >= 0.0);
  CHECK(calls == 33);
  CHECK_THROWS_AS(median_latency_ms([] {}, 0), ContractViolation);
}

TEST_CASE("end-to-end toy run") {
  const fs::path dir = fresh_dir("e2e");
  CHECK_THROWS_AS(run(dir, "eval"), DependencyError);  // no student yet
  CHECK_THROWS_AS(run(dir, "report"), DependencyError);
  run(dir, "gen-data");
  CHECK(read_dataset(dir / "data" / "train.bin").samples.size() == 48);
  run(dir, "train-teacher");
  run(dir, "distill");
  run(dir, "distill", {{"distill.lambda_phys", "0"}}, "student", 0, "l0");
  run(dir, "eval");
  run(dir, "eval", {}, "teacher");
  run(dir, "eval", {}, "student", 2, "l0");
  run(dir, "sample", {}, "student", 1);
  run(dir, "cond-train");
  run(dir, "cond-eval");
  run(dir, "report");

  // artifacts are never overwritten
  CHECK_THROWS_AS(run(dir, "train-teacher"), DependencyError);
  CHECK_THROWS_AS(run(dir, "eval"), DependencyError);

  const auto lines = csv_lines(dir / "report.csv");
  REQUIRE(lines.size() == 1 + 4 + 1 + 2);
  CHECK(lines[0] == "method,steps,rms_pde_error,swd,sqrt_mmd2,latency_ms");
  CHECK(lines[1].rfind("student,1,", 0) == 0);
  CHECK(lines[5].rfind("student-l0,2,", 0) == 0);
  CHECK(lines[6].rfind("teacher,4,", 0) == 0);
  CHECK(lines[7].rfind("teacher,6,", 0) == 0);

  std::ifstream js(dir / "report.json");
  const auto summary = nlohmann::json::parse(js);
  CHECK(summary["k_sequence"]["student"].size() == 4);
  CHECK(summary["k_sequence"]["student-l0"].size() == 4);
  CHECK(summary["k_sequence"]["student-l0"][0].is_null());
  CHECK(summary["teacher_reference"]["4"].is_number());

  // the stored config is verified on every later command
  {
    std::ofstream(dir / "config.hash") << "0000000000000000\n";
  }
  CHECK_THROWS_AS(run(dir, "report"), FormatError);

  const auto cond = csv_lines(dir / "eval" / "cond-forward.csv");
  REQUIRE(cond.size() == 2);
  CHECK(cond[0] == "task,rel_error,abs_error,rms_pde_error,steps");
  CHECK(read_dataset(dir / "cond" / "pairs-forward-train.bin").extra_channels == 2);
}

TEST_CASE("identical config and seed give identical rows") {
  std::vector<std::vector<std::string>> rows;
  for (const char* name : {"det_a", "det_b"}) {
    const fs::path dir = fresh_dir(name);
    run(dir, "gen-data");
    run(dir, "train-teacher");
    run(dir, "distill");
    run(dir, "eval", {}, "student", 1);
    run(dir, "report");
    auto lines = csv_lines(dir / "report.csv");
    for (auto& l : lines) l = without_latency(l);
    rows.push_back(lines);
  }
  CHECK(rows[0] == rows[1]);
}

TEST_CASE("error records") {
  const DependencyError dep("missing prerequisite artifact: x");
  const auto r = error_record(dep, "eval");
  CHECK(r["error"] == "dependency_error");
  CHECK(r["command"] == "eval");
  CHECK(exit_status(dep) != 0);
  const TrainingFailure tf("nan", 7);
  CHECK(error_record(tf, "distill")["step"] == 7);
  CHECK(exit_status(tf) != exit_status(dep));
}
