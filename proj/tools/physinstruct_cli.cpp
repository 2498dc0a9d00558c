#include <iostream>

#include <CLI11.hpp>

#include "physinstruct/errors.hpp"
#include "physinstruct/harness.hpp"

using namespace physinstruct;

int main(int argc, char** argv) {
  CLI::App app{"physics-guided diffusion distillation toolkit"};
  app.require_subcommand(1);

  Invocation inv;
  std::string config, out;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> benchmark, method;
  std::optional<double> lambda_phys, sigma_init;
  std::optional<Index> k_max, guidance_start;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "generate train/test datasets"},
      {"train-teacher", "train the multi-step teacher"},
      {"distill", "distill the teacher into a few-step student"},
      {"sample", "write generated samples"},
      {"eval", "score a model against held-out data"},
      {"cond-train", "train a conditional branch on the student"},
      {"cond-eval", "evaluate a conditional branch"},
      {"report", "collect eval records into report.csv / report.json"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--out", out, "run directory")->required();
    sub->add_option("--config", config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--set", sets, "dotted override key=value (repeatable)");
    sub->add_option("--seed", seed, "root seed");
    sub->add_option("--benchmark", benchmark, "darcy|poisson|helmholtz|navier_stokes|burgers");
    sub->add_option("--steps", inv.steps, "training steps, or sampling steps for sample/eval");
    sub->add_option("--lambda-phys", lambda_phys, "physics weight of distillation");
    sub->add_option("--sigma-init", sigma_init, "student initial noise level");
    sub->add_option("--k-max", k_max, "largest student step count");
    sub->add_option("--guidance-start", guidance_start, "generator updates before the physics term starts");
    sub->add_option("--method", method, "student sampler")->check(CLI::IsMember({"euler", "heun"}));
    sub->add_option("--baseline", inv.baseline, "teacher sampling")->check(CLI::IsMember({"plain", "guided"}));
    sub->add_option("--model", inv.model, "student or teacher")->check(CLI::IsMember({"student", "teacher"}));
    sub->add_option("--tag", inv.tag, "artifact name suffix");
  }
  CLI11_PARSE(app, argc, argv);
  inv.command = app.get_subcommands().front()->get_name();
  inv.out = out;
  inv.config_file = config;

  if (seed) inv.overrides.emplace_back("seed", std::to_string(*seed));
  if (benchmark) inv.overrides.emplace_back("benchmark", *benchmark);
  if (lambda_phys) inv.overrides.emplace_back("distill.lambda_phys", nlohmann::json(*lambda_phys).dump());
  if (sigma_init) inv.overrides.emplace_back("distill.sigma_init", nlohmann::json(*sigma_init).dump());
  if (k_max) inv.overrides.emplace_back("distill.k_max", std::to_string(*k_max));
  if (guidance_start) inv.overrides.emplace_back("distill.guidance_start", std::to_string(*guidance_start));
  if (method) inv.overrides.emplace_back("distill.method", *method);

  try {
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw FormatError("--set expects key=value, got '" + s + "'");
      inv.overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    run_command(inv);
  } catch (const std::exception& e) {
    std::cerr << error_record(e, inv.command).dump() << std::endl;
    return exit_status(e);
  }
  return 0;
}
