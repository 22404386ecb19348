// maskdiff: desk-scale laboratory for trajectory-reduced preference
// optimization of masked discrete diffusion models.
//
// Exit codes: 0 success, 1 failed check or runtime failure, 2 bad
// configuration or usage, 3 filesystem trouble.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "maskdiff/config.hpp"
#include "maskdiff/harness.hpp"
#include "maskdiff/verify.hpp"

namespace {

using maskdiff::CommonOptions;
using maskdiff::parse_run_config;
using maskdiff::RunConfig;

struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
};

nlohmann::json resolve_doc(const ConfigArgs& args) {
  nlohmann::json doc = maskdiff::default_config_doc();
  if (!args.config_path.empty()) doc.update(maskdiff::load_config_file(args.config_path), true);
  for (const std::string& s : args.overrides) maskdiff::apply_override(doc, s);
  if (args.seed) maskdiff::apply_override(doc, "run.seed=" + std::to_string(*args.seed));
  return doc;
}

void add_config_flags(CLI::App* sub, ConfigArgs& args) {
  sub->add_option("-c,--config", args.config_path, "Config file (.toml or .json)")
      ->check(CLI::ExistingFile);
  sub->add_option("-s,--set", args.overrides, "Override a config key, section.key=value")
      ->take_all();
  sub->add_option("--seed", args.seed, "Master seed (overrides run.seed)");
}

void add_common_flags(CLI::App* sub, CommonOptions& opts) {
  sub->add_option("-o,--out", opts.out_dir, "Output directory");
  sub->add_flag("--force", opts.force, "Overwrite an existing run-manifest.json");
  sub->add_flag("--json", opts.json, "Machine-readable stdout");
}

int run_verify(uint64_t seed, bool full, bool mutate, bool json) {
  maskdiff::VerifyOptions opts;
  opts.seed = seed;
  opts.mutate_ratio = mutate;
  opts.include_training = full;
  const std::vector<maskdiff::CheckResult> checks = maskdiff::run_verify_checks(opts);

  bool all_passed = true;
  for (const maskdiff::CheckResult& c : checks) all_passed = all_passed && c.passed;

  if (json) {
    nlohmann::json report;
    report["seed"] = seed;
    report["all_passed"] = all_passed;
    report["checks"] = nlohmann::json::array();
    for (const maskdiff::CheckResult& c : checks) report["checks"].push_back(c.to_json());
    std::cout << report.dump(2) << "\n";
  } else {
    for (const maskdiff::CheckResult& c : checks) {
      std::cout << (c.passed ? "PASS" : "FAIL") << "  " << c.name
                << "  (tolerance " << nlohmann::json(c.tolerance).dump() << ", observed "
                << nlohmann::json(c.observed).dump() << ", "
                << nlohmann::json(c.seconds).dump() << "s)\n"
                << "      " << c.detail << "\n";
    }
    std::cout << (all_passed ? "all checks passed" : "CHECKS FAILED") << "\n";
  }
  return all_passed ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"masked-diffusion preference-optimization laboratory"};
  app.require_subcommand(1);

  ConfigArgs gen_args;
  CommonOptions gen_opts;
  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic preference dataset");
  add_config_flags(gen, gen_args);
  add_common_flags(gen, gen_opts);

  ConfigArgs train_args;
  CommonOptions train_opts;
  CLI::App* train = app.add_subcommand("train", "Train a policy and stream metrics");
  add_config_flags(train, train_args);
  add_common_flags(train, train_opts);

  ConfigArgs eval_args;
  CommonOptions eval_opts;
  std::optional<std::string> eval_params, eval_ref;
  CLI::App* eval = app.add_subcommand("eval", "Score held-out pairs and rollouts");
  add_config_flags(eval, eval_args);
  add_common_flags(eval, eval_opts);
  eval->add_option("--params", eval_params, "Trained policy parameters (params.bin)")
      ->check(CLI::ExistingFile);
  eval->add_option("--ref", eval_ref, "Reference parameters (ref.bin)")->check(CLI::ExistingFile);

  ConfigArgs ablate_args;
  CommonOptions ablate_opts;
  std::string ablate_axis;
  std::vector<std::string> ablate_values;
  CLI::App* ablate = app.add_subcommand("ablate", "Sweep one config axis, training per value");
  add_config_flags(ablate, ablate_args);
  add_common_flags(ablate, ablate_opts);
  ablate->add_option("--axis", ablate_axis,
                     "Axis: scheduler, k, samples_per_block, projection, lambda, trainable")
      ->required();
  ablate->add_option("--values", ablate_values, "Values to sweep")->required()->take_all();

  ConfigArgs demo_args;
  CommonOptions demo_opts;
  std::optional<std::string> demo_params;
  int demo_count = 3;
  CLI::App* demo = app.add_subcommand("demo-sample", "Print block-by-block unmasking traces");
  add_config_flags(demo, demo_args);
  add_common_flags(demo, demo_opts);
  demo->add_option("--count", demo_count, "Number of trajectories to sample");
  demo->add_option("--params", demo_params, "Policy parameters to sample from")
      ->check(CLI::ExistingFile);

  uint64_t verify_seed = 1;
  bool verify_full = false, verify_mutate = false, verify_json = false;
  CLI::App* verify = app.add_subcommand("verify", "Run the self-contained property checks");
  verify->add_option("--seed", verify_seed, "Master seed for the check streams");
  verify->add_flag("--full", verify_full, "Include the minutes-long training checks");
  verify->add_flag("--json", verify_json, "Machine-readable report");
  verify->add_flag("--mutate", verify_mutate)->group(""); // negative control, hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return maskdiff::run_gen_data(parse_run_config(resolve_doc(gen_args)), gen_opts);
    if (train->parsed())
      return maskdiff::run_train_command(parse_run_config(resolve_doc(train_args)), train_opts);
    if (eval->parsed())
      return maskdiff::run_eval_command(parse_run_config(resolve_doc(eval_args)), eval_opts,
                                        eval_params, eval_ref);
    if (ablate->parsed())
      return maskdiff::run_ablate(resolve_doc(ablate_args), ablate_opts, ablate_axis,
                                  ablate_values);
    if (demo->parsed())
      return maskdiff::run_demo_sample(parse_run_config(resolve_doc(demo_args)), demo_opts,
                                       demo_count, demo_params);
    if (verify->parsed()) return run_verify(verify_seed, verify_full, verify_mutate, verify_json);
  } catch (const maskdiff::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const maskdiff::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
