#pragma once

// Subcommand implementations behind the CLI: dataset generation, training,
// evaluation, ablation sweeps, and a sampling demo. Every write into --out is
// deterministic for a fixed config and seed; run-manifest.json is never
// overwritten without force.

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskdiff/config.hpp"

namespace maskdiff {

inline constexpr const char* kToolName = "maskdiff";
inline constexpr const char* kToolVersion = "0.1.0";

struct CommonOptions {
  std::optional<std::string> out_dir;
  bool force = false;
  bool json = false; // machine-readable stdout
};

// Creates the directory if absent and writes run-manifest.json capturing the
// command, the fully resolved config, its hash, and the master seed. Throws
// IoError if the manifest exists and force is unset.
void write_run_manifest(const std::string& out_dir, const std::string& command,
                        const RunConfig& cfg, bool force);

// gen-data: writes train-pairs.jsonl and heldout-pairs.jsonl.
int run_gen_data(const RunConfig& cfg, const CommonOptions& opts);

// train: streams metrics.jsonl, saves params.bin and ref.bin, prints the
// final metrics record.
int run_train_command(const RunConfig& cfg, const CommonOptions& opts);

// eval: scores held-out pairs with params from params_path (fresh init when
// absent, in which case theta equals the reference). Writes eval.json when
// --out is given.
int run_eval_command(const RunConfig& cfg, const CommonOptions& opts,
                     const std::optional<std::string>& params_path,
                     const std::optional<std::string>& ref_path);

// ablate: one train+evaluate per axis value on the shared data seed; writes
// results.csv. base_doc is the resolved config document the axis sweeps over.
int run_ablate(const nlohmann::json& base_doc, const CommonOptions& opts, const std::string& axis,
               const std::vector<std::string>& values);

// demo-sample: prints per-step unmask traces for `count` sampled
// trajectories; writes demo-trace.json when --out is given.
int run_demo_sample(const RunConfig& cfg, const CommonOptions& opts, int count,
                    const std::optional<std::string>& params_path);

// Dotted config key swept by an ablation axis; throws ConfigError for an
// unknown axis.
std::string ablation_axis_key(const std::string& axis);

} // namespace maskdiff
