#pragma once

// Run configuration: a sectioned document ([task], [layout], [objective],
// [scheduler], [optimizer], [run]) accepted as TOML or JSON, overridable from
// the command line with dotted keys. Unknown sections or keys are errors.

#include <stdexcept>
#include <string>

#include <json.hpp>

#include "maskdiff/dataset.hpp"
#include "maskdiff/train.hpp"
#include "maskdiff/types.hpp"

namespace maskdiff {

// Bad configuration (exit code 2) versus filesystem trouble (exit code 3).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  SyntheticTaskConfig task;
  int num_blocks = 2;
  int steps_per_block = 4;
  int block_size = 4;
  TrainConfig train;

  BlockLayout layout() const { return BlockLayout(num_blocks, steps_per_block, block_size); }
};

// The built-in defaults as a document; file and overrides merge onto this.
nlohmann::json default_config_doc();

// Parse TOML-subset text (sections, scalar and scalar-array values) into the
// document shape. Line numbers are reported in errors.
nlohmann::json parse_toml_config(const std::string& text);

// Reads .json or .toml by extension, sniffing the content when ambiguous.
nlohmann::json load_config_file(const std::string& path);

// Applies one --set override, "section.key=value"; the value is parsed like a
// TOML scalar with a bare-string fallback.
void apply_override(nlohmann::json& doc, const std::string& key_equals_value);

// Validates and materializes the typed configuration. Every key is checked:
// unknown keys, type mismatches, and out-of-range values raise ConfigError.
RunConfig parse_run_config(const nlohmann::json& doc);

// Fully resolved round-trip of a typed config; parse_run_config of this is an
// identity. Written into run manifests.
nlohmann::json config_to_doc(const RunConfig& cfg);

// FNV-1a over the canonical dump; manifests carry it so runs can be compared.
std::string config_hash(const nlohmann::json& doc);

} // namespace maskdiff
