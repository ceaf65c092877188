#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xraft/dataset.hpp"
#include "xraft/evaluation.hpp"
#include "xraft/model.hpp"
#include "xraft/training.hpp"

namespace xraft {

/// Everything a command-line run needs. Text form is flat `key = value`
/// lines with dotted keys such as `train.batch_size`; `#` starts a comment.
struct RunConfig {
  std::uint64_t seed = 0;
  SynthConfig synth;
  ModelConfig model;
  PretrainConfig pretrain;
  TrainConfig train;
  DeformRecipe eval;  // its seed is derived from `seed`
  double render_threshold = kDiscrepancyThreshold;

  std::string data;     // dataset directory holding manifest.txt
  std::string base;     // base checkpoint
  std::string teacher;  // teacher checkpoint; empty means the base
  std::string xraft;    // finetuned checkpoint

  // Copies `seed` into every seeded component.
  void apply_seed(std::uint64_t s);
  // Validation recipe for finetuning: eval recipe with its own seed.
  DeformRecipe validation_recipe() const;
  void validate() const;
};

// Unknown keys, repeated keys and malformed values raise ConfigError naming
// the line.
RunConfig parse_run_config(const std::string& text, const std::string& origin = "config");
RunConfig read_run_config(const std::filesystem::path& path);

// Every key with its current value, in a stable order; parses back to the
// same configuration.
std::string format_run_config(const RunConfig& config);
std::vector<std::string> run_config_keys();

}  // namespace xraft
