#pragma once

// Human-readable (JSON) run and scene configuration. Parsers reject unknown keys so a
// misspelled option fails loudly instead of silently keeping its default.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "geoseg/segnet.hpp"
#include "geoseg/synth.hpp"
#include "geoseg/trainer.hpp"

namespace geoseg {

/// Everything `train` needs besides the dataset.
struct RunConfig {
  TrainConfig train;
  int levels = 3;         // network depth; classes and extents come from the dataset
  int base_features = 8;
  bool use_propagation = true;  // supervise U with propagated annotations
  std::optional<std::uint64_t> init_seed;  // weight initialization; defaults to train.seed

  NetConfig net_config(int num_classes, int height, int width) const;
  std::uint64_t weight_seed() const { return init_seed.value_or(train.seed); }
};

/// Parses a run config. Missing keys keep their defaults.
RunConfig parse_run_config(const std::string& text, const std::string& where);
/// Fully resolved config as JSON.
std::string to_json(const RunConfig& config);

/// Input of `gen-synth`: scenes by role plus generation options.
struct SynthConfig {
  std::vector<SceneSpec> annotated, unannotated, generalization;
  GenerateOptions options;  // options.unannotated / generalization are filled from the lists
};

/// Accepts explicit scenes ("scenes": [...], each with a "role") and/or a procedural
/// benchmark ("benchmark": {"sequences", "unannotated", "generalization", "frames"}).
/// An empty document yields the default desk benchmark. `seed` drives procedural rooms.
SynthConfig parse_synth_config(const std::string& text, const std::string& where, std::uint64_t seed);
/// Fully resolved config, every scene spelled out.
std::string to_json(const SynthConfig& config);

}  // namespace geoseg
