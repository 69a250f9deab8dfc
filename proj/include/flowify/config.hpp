#pragma once
// Run configuration: dataset, model layer list, training options.

#include <string>
#include <vector>

#include "flowify/data.hpp"
#include "flowify/model.hpp"
#include "flowify/trainer.hpp"

namespace flowify {

struct DatasetSpec {
  /// toy2d | idx_images | csv_tabular
  std::string kind = "toy2d";
  std::string path;
  double test_fraction = 0.1;
  /// Keep at most this many rows before splitting (0 keeps all).
  std::size_t max_rows = 0;
  /// csv_tabular only; statistics come from the train split.
  bool standardize = true;
  /// toy2d only.
  std::size_t samples = 6000;
  std::vector<MixtureComponent> components;

  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);
};

/// Two well-separated isotropic components, the default toy2d mixture.
std::vector<MixtureComponent> default_toy_mixture();

/// Loads (or draws) the data and splits it with `seed`.
/// Throws DataError / ParseError for unreadable inputs.
Split load_dataset(const DatasetSpec& spec, std::uint64_t seed);

struct RunConfig {
  std::string name = "run";
  DatasetSpec dataset;
  /// Explicit layer list (presets are expanded on load).
  nlohmann::json layers = nlohmann::json::array();
  std::string preset;
  bool full_scale = false;
  TrainConfig train;

  /// Effective config; from_json(to_json()) reproduces the run.
  nlohmann::json to_json() const;
  /// Throws ConfigError. Warnings (e.g. full-scale presets) are appended.
  static RunConfig from_json(const nlohmann::json& j, std::vector<std::string>* warnings = nullptr);
};

RunConfig load_run_config(const std::string& path, std::vector<std::string>* warnings = nullptr);

/// Preset names accepted in "model": {"preset": ...}.
std::vector<std::string> preset_names();
/// Layer list of a preset. Full-scale presets need `full_scale`.
nlohmann::json preset_layers(const std::string& name, bool full_scale,
                             std::vector<std::string>* warnings = nullptr);

/// Builds layers from a layer list, starting at `shape` (updated in place).
/// Parameter names are prefixed "<prefix>.<index>".
std::vector<FlowLayerPtr> build_layers(const nlohmann::json& layers, Shape& shape,
                                       const std::string& prefix, Rng& rng);
FlowModel build_model(const nlohmann::json& layers, const Shape& input_shape, std::uint64_t seed);

}  // namespace flowify
