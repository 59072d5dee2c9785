#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dro/classifiers.hpp"
#include "dro/data.hpp"
#include "dro/router.hpp"

namespace dro::cli {

enum class SeedMode { common, derived };

struct SweepConfig {
  std::vector<double> lambda_grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 0.8, 0.9, 1.0};
  std::vector<double> mu_grid = {1.0, 3.0, 5.0, 7.0, 9.0};
  double fixed_mu = 4.0;                 // mu held during the lambda series
  std::optional<double> best_lambda;     // overrides the automatic choice
  bool full_grid = false;
  SeedMode seed_mode = SeedMode::common;
};

struct RunConfig {
  data::IntentClasses intent_classes = data::IntentClasses::both;
  bool fail_fast = false;
  double train_fraction = 0.6;
  double validation_fraction = 0.2;
  data::SyntheticSpec synthetic;
  router::RouterConfig router;
  clf::ClassifierConfig classifier;
  SweepConfig sweep;
};

// The schema shipped as configs/run_config.schema.json.
const nlohmann::json& run_config_schema();

// Checks `doc` against the subset of JSON Schema the run config uses
// (type, enum, required, properties, additionalProperties, items, minItems,
// minimum/maximum and their exclusive forms). Throws ConfigError naming the
// offending JSON pointer.
void validate_schema(const nlohmann::json& doc, const nlohmann::json& schema);

nlohmann::json to_json(const RunConfig& config);

// Overlays `overrides` onto the defaults, validates the merged document and
// converts it. Objects merge key by key; every other value replaces.
RunConfig resolve_config(const nlohmann::json& overrides);
RunConfig load_config(const std::optional<std::filesystem::path>& path);

} // namespace dro::cli
