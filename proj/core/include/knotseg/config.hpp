#pragma once

// TOML run configuration with one table per module. Unknown keys are errors.

#include <filesystem>
#include <string>

#include "knotseg/context.hpp"
#include "knotseg/metrics.hpp"

namespace knotseg {

enum class ThresholdMode : std::uint8_t { PerImage = 0, Global = 1, Fixed = 2 };
const char* to_string(ThresholdMode m);
ThresholdMode threshold_mode_from_string(const std::string& s);

struct EvalConfig {
  ThresholdMetric metric = ThresholdMetric::Accuracy;
  ThresholdMode mode = ThresholdMode::PerImage;
  double fixed_threshold = 0.0;  // on the final score, used by ThresholdMode::Fixed

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct AppConfig {
  /// "autocontext", "expanded", "knotted", or "none" for a single boosted classifier.
  std::string architecture = "knotted";
  ContextConfig context;
  StackRecipe recipe;
  EvalConfig eval;
};

AppConfig parse_config(const std::string& toml_text, const std::string& source = "config");
AppConfig load_config(const std::filesystem::path& path);
std::string to_toml(const AppConfig& cfg);
/// Every default value, as a loadable configuration file.
std::string defaults_toml();

/// Parses "S,m" as superpixel region size and compactness.
void apply_superpixel_flag(AppConfig& cfg, const std::string& value);
/// Parses "h1,h2,..." as snowflake half-sides.
void apply_snowflake_flag(AppConfig& cfg, const std::string& value);

}  // namespace knotseg
