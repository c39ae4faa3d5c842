#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cms/data.hpp"
#include "cms/trainer.hpp"

namespace cms::app {

/// Config keys are the long flag names without the leading dashes.
using KeyValues = std::map<std::string, std::string>;

enum class Method { kWardMeanShift, kSemiSupervisedKMeans };

std::string_view to_string(Method method);
Method parse_method(std::string_view token);

/// Everything a run can be configured with. head.in_dim is filled from the
/// embedding bank once it is loaded.
struct RunSettings {
  SyntheticConfig synthetic;
  TrainConfig train;
  InferenceConfig infer;
  Method method = Method::kWardMeanShift;
  std::optional<Preset> preset;
  std::size_t threads = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

RunSettings default_settings();

/// All keys accepted in config files and as --flags.
const std::vector<std::string>& config_keys();

/// Parses `key=value` lines; '#' starts a comment, blank lines are skipped.
KeyValues parse_key_values(std::string_view text);
KeyValues load_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& values);

/// Sets one key. Unknown keys and malformed values are validation errors.
void apply_setting(RunSettings& settings, const std::string& key, const std::string& value);

/// Layers, lowest priority first: built-in defaults, `base` (for example the
/// metadata of a checkpoint), the preset, the config file, then flags. The
/// preset itself may be chosen in the file or by a flag.
RunSettings resolve_settings(const KeyValues& file, const KeyValues& flags, const KeyValues& base = {});

/// One-line echo of the resolved hyperparameters for log headers.
std::string describe(const RunSettings& settings);

}  // namespace cms::app
