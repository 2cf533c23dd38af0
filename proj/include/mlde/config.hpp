#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mlde/training.hpp"

namespace mlde {

/// Everything a command needs: the training settings plus file locations and
/// process-level switches.
struct RunConfig {
  TrainConfig train;
  BackboneKind backbone_kind = BackboneKind::tiny_test;
  std::filesystem::path pretrained_weights;
  std::string pretrained_sha256;
  XavierVariant xavier = XavierVariant::uniform;

  std::filesystem::path train_manifest;
  std::filesystem::path validation_manifest;
  std::filesystem::path eval_manifest;
  std::filesystem::path out_dir = "mlde_out";
  std::filesystem::path checkpoint_dir;  // empty: <out_dir>/checkpoints
  std::filesystem::path roc_svg;         // empty: no plot
  int workers = 0;                       // 0: logical core count
  bool cache_images = true;

  std::filesystem::path checkpoints() const;
  /// Flat key -> value view, the same strings the config file accepts.
  nlohmann::json to_json() const;
};

using Assignment = std::pair<std::string, std::string>;

struct ConfigKey {
  std::string_view name;
  std::string_view type;
  std::string_view description;
};

const std::vector<ConfigKey>& config_schema();

/// Human-readable schema with the default of every key.
std::string render_config_schema();

/// Reads `key = value` lines; `#` starts a comment. Throws ConfigError listing
/// every malformed line.
std::vector<Assignment> read_config_file(const std::filesystem::path& path);

/// Applies assignments in order (later wins) on top of the defaults, then
/// validates. Unknown keys, unparsable values and cross-field violations are
/// all collected into one ConfigError.
RunConfig build_run_config(const std::vector<Assignment>& assignments);

/// Throws ConfigError naming each listed path key that is unset.
void require_keys(const RunConfig& config, std::initializer_list<std::string_view> keys);

}  // namespace mlde
