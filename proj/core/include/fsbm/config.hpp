#pragma once

// Run configuration: one INI-style file with sections [scene] [guidance]
// [training] [paths] [eval] [output], plus "section.key=value" overrides.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsbm/matching.hpp"
#include "fsbm/scenes.hpp"

namespace fsbm::config {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  /// Fully resolved scene: the named preset with any geometry overrides.
  scenes::Scene scene = scenes::stunnel_scene();

  double alpha = 0.0;
  Index n_keypoints = 100;
  std::filesystem::path keypoint_file;
  scenes::KeypointOptions keypoints;

  matching::TrainConfig training;
  bool has_seed = false;

  Index n_eval = 2048;
  std::vector<scenes::InitialCondition> eval_conditions{std::begin(scenes::kAllInitialConditions),
                                                        std::end(scenes::kAllInitialConditions)};
  /// Subset of {"w2", "kl"}; kl is only reported for the opinion scene.
  std::vector<std::string> metrics{"w2"};

  std::filesystem::path output_dir = "runs";
};

/// Parses INI text, applies overrides in order and validates. Unknown
/// sections or keys are errors.
RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {});
RunConfig load_config(const std::filesystem::path& file,
                      const std::vector<std::string>& overrides = {});

/// Every field written explicitly; parse_config(to_ini(c)) reproduces c.
std::string to_ini(const RunConfig& config);

/// Throws ConfigError: counts >= 1, alpha >= 0, consistent dimensions.
void validate(const RunConfig& config);

/// The seed is mandatory for training.
void require_seed(const RunConfig& config);

}  // namespace fsbm::config
