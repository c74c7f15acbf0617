#pragma once

// Bodies of the fsbm subcommands. Each takes a validated RunConfig and
// writes its artifacts under config.output_dir unless told otherwise.

#include <filesystem>
#include <ostream>
#include <stdexcept>

#include "fsbm/config.hpp"

namespace fsbm::cli {

/// Precondition failures that are not config syntax errors (missing files,
/// dimension mismatches).
class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes the keypoint file to `out` (or guidance.keypoint_file, or
/// <output>/keypoints.txt) and prints a pairing summary.
std::filesystem::path generate_keypoints(const config::RunConfig& config,
                                         const std::filesystem::path& out, std::ostream& log);

/// Run directory: config.ini, metrics.jsonl, forward.ckpt, backward.ckpt,
/// summary.csv and trajectories_<ic>.csv.
void train(const config::RunConfig& config, std::ostream& log);

/// <output>/eval: metrics.csv, trajectories_<ic>.csv and plots/<ic>_t<k>.svg.
void eval(const config::RunConfig& config, const std::filesystem::path& checkpoint,
          std::ostream& log);

/// Reference dynamics only, into <output>/reference.
void simulate(const config::RunConfig& config, std::ostream& log);

/// Re-render a trajectory CSV as SVG snapshots in `out_dir`.
void plot(const config::RunConfig& config, const std::filesystem::path& csv,
          const std::filesystem::path& out_dir, std::ostream& log);

}  // namespace fsbm::cli
