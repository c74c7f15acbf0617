#pragma once

// File formats: keypoint sets, JSON-lines metrics, trajectory CSV and SVG
// snapshots.

#include <filesystem>
#include <string>
#include <vector>

#include "fsbm/guidance.hpp"
#include "fsbm/matching.hpp"
#include "fsbm/scenes.hpp"

namespace fsbm::io {

/// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);

/// Line 1 "FSBM-KP v1 N d T", line 2 the T grid times, then N blocks of T
/// lines with d space-separated values.
void write_keypoints(const std::filesystem::path& file, const guidance::KeypointSet& ks);
guidance::KeypointSet read_keypoints(const std::filesystem::path& file);

/// One JSON object per epoch: epoch, fitted, bm_loss, w2, spline_divergences.
std::string metrics_line(const matching::EpochRecord& record);
void append_metrics(const std::filesystem::path& file, const matching::EpochRecord& record);

/// Snapshot times used for CSV dumps and plots.
inline const std::vector<double> kSnapshotTimes = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};

struct Snapshots {
  std::vector<double> times;
  std::vector<Mat> states;  // n x d per time
};

/// States of the trajectory nearest to each requested time.
Snapshots take_snapshots(const matching::Trajectory& trajectory,
                         const std::vector<double>& times = kSnapshotTimes);

/// Columns t, particle_id, x_0..x_{d-1}; one row per (snapshot, particle).
void write_trajectory_csv(const std::filesystem::path& file, const Snapshots& snapshots);
Snapshots read_trajectory_csv(const std::filesystem::path& file);

/// Scatter of the first two coordinates, one <circle> per particle, plus
/// the scene's obstacles as <polygon> elements.
std::string render_svg(const Mat& points, const scenes::Scene& scene, double t);

/// One SVG per snapshot: <prefix>_t<k>.svg. Returns the written paths.
std::vector<std::filesystem::path> write_snapshot_svgs(const std::filesystem::path& dir,
                                                       const std::string& prefix,
                                                       const Snapshots& snapshots,
                                                       const scenes::Scene& scene);

}  // namespace fsbm::io
